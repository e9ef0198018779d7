#pragma once

#include <cstdint>

namespace sor {

// splitmix64: tiny counter-style generator with solid statistical quality.
// Used everywhere randomness is needed so that streams are reproducible
// bit-for-bit from a seed on any platform, independent of the standard
// library's distribution implementations.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform double in [0,1) with 53 random bits
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform double in (-1,1]
  double uniform_pm1() { return 2.0 * uniform01() - 1.0; }

  // uniform integer in [0, n) via 128-bit multiply-shift
  std::uint64_t uniform_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }
};

// Derives an independent child seed from a master seed and a stream index.
// Deterministic; used for per-replication, per-record, and per-resample
// streams so parallel evaluation order can never change results.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  SplitMix64 g(master ^ (0x632be59bd9b4e019ULL * (stream + 1)));
  g.next();
  return g.next();
}

}  // namespace sor
