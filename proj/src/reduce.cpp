#include "sor/reduce.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace sor {
namespace {

constexpr std::size_t kLeaf = 1024;

thread_local bool g_inside_parallel = false;

struct LeafRange {
  std::size_t begin, end;
};

std::vector<LeafRange> leaves_for(std::size_t n) {
  std::vector<LeafRange> leaves;
  leaves.reserve(n / kLeaf + 1);
  for (std::size_t b = 0; b < n; b += kLeaf)
    leaves.push_back({b, std::min(n, b + kLeaf)});
  return leaves;
}

// Runs fn(leaf_index) for every leaf, on up to thread_count() workers.
// Leaf results are stored by index, so scheduling never affects output.
void run_leaves(std::size_t n_leaves, const std::function<void(std::size_t)>& fn) {
  int workers = g_inside_parallel ? 1 : thread_count();
  if (workers <= 1 || n_leaves <= 1) {
    for (std::size_t l = 0; l < n_leaves; ++l) fn(l);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    g_inside_parallel = true;
    for (std::size_t l; (l = next.fetch_add(1)) < n_leaves;) fn(l);
    g_inside_parallel = false;
  };
  std::vector<std::thread> pool;
  int count = static_cast<int>(std::min<std::size_t>(workers, n_leaves));
  pool.reserve(count);
  for (int t = 0; t < count - 1; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

// In-place pairwise tree merge over leaf index order: deterministic for any
// worker count because the tree shape depends only on the leaf count.
template <typename T>
void pairwise_merge(std::vector<T>& items) {
  std::size_t count = items.size();
  while (count > 1) {
    std::size_t half = (count + 1) / 2;
    for (std::size_t i = 0; i + half < count; ++i) items[i] += items[i + half];
    count = half;
  }
}

}  // namespace

int thread_count() {
  static const int cached = [] {
    if (const char* env = std::getenv("SOR_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return cached;
}

void parallel_for_blocks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  auto leaves = leaves_for(n);
  run_leaves(leaves.size(), [&](std::size_t l) { body(leaves[l].begin, leaves[l].end); });
}

void blocked_mean(std::size_t n, int dim,
                  const std::function<void(std::size_t, double*)>& eval,
                  Eigen::VectorXd& mean, const Eigen::VectorXd* weights) {
  auto leaves = leaves_for(n);
  std::vector<Eigen::VectorXd> sums(leaves.size(), Eigen::VectorXd::Zero(dim));
  run_leaves(leaves.size(), [&](std::size_t l) {
    Eigen::VectorXd g(dim);
    Eigen::VectorXd& acc = sums[l];
    for (std::size_t i = leaves[l].begin; i < leaves[l].end; ++i) {
      eval(i, g.data());
      if (weights)
        acc.noalias() += (*weights)(static_cast<Eigen::Index>(i)) * g;
      else
        acc.noalias() += g;
    }
  });
  pairwise_merge(sums);
  double total = weights ? weights->sum() : static_cast<double>(n);
  mean = sums.empty() ? Eigen::VectorXd::Zero(dim) : Eigen::VectorXd(sums[0] / total);
}

void blocked_mean_and_outer(std::size_t n, int dim,
                            const std::function<void(std::size_t, double*)>& eval,
                            Eigen::VectorXd& mean, Eigen::MatrixXd& outer,
                            const Eigen::VectorXd* weights) {
  auto leaves = leaves_for(n);
  std::vector<Eigen::VectorXd> sums(leaves.size(), Eigen::VectorXd::Zero(dim));
  std::vector<Eigen::MatrixXd> outs(leaves.size(), Eigen::MatrixXd::Zero(dim, dim));
  run_leaves(leaves.size(), [&](std::size_t l) {
    Eigen::VectorXd g(dim);
    for (std::size_t i = leaves[l].begin; i < leaves[l].end; ++i) {
      eval(i, g.data());
      double w = weights ? (*weights)(static_cast<Eigen::Index>(i)) : 1.0;
      sums[l].noalias() += w * g;
      outs[l].noalias() += w * (g * g.transpose());
    }
  });
  pairwise_merge(sums);
  pairwise_merge(outs);
  double total = weights ? weights->sum() : static_cast<double>(n);
  mean = sums.empty() ? Eigen::VectorXd::Zero(dim) : Eigen::VectorXd(sums[0] / total);
  outer = outs.empty() ? Eigen::MatrixXd::Zero(dim, dim) : Eigen::MatrixXd(outs[0] / total);
}

}  // namespace sor
