#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sor/estimators.hpp"
#include "sor/types.hpp"

namespace sor {

// Covariate laws used by the study designs.
//   UnitSquare:   x = (1, U(-1,1), U(-1,1))
//   UnitInterval: x = (1, U(-1,1))
//   IvPair:       x = (1, t, z) with z, v iid U(-1,1) and t = .5 z + .5 v
enum class CovariateLaw { UnitSquare, UnitInterval, IvPair };

// Data-generating process:
//   pi1 = expit(alpha1' x + gamma y)
//   pi2 = expit(alpha2' w1(x) + (gamma + sensitivity_delta) y)
//   f2(y | x, callback respondent) = Normal(beta' w2(x), sigma^2)
// The implied full-outcome law follows from the factorization
//   f(y|x) proportional to f2(y|x) / [ pi2(x,y) (1 - pi1(x,y)) ],
// so the generated callback-respondent stratum is exactly Gaussian by
// construction. sensitivity_delta shifts only the second-call odds-ratio
// slope, breaking stableness of resistance while keeping f2 correct.
struct ScenarioSpec {
  std::string name = "custom";
  Eigen::VectorXd alpha1, alpha2, beta;
  double gamma = 0, sigma = 1;
  XMapKind w1 = XMapKind::Linear, w2 = XMapKind::Linear;
  CovariateLaw law = CovariateLaw::UnitSquare;
  double sensitivity_delta = 0;
  int grid_points = 4096;   // outcome-density table resolution
  double range_sds = 10;    // initial half-range in sigma units
  int max_doublings = 4;

  int xdim() const { return law == CovariateLaw::UnitInterval ? 2 : 3; }
  void validate() const;  // ConfigError on malformed dimensions

  // Named study designs: TT, FT, TF, FF (each letter: second-call propensity
  // model true/false, outcome model true/false) and FIG1-i / FIG1-ii (the
  // single-covariate calibration comparison, equal vs opposite first-call
  // slope).
  static ScenarioSpec named(const std::string& name);
};

// Gridded conditional outcome density at one covariate point: grid centered
// at beta'w2(x) spanning range_sds sigmas (doubled until the boundary density
// falls below 1e-12 of the peak; ConfigError after max_doublings), trapezoid
// normalization, cumulative table for inverse-CDF sampling.
struct DensityTable {
  Eigen::VectorXd y, pdf, cdf;
  double mean = 0;
};
DensityTable conditional_outcome_density(const ScenarioSpec& sc,
                                         const Eigen::VectorXd& x);

// Draws a dataset: covariates from the law, y by linear-interpolated
// inverse CDF on the density table, r1 ~ Bernoulli(pi1), then r2 among
// first-call misses; the outcome is blanked when r2 = 0. Per-record seed
// streams derived from `seed` make the draw independent of evaluation order.
Dataset sample_dataset(const ScenarioSpec& sc, std::size_t n, std::uint64_t seed);

// Population outcome mean under the scenario: covariate-law Gauss–Legendre
// quadrature (64 nodes per dimension) over the density-table conditional
// means. Documented accuracy ~1e-6.
double true_mean(const ScenarioSpec& sc);

struct MetricRow {
  std::string scenario, method, parameter;
  double truth = 0, bias = 0, mc_sd = 0, mean_se = 0, coverage = 0;
  int n_fail = 0, reps = 0;
  bool usable = true;  // false when >20% of replications failed
};

struct RepRow {
  int rep = 0;
  std::string method;
  bool converged = false;
  double mu = 0, mu_se = 0, gamma = 0, gamma_se = 0;
};

struct ReplicationMetrics {
  double truth_mu = 0, truth_gamma = 0;
  std::vector<MetricRow> rows;   // one per (method, parameter)
  std::vector<RepRow> reps;      // plot-ready per-replication estimates
};

// Seeded replication study: per replication, sample n records and run every
// requested method with linear working designs on the stored covariates.
// Replication seeds are pre-derived and results reduced by replication
// index, so metrics are identical for any parallelism degree. Failed solves
// are excluded from the moments and counted.
ReplicationMetrics run_replications(const ScenarioSpec& sc,
                                    const std::vector<Method>& methods,
                                    int reps, std::size_t n, std::uint64_t seed,
                                    const SolveOptions& solve_opts = {});

}  // namespace sor
