#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sor/moments.hpp"

namespace sor {

struct SolveOptions {
  double tol = 1e-10;        // residual max-norm convergence threshold
  int max_iter = 200;
  int max_halvings = 30;
  double fd_rel = 1e-6;      // central-difference relative step
  double fd_abs = 1e-8;      // absolute step floor
  double cond_limit = 1e12;  // Jacobian condition estimate above => singular
};

struct SolveResult {
  Eigen::VectorXd packed;
  ParameterState state;
  bool converged = false;
  int iterations = 0;
  double max_residual = 0;
  double jacobian_condition = 0;       // estimate at the last factored Jacobian
  std::vector<double> residual_path;   // max-norm per iteration
  int nonmonotone_steps = 0;           // accepted steps that did not decrease
  std::string failure_reason;
};

// Damped Newton on the stacked empirical moments, with a central finite-
// difference Jacobian. Line search halves the step up to max_halvings until
// the residual max-norm decreases; if no trial decreases it, the best finite
// trial is accepted anyway and counted as a non-monotone step. Throws
// SolverError only for a non-finite residual at the starting point; numeric
// failure mid-path (singular Jacobian, no finite trial) is reported through
// converged=false and failure_reason.
SolveResult solve(const MomentSystem& sys, const Eigen::VectorXd& start,
                  const SolveOptions& opts = {},
                  const Eigen::VectorXd* weights = nullptr);

// Sandwich covariance A^{-1} B A^{-T} / n at the root, where A is the
// finite-difference Jacobian of the mean moments and B the mean outer
// product. Symmetrized before returning. Throws SolverError when A's
// condition estimate exceeds opts.cond_limit.
Eigen::MatrixXd sandwich_variance(const MomentSystem& sys,
                                  const Eigen::VectorXd& root,
                                  const SolveOptions& opts = {});

struct BootstrapResult {
  double sd = 0;
  double lo = 0, hi = 0;  // percentile 2.5 / 97.5 (type-7 interpolation)
  int n_fail = 0;
  int b = 0;
  std::vector<double> draws;  // successful refits, in resample order
};

// Nonparametric bootstrap over records. Each resample is passed to `refit`
// as a multiplicity-weight vector (sum = n); refit returns the scalar target
// or nullopt on failure. B must be >= 100 (ConfigError) and the failure rate
// must stay at or below 10% (SolverError).
BootstrapResult bootstrap(
    const std::function<std::optional<double>(const Eigen::VectorXd&)>& refit,
    std::size_t n, int B, std::uint64_t seed);

}  // namespace sor
