#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sor/solve.hpp"

namespace sor {

inline constexpr double kNormalQuantile975 = 1.959964;

struct NuisanceEntry {
  std::string name;
  double estimate = 0, se = 0;
};

struct SolveDiagnostics {
  bool converged = false;
  int iterations = 0;
  double max_residual = 0;
  double jacobian_condition = 0;
  int nonmonotone_steps = 0;
  std::vector<double> residual_path;
  std::string note;  // e.g. degenerate-data fallbacks
};

struct EstimateReport {
  std::string method;
  bool converged = false;
  std::vector<std::string> target_names;
  Eigen::VectorXd estimate, se, ci_lo, ci_hi;  // empty when not converged
  std::optional<BootstrapResult> bootstrap;
  std::vector<NuisanceEntry> nuisance;
  SolveDiagnostics diagnostics;
  std::string spec_fingerprint;
  std::string failure_reason;
};

struct EstimateOptions {
  SolveOptions solve;
  int bootstrap_b = 0;        // 0 = no bootstrap
  std::uint64_t seed = 0;     // bootstrap resampling seed
};

// Point estimate, sandwich SE, and Wald 95% CI for the outcome mean under
// the requested correction. `Cc` is the complete-case mean with the iid
// sample-mean SE. On a fully observed dataset every method returns the
// complete-data estimator (corrections inactive; noted in diagnostics).
// Throws DataError for record-level invariant breaches or a structurally
// unusable stratum pattern; solver failure is reported in the result.
EstimateReport estimate_mean(Method method, const Dataset& data,
                             const WorkingModelSpec& spec,
                             const EstimateOptions& opts = {});

// Same machinery for a general smooth functional 0 = E m(X,Y;theta).
EstimateReport estimate_functional(Method method, const Dataset& data,
                                   const WorkingModelSpec& spec,
                                   const FunctionalSpec& fn,
                                   const EstimateOptions& opts = {});

// Mean outcome among final nonrespondents, derived from a mean report:
//   (mu_hat * n - sum of observed y) / #nonrespondents,
// with the SE obtained by the delta method (the transform is linear in
// mu_hat with slope n / #nonrespondents). DataError when every record
// responded.
EstimateReport nonrespondent_mean(const Dataset& data,
                                  const EstimateReport& mean_report);

}  // namespace sor
