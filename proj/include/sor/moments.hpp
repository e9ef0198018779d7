#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sor/types.hpp"

namespace sor {

enum class Method { Cc, Ipw, Reg, Dr, Calibration };

Method method_from_name(const std::string& name);  // ConfigError on unknown
std::string method_name(Method m);

// Packing between ParameterState and the solver's flat vector. Calibration
// uses the common-slope layout: alpha1 is packed in full, alpha2 contributes
// only its intercept and shares alpha1's slopes on unpacking.
struct ParameterLayout {
  enum class Mode { Full, CommonSlope } mode = Mode::Full;
  int d_alpha1 = 0, d_alpha2 = 0, d_gamma = 0, d_beta = 0;
  bool has_beta = false, has_alpha2 = false, has_alpha1 = true;
  int d_target = 1;
  std::string target_label = "mu";

  int dim() const;
  std::vector<std::string> names() const;
  Eigen::VectorXd pack(const ParameterState& s) const;
  ParameterState unpack(const Eigen::VectorXd& p) const;
  int target_offset() const { return dim() - d_target; }
};

// A stacked system of exactly-identified empirical moment equations
//   0 = (1/n) sum_i g(record_i; p).
// prepare(p) refreshes any record-independent per-sweep cache (quadrature
// tilt constants etc.); eval(i, p, out) then writes record i's contribution.
// Implementations never read a missing outcome: every term multiplying y
// carries an indicator coefficient that vanishes when r2 = 0.
class MomentSystem {
 public:
  virtual ~MomentSystem() = default;
  int dim() const { return dim_; }
  std::size_t n_records() const { return n_; }
  const ParameterLayout& layout() const { return layout_; }

  virtual void prepare(const Eigen::VectorXd& p) const = 0;
  virtual void eval(std::size_t i, const Eigen::VectorXd& p, double* out) const = 0;

  // prepare + deterministic blocked-pairwise mean (optionally weighted)
  Eigen::VectorXd mean(const Eigen::VectorXd& p,
                       const Eigen::VectorXd* weights = nullptr) const;
  // same, also accumulating mean outer products (sandwich filling)
  void mean_and_outer(const Eigen::VectorXd& p, Eigen::VectorXd& mean,
                      Eigen::MatrixXd& outer,
                      const Eigen::VectorXd* weights = nullptr) const;

 protected:
  int dim_ = 0;
  std::size_t n_ = 0;
  ParameterLayout layout_;
};

// Target block for a general smooth functional: solves for theta in
// 0 = E{ m(X, Y; theta) } using the method's missingness correction.
struct FunctionalSpec {
  int theta_dim = 1;
  std::string label = "theta";
  // writes m(x, y, theta) into out[0..theta_dim)
  std::function<void(const Eigen::VectorXd& x, double y,
                     const Eigen::VectorXd& theta, double* out)>
      m;
  Eigen::VectorXd theta_start;  // optional; zeros when empty
};

// Builds the stacked system for the outcome-mean target. The factory checks
// exact identification (total equation dimension == packed parameter
// dimension) and validates the working models against the data; ConfigError
// on breach.
std::unique_ptr<MomentSystem> make_mean_system(Method method, const Dataset& data,
                                               const WorkingModelSpec& spec);

// Same nuisance blocks with the mean block replaced by the functional block.
std::unique_ptr<MomentSystem> make_functional_system(Method method,
                                                     const Dataset& data,
                                                     const WorkingModelSpec& spec,
                                                     const FunctionalSpec& fn);

// Anchored starting values: alpha1 from a logistic fit of r1 on a1-features
// (all records), alpha2 from a logistic fit of r2 among first-call misses,
// (beta, sigma) from least squares of y on outcome-features among callback
// respondents, gamma = 0, target = complete-case mean.
ParameterState starting_values(Method method, const Dataset& data,
                               const WorkingModelSpec& spec);

// Small fitters used for the starts (exposed for tests).
Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& feats_cols,
                             const std::vector<std::uint8_t>& target);
std::pair<Eigen::VectorXd, double> least_squares_fit(
    const Eigen::MatrixXd& feats_cols, const Eigen::VectorXd& y);

}  // namespace sor
