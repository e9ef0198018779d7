#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sor {

// One survey record from a two-call contact design. r1 flags a first-call
// response, r2 a response by either call, so r2 >= r1 always. The outcome is
// present exactly when r2 is set; it is never stored (or read) otherwise.
struct ObservationRecord {
  Eigen::VectorXd x;        // covariates; by convention x[0] == 1 ("const")
  std::optional<double> y;  // outcome, present iff r2
  bool r1 = false;
  bool r2 = false;
};

struct Dataset {
  std::vector<ObservationRecord> records;
  std::vector<std::string> covariate_names;

  std::size_t n() const { return records.size(); }
  int xdim() const { return records.empty() ? 0 : static_cast<int>(records.front().x.size()); }
};

struct ValidationIssue {
  // record index for record-level breaches; empty for dataset-level ones
  std::optional<std::size_t> record;
  std::string rule;
};

// Reports every invariant violation; never throws, never mutates.
// Record-level rules: r2 >= r1; y present iff r2; finite covariates;
// constant covariate dimension. Dataset-level rules: n >= 1 and all three
// call-pattern strata (r1, r1==0&&r2, r2==0) nonempty.
std::vector<ValidationIssue> validate_dataset(const Dataset& data);

// ---------------------------------------------------------------------------
// Feature maps. Designs receive the covariate vector as stored; an intercept
// is a feature the map emits (or a const column in the data), never implicit.

enum class XMapKind { Linear, Squares, LinearSquares, InterceptOnly, Custom };

struct XMap {
  XMapKind kind = XMapKind::Linear;
  std::string name = "linear";
  int custom_dim = 0;
  std::function<void(const Eigen::VectorXd&, double*)> custom;

  int out_dim(int xdim) const;
  void eval(const Eigen::VectorXd& x, double* out) const;
  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
};

// Named registry used by the CLI and the simulator.
//   "linear"          -> x as given
//   "squares"         -> (x0, x1^2, ..., x_{d-1}^2)
//   "linear+squares"  -> (x, x1^2, ..., x_{d-1}^2)
//   "intercept-only"  -> (1)
XMap x_map(const std::string& name);

// Odds-ratio design: features of (x, y) with the identification-side
// normalization g(x, 0) = 0 (checked by WorkingModelSpec::validate).
enum class GammaMapKind { LinearY, Custom };

struct GammaMap {
  GammaMapKind kind = GammaMapKind::LinearY;
  std::string name = "linear-y";
  int custom_dim = 0;
  std::function<void(const Eigen::VectorXd&, double, double*)> custom;

  int dim() const { return kind == GammaMapKind::LinearY ? 1 : custom_dim; }
  void eval(const Eigen::VectorXd& x, double y, double* out) const;
  Eigen::VectorXd operator()(const Eigen::VectorXd& x, double y) const;
};

// Free-form instrument over (x, y); no vanishing constraint.
struct XYMap {
  std::string name;
  int dim = 0;
  std::function<void(const Eigen::VectorXd&, double, double*)> eval;
};

// ---------------------------------------------------------------------------
// Working models for estimation:
//   pi1(x,y) = expit(alpha1' a1(x) + gamma' g(x,y))
//   pi2(x,y) = expit(alpha2' a2(x) + gamma' g(x,y))
//   f2(y|x)  = Normal(beta' outcome(x), sigma^2)   [callback-respondent law]
// Instruments v1/v2/u default to the derivative of the matching linear
// predictor (a1, a2, and g features respectively) when unset.
struct WorkingModelSpec {
  XMap a1, a2, outcome;
  GammaMap gamma_map;
  std::optional<XMap> v1, v2;
  std::optional<XYMap> u;
  int quadrature_order = 64;

  // Canonical description; hashed into the report fingerprint.
  std::string description() const;

  // Checks map dimensions against xdim and g(x,0)=0 at 100 seeded x draws.
  // Throws ConfigError on breach.
  void validate(int xdim) const;
};

// Fowler–Noll–Vo hash of the canonical spec description, hex-encoded.
std::string spec_fingerprint(const WorkingModelSpec& spec);

// Full parameter state for the stacked estimating systems. `target` holds
// the parameter of interest (the outcome mean, or a functional's theta).
struct ParameterState {
  Eigen::VectorXd alpha1, alpha2, gamma, beta;
  double sigma = 1.0;
  Eigen::VectorXd target;
};

}  // namespace sor
