#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>

#include "sor/types.hpp"

namespace sor {

// Gauss–Hermite rule for weight exp(-t^2): integral f(t)exp(-t^2) dt
// ~= sum_i w_i f(t_i). Supported orders: 16, 32, 64, 96 (ConfigError
// otherwise). Nodes are symmetrized so odd moments vanish exactly; rules are
// computed once (Golub–Welsch) and cached.
struct GaussHermiteRule {
  Eigen::VectorXd nodes, weights;
};
const GaussHermiteRule& gauss_hermite_rule(int order);

// Conditional Gaussian law of the outcome among callback respondents at a
// fixed covariate point: Y | x ~ Normal(mean, sigma^2).
struct TiltedGaussian {
  double mean = 0;
  double sigma = 1;
};

// E{ g(Y) | x, nonrespondent } under the exponentially tilted law
//   f(y | x, R2=0)  proportional to  exp(-gamma' g(x,y)) f2(y | x),
// computed with the substitution y = mean + sqrt(2)*sigma*t on the
// Gauss–Hermite grid. The tilt factor is stabilized by exp(+Gamma(x, mean)).
// Throws SolverError if the normalizer degenerates (< 1e-300 or non-finite).
double tilted_expectation(const std::function<double(double)>& g,
                          const TiltedGaussian& law, const Eigen::VectorXd& x,
                          const WorkingModelSpec& spec,
                          const Eigen::VectorXd& gamma, int order = 0);

// Vector-valued variant: g writes `dim` values per node.
Eigen::VectorXd tilted_expectation_vec(
    const std::function<void(double, double*)>& g, int dim,
    const TiltedGaussian& law, const Eigen::VectorXd& x,
    const WorkingModelSpec& spec, const Eigen::VectorXd& gamma, int order = 0);

// Closed form of the tilted mean, available exactly when the odds-ratio
// design is the single feature (y): tilting a Normal(m, s^2) by exp(-g*y)
// is again Gaussian with mean m - g*s^2. Returns nullopt otherwise.
std::optional<double> closed_form_tilted_mean(const TiltedGaussian& law,
                                              const WorkingModelSpec& spec,
                                              const Eigen::VectorXd& gamma);

// Augmentation ratio for the doubly robust mean:
//   E{ Y / pi2(x,Y) | x, R2=0 } / E{ 1 / pi2(x,Y) | x, R2=0 },
// both expectations under the tilted law above, with pi2 evaluated from the
// working propensity model at `params`.
double dr_regression_ratio(const Eigen::VectorXd& x,
                           const WorkingModelSpec& spec,
                           const ParameterState& params);

}  // namespace sor
