#include "sor/propensity.hpp"

#include <cmath>
#include <stdexcept>

#include "sor/errors.hpp"

namespace sor {

double expit(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("logit: argument must lie strictly inside (0,1)");
  return std::log(p / (1.0 - p));
}

double softplus(double t) {
  if (t >= 0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

PropensityValues propensities(const Eigen::VectorXd& x, double y,
                              const WorkingModelSpec& spec,
                              const ParameterState& params) {
  const int d = static_cast<int>(x.size());
  const int d1 = spec.a1.out_dim(d), d2 = spec.a2.out_dim(d),
            dg = spec.gamma_map.dim();
  if (params.alpha1.size() != d1)
    throw ConfigError("propensities: alpha1 dimension mismatch");
  if (params.alpha2.size() != d2)
    throw ConfigError("propensities: alpha2 dimension mismatch");
  if (params.gamma.size() != dg)
    throw ConfigError("propensities: gamma dimension mismatch");

  Eigen::VectorXd f1(d1), f2(d2), g(dg);
  spec.a1.eval(x, f1.data());
  spec.a2.eval(x, f2.data());
  spec.gamma_map.eval(x, y, g.data());
  const double shared = params.gamma.dot(g);

  PropensityValues out;
  out.pi1 = expit(params.alpha1.dot(f1) + shared);
  out.pi2 = expit(params.alpha2.dot(f2) + shared);
  out.p2 = out.pi1 + out.pi2 * (1.0 - out.pi1);
  return out;
}

double odds_ratio(const Eigen::VectorXd& x, double y,
                  const WorkingModelSpec& spec, const Eigen::VectorXd& gamma) {
  const int dg = spec.gamma_map.dim();
  if (gamma.size() != dg) throw ConfigError("odds_ratio: gamma dimension mismatch");
  Eigen::VectorXd g(dg);
  spec.gamma_map.eval(x, y, g.data());
  return gamma.dot(g);
}

}  // namespace sor
