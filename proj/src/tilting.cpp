#include "sor/tilting.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>
#include <mutex>

#include "sor/errors.hpp"
#include "sor/propensity.hpp"

namespace sor {
namespace {

// Golub–Welsch: nodes/weights from the symmetric tridiagonal Jacobi matrix
// of the Hermite recurrence (off-diagonal sqrt(k/2)); weights are
// sqrt(pi) * (first eigenvector component)^2. Nodes are symmetrized across
// +-t pairs so odd-moment sums cancel exactly.
GaussHermiteRule build_rule(int n) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(k / 2.0);
    jac(k, k - 1) = jac(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
  GaussHermiteRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights.resize(n);
  const double sqrt_pi = std::sqrt(std::acos(-1.0));
  for (int k = 0; k < n; ++k) {
    const double v0 = eig.eigenvectors()(0, k);
    rule.weights[k] = sqrt_pi * v0 * v0;
  }
  for (int i = 0, j = n - 1; i < j; ++i, --j) {
    const double t = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    rule.nodes[i] = -t;
    rule.nodes[j] = t;
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.weights[i] = rule.weights[j] = w;
  }
  return rule;
}

struct TiltWeights {
  Eigen::VectorXd y;   // nodes mapped through y = m + sqrt(2) s t
  Eigen::VectorXd om;  // rule weight times stabilized tilt factor
  double total;        // sum of om
};

// Tilt factors exp(-[Gamma(x,y_i) - Gamma(x,m)]); the shift by Gamma(x,m)
// cancels in every ratio and keeps the sums inside double range.
TiltWeights tilt_weights(const TiltedGaussian& law, const Eigen::VectorXd& x,
                         const WorkingModelSpec& spec,
                         const Eigen::VectorXd& gamma, int order) {
  if (order == 0) order = spec.quadrature_order;
  const GaussHermiteRule& rule = gauss_hermite_rule(order);
  const int n = static_cast<int>(rule.nodes.size());
  const int dg = spec.gamma_map.dim();
  if (gamma.size() != dg)
    throw ConfigError("tilted_expectation: gamma dimension mismatch");

  TiltWeights tw;
  tw.y.resize(n);
  tw.om.resize(n);
  const double ct = std::sqrt(2.0) * law.sigma;
  Eigen::VectorXd g(dg), g0(dg);
  spec.gamma_map.eval(x, law.mean, g0.data());
  const double shift = gamma.dot(g0);
  for (int i = 0; i < n; ++i) {
    tw.y[i] = law.mean + ct * rule.nodes[i];
    spec.gamma_map.eval(x, tw.y[i], g.data());
    tw.om[i] = rule.weights[i] * std::exp(-(gamma.dot(g) - shift));
  }
  tw.total = tw.om.sum();
  if (!(tw.total > 1e-300) || !std::isfinite(tw.total))
    throw SolverError("tilted expectation: degenerate normalizer");
  return tw;
}

}  // namespace

const GaussHermiteRule& gauss_hermite_rule(int order) {
  if (order != 16 && order != 32 && order != 64 && order != 96)
    throw ConfigError("gauss_hermite_rule: supported orders are 16, 32, 64, 96");
  static std::mutex mu;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, build_rule(order)).first;
  return it->second;
}

double tilted_expectation(const std::function<double(double)>& g,
                          const TiltedGaussian& law, const Eigen::VectorXd& x,
                          const WorkingModelSpec& spec,
                          const Eigen::VectorXd& gamma, int order) {
  TiltWeights tw = tilt_weights(law, x, spec, gamma, order);
  double num = 0;
  for (int i = 0; i < tw.y.size(); ++i) num += tw.om[i] * g(tw.y[i]);
  const double out = num / tw.total;
  if (!std::isfinite(out)) throw SolverError("tilted expectation: non-finite value");
  return out;
}

Eigen::VectorXd tilted_expectation_vec(
    const std::function<void(double, double*)>& g, int dim,
    const TiltedGaussian& law, const Eigen::VectorXd& x,
    const WorkingModelSpec& spec, const Eigen::VectorXd& gamma, int order) {
  TiltWeights tw = tilt_weights(law, x, spec, gamma, order);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim), val(dim);
  for (int i = 0; i < tw.y.size(); ++i) {
    g(tw.y[i], val.data());
    acc.noalias() += tw.om[i] * val;
  }
  acc /= tw.total;
  if (!acc.allFinite()) throw SolverError("tilted expectation: non-finite value");
  return acc;
}

std::optional<double> closed_form_tilted_mean(const TiltedGaussian& law,
                                              const WorkingModelSpec& spec,
                                              const Eigen::VectorXd& gamma) {
  if (spec.gamma_map.kind != GammaMapKind::LinearY) return std::nullopt;
  return law.mean - gamma[0] * law.sigma * law.sigma;
}

double dr_regression_ratio(const Eigen::VectorXd& x, const WorkingModelSpec& spec,
                           const ParameterState& params) {
  const int d2 = spec.a2.out_dim(static_cast<int>(x.size()));
  if (params.alpha2.size() != d2)
    throw ConfigError("dr_regression_ratio: alpha2 dimension mismatch");
  Eigen::VectorXd f2(d2), w2(spec.outcome.out_dim(static_cast<int>(x.size())));
  spec.a2.eval(x, f2.data());
  spec.outcome.eval(x, w2.data());
  if (params.beta.size() != w2.size())
    throw ConfigError("dr_regression_ratio: beta dimension mismatch");

  TiltedGaussian law{params.beta.dot(w2), params.sigma};
  const double la2 = params.alpha2.dot(f2);
  Eigen::VectorXd g(spec.gamma_map.dim());
  TiltWeights tw = tilt_weights(law, x, spec, params.gamma, 0);
  double num = 0, den = 0;
  for (int i = 0; i < tw.y.size(); ++i) {
    spec.gamma_map.eval(x, tw.y[i], g.data());
    const double inv_pi2 = 1.0 + std::exp(-(la2 + params.gamma.dot(g)));
    num += tw.om[i] * tw.y[i] * inv_pi2;
    den += tw.om[i] * inv_pi2;
  }
  const double out = num / den;
  if (!std::isfinite(out))
    throw SolverError("dr_regression_ratio: non-finite ratio");
  return out;
}

}  // namespace sor
