#include "sor/solve.hpp"

#include <algorithm>
#include <cmath>

#include "sor/errors.hpp"
#include "sor/rng.hpp"

namespace sor {

namespace {

// Central finite-difference Jacobian of the mean moments.
Eigen::MatrixXd fd_jacobian(const MomentSystem& sys, const Eigen::VectorXd& p,
                            const SolveOptions& opts,
                            const Eigen::VectorXd* weights) {
  const int d = sys.dim();
  Eigen::MatrixXd jac(d, d);
  Eigen::VectorXd pp = p;
  for (int j = 0; j < d; ++j) {
    const double h = std::max(opts.fd_abs, opts.fd_rel * std::abs(p[j]));
    const double save = pp[j];
    pp[j] = save + h;
    const Eigen::VectorXd up = sys.mean(pp, weights);
    pp[j] = save - h;
    const Eigen::VectorXd dn = sys.mean(pp, weights);
    pp[j] = save;
    jac.col(j) = (up - dn) / (2.0 * h);
  }
  return jac;
}

double condition_estimate(const Eigen::MatrixXd& jac) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
  const auto& sv = svd.singularValues();
  const double smin = sv[sv.size() - 1];
  if (!(smin > 0)) return std::numeric_limits<double>::infinity();
  return sv[0] / smin;
}

}  // namespace

SolveResult solve(const MomentSystem& sys, const Eigen::VectorXd& start,
                  const SolveOptions& opts, const Eigen::VectorXd* weights) {
  SolveResult res;
  res.packed = start;
  Eigen::VectorXd g = sys.mean(res.packed, weights);
  double gnorm = g.lpNorm<Eigen::Infinity>();
  if (!g.allFinite())
    throw SolverError("moment residual is not finite at the starting point");
  res.residual_path.push_back(gnorm);

  for (int it = 0; it < opts.max_iter && gnorm > opts.tol; ++it) {
    res.iterations = it + 1;
    const Eigen::MatrixXd jac = fd_jacobian(sys, res.packed, opts, weights);
    if (!jac.allFinite()) {
      res.failure_reason = "jacobian is not finite";
      break;
    }
    res.jacobian_condition = condition_estimate(jac);
    if (!(res.jacobian_condition < opts.cond_limit)) {
      res.failure_reason = "singular jacobian";
      break;
    }
    const Eigen::VectorXd step = jac.partialPivLu().solve(g);

    double best_norm = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_p, best_g;
    bool decreased = false;
    double scale = 1.0;
    for (int h = 0; h <= opts.max_halvings; ++h, scale *= 0.5) {
      const Eigen::VectorXd trial = res.packed - scale * step;
      const Eigen::VectorXd gt = sys.mean(trial, weights);
      if (!gt.allFinite()) continue;
      const double tn = gt.lpNorm<Eigen::Infinity>();
      if (tn < best_norm) {
        best_norm = tn;
        best_p = trial;
        best_g = gt;
      }
      if (tn < gnorm) {
        decreased = true;
        break;
      }
    }
    if (!std::isfinite(best_norm)) {
      res.failure_reason = "line search produced no finite residual";
      break;
    }
    if (!decreased) ++res.nonmonotone_steps;
    res.packed = best_p;
    g = best_g;
    gnorm = best_norm;
    res.residual_path.push_back(gnorm);
  }

  res.max_residual = gnorm;
  res.converged = gnorm <= opts.tol && res.failure_reason.empty();
  if (!res.converged && res.failure_reason.empty())
    res.failure_reason = "iteration limit reached";
  res.state = sys.layout().unpack(res.packed);
  return res;
}

Eigen::MatrixXd sandwich_variance(const MomentSystem& sys,
                                  const Eigen::VectorXd& root,
                                  const SolveOptions& opts) {
  const int d = sys.dim();
  const auto n = static_cast<double>(sys.n_records());
  const Eigen::MatrixXd bread = fd_jacobian(sys, root, opts, nullptr);
  if (!bread.allFinite() || !(condition_estimate(bread) < opts.cond_limit))
    throw SolverError("sandwich variance: singular jacobian at the root");
  Eigen::VectorXd mean(d);
  Eigen::MatrixXd meat(d, d);
  sys.mean_and_outer(root, mean, meat);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(bread);
  const Eigen::MatrixXd ainv_b = lu.solve(meat);
  Eigen::MatrixXd cov = lu.solve(ainv_b.transpose()).transpose() / n;
  cov = ((cov + cov.transpose()) * 0.5).eval();
  return cov;
}

BootstrapResult bootstrap(
    const std::function<std::optional<double>(const Eigen::VectorXd&)>& refit,
    std::size_t n, int B, std::uint64_t seed) {
  if (B < 100) throw ConfigError("bootstrap needs at least 100 resamples");
  BootstrapResult out;
  out.b = B;
  for (int b = 0; b < B; ++b) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      w[static_cast<Eigen::Index>(rng.uniform_below(n))] += 1.0;
    const std::optional<double> est = refit(w);
    if (est && std::isfinite(*est))
      out.draws.push_back(*est);
    else
      ++out.n_fail;
  }
  if (out.n_fail * 10 > B)
    throw SolverError("bootstrap: more than 10% of resamples failed");

  const auto m = out.draws.size();
  double mean = 0;
  for (double v : out.draws) mean += v;
  mean /= static_cast<double>(m);
  double ss = 0;
  for (double v : out.draws) ss += (v - mean) * (v - mean);
  out.sd = std::sqrt(ss / static_cast<double>(m - 1));

  std::vector<double> sorted = out.draws;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double q) {
    // type-7 interpolation on the successful draws
    const double h = (static_cast<double>(m) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, m - 1);
    return sorted[lo] + (h - std::floor(h)) * (sorted[hi] - sorted[lo]);
  };
  out.lo = quantile(0.025);
  out.hi = quantile(0.975);
  return out;
}

}  // namespace sor
