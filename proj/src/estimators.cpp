#include "sor/estimators.hpp"

#include <cmath>
#include <numeric>

#include "sor/errors.hpp"

namespace sor {

namespace {

struct StratumCounts {
  std::size_t n = 0, n_r1 = 0, n_callback = 0, n_miss = 0, n_resp = 0;
};

StratumCounts stratum_counts(const Dataset& data) {
  StratumCounts c;
  c.n = data.n();
  for (const auto& r : data.records) {
    c.n_r1 += r.r1;
    c.n_callback += (!r.r1 && r.r2);
    c.n_miss += !r.r2;
    c.n_resp += r.r2;
  }
  return c;
}

// Record-level invariant breaches are fatal; dataset-level stratum gaps are
// handled by the caller (they decide between the degenerate fallback and a
// structural error).
void throw_on_record_issues(const Dataset& data) {
  const auto issues = validate_dataset(data);
  std::string msg;
  int shown = 0;
  for (const auto& iss : issues) {
    if (!iss.record) continue;
    if (shown == 10) {
      msg += "; ...";
      break;
    }
    if (!msg.empty()) msg += "; ";
    msg += "record " + std::to_string(*iss.record) + ": " + iss.rule;
    ++shown;
  }
  if (!msg.empty()) throw DataError(msg);
  if (data.n() == 0) throw DataError("dataset is empty");
}

Eigen::VectorXd observed_y_weighted_mean(const Dataset& data,
                                         const Eigen::VectorXd* w,
                                         double* out_se) {
  double sum = 0, wsum = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (!data.records[i].r2) continue;
    const double wi = w ? (*w)[static_cast<Eigen::Index>(i)] : 1.0;
    sum += wi * *data.records[i].y;
    wsum += wi;
  }
  const double mean = sum / wsum;
  if (out_se) {
    double ss = 0, m = 0;
    for (std::size_t i = 0; i < data.n(); ++i)
      if (data.records[i].r2) {
        ss += (*data.records[i].y - mean) * (*data.records[i].y - mean);
        m += 1.0;
      }
    *out_se = std::sqrt(ss / (m - 1.0) / m);
  }
  return Eigen::VectorXd::Constant(1, mean);
}

void fill_wald(EstimateReport& rep) {
  const auto d = rep.estimate.size();
  rep.ci_lo.resize(d);
  rep.ci_hi.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    rep.ci_lo[k] = rep.estimate[k] - kNormalQuantile975 * rep.se[k];
    rep.ci_hi[k] = rep.estimate[k] + kNormalQuantile975 * rep.se[k];
  }
}

void copy_diagnostics(const SolveResult& sr, SolveDiagnostics& d) {
  d.converged = sr.converged;
  d.iterations = sr.iterations;
  d.max_residual = sr.max_residual;
  d.jacobian_condition = sr.jacobian_condition;
  d.nonmonotone_steps = sr.nonmonotone_steps;
  d.residual_path = sr.residual_path;
}

// Shared solve -> sandwich -> report path for the stacked systems.
EstimateReport run_system(Method method, const MomentSystem& sys,
                          const Eigen::VectorXd& start, const Dataset& data,
                          const WorkingModelSpec& spec,
                          const EstimateOptions& opts) {
  EstimateReport rep;
  rep.method = method_name(method);
  rep.spec_fingerprint = spec_fingerprint(spec);

  const SolveResult sr = solve(sys, start, opts.solve);
  copy_diagnostics(sr, rep.diagnostics);
  const ParameterLayout& lay = sys.layout();
  const int dt = lay.d_target;
  const auto names = lay.names();
  rep.target_names.assign(names.end() - dt, names.end());
  if (!sr.converged) {
    rep.failure_reason = sr.failure_reason;
    return rep;
  }

  Eigen::MatrixXd cov;
  try {
    cov = sandwich_variance(sys, sr.packed, opts.solve);
  } catch (const SolverError& e) {
    rep.failure_reason = e.what();
    return rep;
  }
  rep.converged = true;
  const int off = lay.target_offset();
  rep.estimate = sr.packed.segment(off, dt);
  rep.se.resize(dt);
  for (int k = 0; k < dt; ++k)
    rep.se[k] = std::sqrt(std::max(0.0, cov(off + k, off + k)));
  fill_wald(rep);
  for (int k = 0; k < off; ++k)
    rep.nuisance.push_back(
        {names[static_cast<std::size_t>(k)], sr.packed[k],
         std::sqrt(std::max(0.0, cov(k, k)))});

  if (opts.bootstrap_b > 0 && dt == 1) {
    const Eigen::VectorXd root = sr.packed;
    auto refit = [&](const Eigen::VectorXd& w) -> std::optional<double> {
      try {
        const SolveResult r = solve(sys, root, opts.solve, &w);
        if (!r.converged) return std::nullopt;
        return r.packed[off];
      } catch (const SolverError&) {
        return std::nullopt;
      }
    };
    rep.bootstrap = bootstrap(refit, data.n(), opts.bootstrap_b, opts.seed);
  }
  return rep;
}

// Fully observed data: every correction is inactive, so all methods collapse
// to the complete-data estimator.
EstimateReport degenerate_complete_data(Method method, const Dataset& data,
                                        const WorkingModelSpec& spec,
                                        const FunctionalSpec* fn,
                                        const EstimateOptions& opts) {
  EstimateReport rep;
  rep.method = method_name(method);
  rep.spec_fingerprint = spec_fingerprint(spec);
  rep.diagnostics.note =
      "every record responded; returning the complete-data estimator";
  if (!fn) {
    double se = 0;
    rep.estimate = observed_y_weighted_mean(data, nullptr, &se);
    rep.se = Eigen::VectorXd::Constant(1, se);
    rep.target_names = {"mu"};
    rep.converged = true;
    rep.diagnostics.converged = true;
    fill_wald(rep);
    return rep;
  }
  const auto sys = make_functional_system(Method::Cc, data, spec, *fn);
  Eigen::VectorXd start = fn->theta_start;
  if (start.size() == 0) start = Eigen::VectorXd::Zero(fn->theta_dim);
  EstimateReport out = run_system(method, *sys, start, data, spec, opts);
  out.diagnostics.note = rep.diagnostics.note;
  return out;
}

EstimateReport complete_case_mean(const Dataset& data,
                                  const WorkingModelSpec& spec) {
  EstimateReport rep;
  rep.method = method_name(Method::Cc);
  rep.spec_fingerprint = spec_fingerprint(spec);
  rep.target_names = {"mu"};
  double se = 0;
  rep.estimate = observed_y_weighted_mean(data, nullptr, &se);
  rep.se = Eigen::VectorXd::Constant(1, se);
  rep.converged = true;
  rep.diagnostics.converged = true;
  fill_wald(rep);
  return rep;
}

void require_usable_strata(const StratumCounts& c) {
  if (c.n_miss > 0 && c.n_r1 == 0)
    throw DataError(
        "no first-call respondents: the missingness corrections are not "
        "identified");
  if (c.n_miss > 0 && c.n_callback == 0)
    throw DataError(
        "no callback respondents: the missingness corrections are not "
        "identified");
  if (c.n_resp == 0) throw DataError("no observed outcomes");
}

}  // namespace

EstimateReport estimate_mean(Method method, const Dataset& data,
                             const WorkingModelSpec& spec,
                             const EstimateOptions& opts) {
  throw_on_record_issues(data);
  spec.validate(data.xdim());
  const StratumCounts c = stratum_counts(data);
  if (c.n_miss == 0) return degenerate_complete_data(method, data, spec, nullptr, opts);
  require_usable_strata(c);
  if (method == Method::Cc) return complete_case_mean(data, spec);

  const auto sys = make_mean_system(method, data, spec);
  const ParameterState start = starting_values(method, data, spec);
  return run_system(method, *sys, sys->layout().pack(start), data, spec, opts);
}

EstimateReport estimate_functional(Method method, const Dataset& data,
                                   const WorkingModelSpec& spec,
                                   const FunctionalSpec& fn,
                                   const EstimateOptions& opts) {
  if (!fn.m || fn.theta_dim < 1)
    throw ConfigError("functional spec needs m and theta_dim >= 1");
  throw_on_record_issues(data);
  spec.validate(data.xdim());
  const StratumCounts c = stratum_counts(data);
  if (c.n_miss == 0) return degenerate_complete_data(method, data, spec, &fn, opts);
  require_usable_strata(c);

  const auto sys = make_functional_system(method, data, spec, fn);
  Eigen::VectorXd start_t = fn.theta_start;
  if (start_t.size() == 0) start_t = Eigen::VectorXd::Zero(fn.theta_dim);
  Eigen::VectorXd start;
  if (method == Method::Cc) {
    start = start_t;
  } else {
    ParameterState st = starting_values(method, data, spec);
    st.target = start_t;
    start = sys->layout().pack(st);
  }
  return run_system(method, *sys, start, data, spec, opts);
}

EstimateReport nonrespondent_mean(const Dataset& data,
                                  const EstimateReport& mean_report) {
  if (!mean_report.converged || mean_report.estimate.size() != 1)
    throw ConfigError("nonrespondent_mean needs a converged mean report");
  const StratumCounts c = stratum_counts(data);
  if (c.n_miss == 0) throw DataError("every record responded");
  double ysum = 0;
  for (const auto& r : data.records)
    if (r.r2) ysum += *r.y;
  const double n = static_cast<double>(c.n), n0 = static_cast<double>(c.n_miss);
  EstimateReport rep;
  rep.method = mean_report.method;
  rep.spec_fingerprint = mean_report.spec_fingerprint;
  rep.target_names = {"mu_nonrespondent"};
  rep.converged = true;
  rep.diagnostics = mean_report.diagnostics;
  rep.estimate =
      Eigen::VectorXd::Constant(1, (mean_report.estimate[0] * n - ysum) / n0);
  rep.se = Eigen::VectorXd::Constant(1, (n / n0) * mean_report.se[0]);
  fill_wald(rep);
  return rep;
}

}  // namespace sor
