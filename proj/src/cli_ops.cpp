#include "sor/cli_ops.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sor/csv_io.hpp"
#include "sor/errors.hpp"
#include "sor/estimators.hpp"
#include "sor/identification.hpp"
#include "sor/simulation.hpp"

namespace sor {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ordered_json vec_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ordered_json mat_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json r = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Eigen::VectorXd json_vec(const ordered_json& a, const std::string& what) {
  if (!a.is_array()) throw DataError(what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  Eigen::Index i = 0;
  for (const auto& e : a) {
    if (!e.is_number()) throw DataError(what + " must hold numbers");
    v[i++] = e.get<double>();
  }
  return v;
}

Eigen::MatrixXd json_mat(const ordered_json& a, const std::string& what) {
  if (!a.is_array() || a.empty()) throw DataError(what + " must be a row array");
  const auto rows = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd m;
  Eigen::Index i = 0;
  for (const auto& row : a) {
    const Eigen::VectorXd r = json_vec(row, what + " row");
    if (i == 0) m.resize(rows, r.size());
    if (r.size() != m.cols()) throw DataError(what + " rows have unequal length");
    m.row(i++) = r.transpose();
  }
  return m;
}

ordered_json tool_header(const char* command) {
  ordered_json j;
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  j["command"] = command;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("write failed for '" + path + "'");
}

ordered_json report_json(const EstimateReport& r) {
  ordered_json j;
  j["method"] = r.method;
  j["converged"] = r.converged;
  if (!r.failure_reason.empty()) j["failure_reason"] = r.failure_reason;
  if (r.converged) {
    ordered_json est = ordered_json::array();
    for (std::size_t k = 0; k < r.target_names.size(); ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      est.push_back({{"name", r.target_names[k]},
                     {"estimate", r.estimate[ki]},
                     {"se", r.se[ki]},
                     {"ci_lo", r.ci_lo[ki]},
                     {"ci_hi", r.ci_hi[ki]}});
    }
    j["targets"] = std::move(est);
    ordered_json nu = ordered_json::array();
    for (const auto& e : r.nuisance)
      nu.push_back({{"name", e.name}, {"estimate", e.estimate}, {"se", e.se}});
    j["nuisance"] = std::move(nu);
  }
  if (r.bootstrap) {
    j["bootstrap"] = {{"sd", r.bootstrap->sd},
                      {"ci_lo", r.bootstrap->lo},
                      {"ci_hi", r.bootstrap->hi},
                      {"resamples", r.bootstrap->b},
                      {"failed", r.bootstrap->n_fail}};
  }
  ordered_json d;
  d["iterations"] = r.diagnostics.iterations;
  d["max_residual"] = r.diagnostics.max_residual;
  d["jacobian_condition"] = r.diagnostics.jacobian_condition;
  d["nonmonotone_steps"] = r.diagnostics.nonmonotone_steps;
  if (!r.diagnostics.note.empty()) d["note"] = r.diagnostics.note;
  j["diagnostics"] = std::move(d);
  return j;
}

XMapKind xmap_kind_from_name(const std::string& name) {
  return x_map(name).kind;  // ConfigError on unknown
}

CovariateLaw law_from_name(const std::string& name) {
  if (name == "unit-square") return CovariateLaw::UnitSquare;
  if (name == "unit-interval") return CovariateLaw::UnitInterval;
  if (name == "iv-pair") return CovariateLaw::IvPair;
  throw ConfigError("unknown covariate law '" + name + "'");
}

const char* law_name(CovariateLaw law) {
  switch (law) {
    case CovariateLaw::UnitSquare: return "unit-square";
    case CovariateLaw::UnitInterval: return "unit-interval";
    case CovariateLaw::IvPair: return "iv-pair";
  }
  return "?";
}

const char* xmap_name(XMapKind k) {
  switch (k) {
    case XMapKind::Linear: return "linear";
    case XMapKind::Squares: return "squares";
    case XMapKind::LinearSquares: return "linear+squares";
    case XMapKind::InterceptOnly: return "intercept-only";
    case XMapKind::Custom: return "custom";
  }
  return "?";
}

ScenarioSpec scenario_from_config(const SimulateConfig& cfg) {
  if (cfg.scenario != "custom") {
    if (!cfg.scenario_config_path.empty())
      throw ConfigError("scenario config file requires --scenario custom");
    return ScenarioSpec::named(cfg.scenario);
  }
  if (cfg.scenario_config_path.empty())
    throw ConfigError("--scenario custom needs --scenario-config <file>");
  std::ifstream in(cfg.scenario_config_path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + cfg.scenario_config_path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("bad JSON in '" + cfg.scenario_config_path + "': " + e.what());
  }
  ScenarioSpec sc;
  sc.name = j.value("name", std::string("custom"));
  if (j.contains("law")) sc.law = law_from_name(j["law"].get<std::string>());
  if (j.contains("alpha1")) sc.alpha1 = json_vec(j["alpha1"], "alpha1");
  if (j.contains("alpha2")) sc.alpha2 = json_vec(j["alpha2"], "alpha2");
  if (j.contains("beta")) sc.beta = json_vec(j["beta"], "beta");
  sc.gamma = j.value("gamma", sc.gamma);
  sc.sigma = j.value("sigma", sc.sigma);
  if (j.contains("w1")) sc.w1 = xmap_kind_from_name(j["w1"].get<std::string>());
  if (j.contains("w2")) sc.w2 = xmap_kind_from_name(j["w2"].get<std::string>());
  sc.sensitivity_delta = j.value("sensitivity_delta", sc.sensitivity_delta);
  sc.grid_points = j.value("grid_points", sc.grid_points);
  sc.range_sds = j.value("range_sds", sc.range_sds);
  sc.max_doublings = j.value("max_doublings", sc.max_doublings);
  sc.validate();
  return sc;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const SolverError*>(&e)) return kExitSolver;
  return kExitConfig;
}

}  // namespace

int cmd_estimate(const EstimateConfig& cfg) {
  try {
    const Dataset data = load_csv(cfg.data_path);

    WorkingModelSpec spec;
    spec.a1 = x_map(cfg.a1_design);
    spec.a2 = x_map(cfg.a2_design);
    spec.outcome = x_map(cfg.outcome_design);
    spec.quadrature_order = cfg.quadrature_order;

    EstimateOptions opts;
    opts.solve.tol = cfg.tol;
    opts.solve.max_iter = cfg.max_iter;
    opts.bootstrap_b = cfg.bootstrap_b;
    opts.seed = cfg.seed;

    std::size_t n_r1 = 0, n_cb = 0, n_miss = 0;
    for (const auto& r : data.records) {
      n_r1 += r.r1;
      n_cb += (!r.r1 && r.r2);
      n_miss += !r.r2;
    }

    ordered_json out = tool_header("estimate");
    out["config"] = {{"data", cfg.data_path},
                     {"methods", cfg.methods},
                     {"a1_design", cfg.a1_design},
                     {"a2_design", cfg.a2_design},
                     {"outcome_design", cfg.outcome_design},
                     {"quadrature_order", cfg.quadrature_order},
                     {"tol", cfg.tol},
                     {"max_iter", cfg.max_iter},
                     {"bootstrap_b", cfg.bootstrap_b},
                     {"seed", cfg.seed}};
    out["data"] = {{"n", data.n()},
                   {"first_call_respondents", n_r1},
                   {"callback_respondents", n_cb},
                   {"nonrespondents", n_miss},
                   {"covariates", data.covariate_names}};
    out["spec_fingerprint"] = spec_fingerprint(spec);

    bool all_converged = true;
    ordered_json results = ordered_json::array();
    for (const auto& mname : cfg.methods) {
      const Method method = method_from_name(mname);
      const EstimateReport rep = estimate_mean(method, data, spec, opts);
      all_converged = all_converged && rep.converged;
      ordered_json rj = report_json(rep);
      if (rep.converged && n_miss > 0) {
        const EstimateReport nr = nonrespondent_mean(data, rep);
        rj["nonrespondent_mean"] = {{"estimate", nr.estimate[0]},
                                    {"se", nr.se[0]},
                                    {"ci_lo", nr.ci_lo[0]},
                                    {"ci_hi", nr.ci_hi[0]}};
      }
      results.push_back(std::move(rj));

      if (rep.converged) {
        std::cout << mname << ": mu = " << fmt6(rep.estimate[0])
                  << "  se = " << fmt6(rep.se[0]) << "  ci95 = ["
                  << fmt6(rep.ci_lo[0]) << ", " << fmt6(rep.ci_hi[0]) << "]";
        if (!rep.diagnostics.note.empty())
          std::cout << "  (" << rep.diagnostics.note << ")";
        std::cout << "\n";
      } else {
        std::cout << mname << ": FAILED (" << rep.failure_reason << ")\n";
      }
    }
    out["results"] = std::move(results);
    if (!cfg.out_path.empty()) write_text(cfg.out_path, out.dump(2) + "\n");
    return all_converged ? kExitOk : kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << kToolName << " estimate: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int cmd_simulate(const SimulateConfig& cfg) {
  try {
    const ScenarioSpec sc = scenario_from_config(cfg);
    if (cfg.reps < 1) throw ConfigError("--reps must be >= 1");
    if (cfg.n < 10) throw ConfigError("--n must be >= 10");
    std::vector<Method> methods;
    for (const auto& m : cfg.methods) methods.push_back(method_from_name(m));
    SolveOptions sopts;
    sopts.tol = cfg.tol;

    const ReplicationMetrics res = run_replications(
        sc, methods, cfg.reps, static_cast<std::size_t>(cfg.n), cfg.seed, sopts);

    std::string metrics_csv =
        "scenario,method,parameter,truth,bias,mc_sd,mean_se,coverage,n_fail,"
        "reps\n";
    for (const auto& r : res.rows) {
      metrics_csv += r.scenario + "," + r.method + "," + r.parameter + "," +
                     fmt17(r.truth) + "," + fmt17(r.bias) + "," + fmt17(r.mc_sd) +
                     "," + fmt17(r.mean_se) + "," + fmt17(r.coverage) + "," +
                     std::to_string(r.n_fail) + "," + std::to_string(r.reps) +
                     "\n";
    }
    std::string reps_csv = "rep,method,converged,mu,mu_se,gamma,gamma_se\n";
    for (const auto& r : res.reps) {
      reps_csv += std::to_string(r.rep) + "," + r.method + "," +
                  (r.converged ? "1" : "0") + "," + fmt17(r.mu) + "," +
                  fmt17(r.mu_se) + "," + fmt17(r.gamma) + "," +
                  fmt17(r.gamma_se) + "\n";
    }

    ordered_json out = tool_header("simulate");
    out["config"] = {{"scenario", sc.name},
                     {"reps", cfg.reps},
                     {"n", cfg.n},
                     {"seed", cfg.seed},
                     {"methods", cfg.methods},
                     {"tol", cfg.tol}};
    out["scenario"] = {{"name", sc.name},
                       {"law", law_name(sc.law)},
                       {"alpha1", vec_json(sc.alpha1)},
                       {"alpha2", vec_json(sc.alpha2)},
                       {"beta", vec_json(sc.beta)},
                       {"gamma", sc.gamma},
                       {"sigma", sc.sigma},
                       {"w1", xmap_name(sc.w1)},
                       {"w2", xmap_name(sc.w2)},
                       {"sensitivity_delta", sc.sensitivity_delta}};
    out["truth"] = {{"mu", res.truth_mu}, {"gamma", res.truth_gamma}};
    ordered_json rows = ordered_json::array();
    for (const auto& r : res.rows)
      rows.push_back({{"method", r.method},
                      {"parameter", r.parameter},
                      {"truth", r.truth},
                      {"bias", r.bias},
                      {"mc_sd", r.mc_sd},
                      {"mean_se", r.mean_se},
                      {"coverage", r.coverage},
                      {"n_fail", r.n_fail},
                      {"reps", r.reps},
                      {"usable", r.usable}});
    out["metrics"] = std::move(rows);

    std::cout << "scenario " << sc.name << ": truth mu = " << fmt6(res.truth_mu)
              << ", gamma = " << fmt6(res.truth_gamma) << "\n";
    for (const auto& r : res.rows)
      std::cout << "  " << r.method << " " << r.parameter
                << ": bias = " << fmt6(r.bias) << "  mc_sd = " << fmt6(r.mc_sd)
                << "  mean_se = " << fmt6(r.mean_se)
                << "  coverage = " << fmt6(r.coverage) << "  fail " << r.n_fail
                << "/" << r.reps << "\n";

    if (!cfg.out_prefix.empty()) {
      write_text(cfg.out_prefix + ".metrics.csv", metrics_csv);
      write_text(cfg.out_prefix + ".replications.csv", reps_csv);
      write_text(cfg.out_prefix + ".report.json", out.dump(2) + "\n");
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << kToolName << " simulate: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int cmd_identify(const IdentifyConfig& cfg) {
  try {
    std::ifstream in(cfg.input_path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + cfg.input_path + "'");
    ordered_json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw DataError("bad JSON in '" + cfg.input_path + "': " + e.what());
    }

    ObservedTables obs;
    try {
      if (j.contains("joint")) {
        const auto& g = j["joint"];
        DiscreteJoint joint;
        for (const auto& xp : g.at("x_points"))
          joint.x_points.push_back(json_vec(xp, "x_points entry"));
        joint.x_mass = json_vec(g.at("x_mass"), "x_mass");
        joint.y_values = json_vec(g.at("y_values"), "y_values");
        joint.f_y_given_x = json_mat(g.at("f_y_given_x"), "f_y_given_x");
        joint.pi1 = json_mat(g.at("pi1"), "pi1");
        joint.pi2 = json_mat(g.at("pi2"), "pi2");
        joint.validate();
        obs = observed_tables(joint);
      } else if (j.contains("observed")) {
        const auto& g = j["observed"];
        for (const auto& xp : g.at("x_points"))
          obs.x_points.push_back(json_vec(xp, "x_points entry"));
        obs.x_mass = json_vec(g.at("x_mass"), "x_mass");
        obs.y_values = json_vec(g.at("y_values"), "y_values");
        obs.f_y_r1 = json_mat(g.at("f_y_r1"), "f_y_r1");
        obs.f_y_r2_r1c = json_mat(g.at("f_y_r2_r1c"), "f_y_r2_r1c");
        obs.f_nonresp = json_vec(g.at("f_nonresp"), "f_nonresp");
        obs.validate();
      } else {
        throw DataError("input must contain a 'joint' or 'observed' object");
      }
    } catch (const ConfigError& e) {
      throw DataError(e.what());  // malformed tables are a data problem here
    } catch (const ordered_json::exception& e) {
      throw DataError(std::string("missing or malformed field: ") + e.what());
    }

    const RecoveredModel rec = recover_model(obs);

    ordered_json out = tool_header("identify");
    out["config"] = {{"input", cfg.input_path}};
    out["support"] = {{"x_points", static_cast<int>(obs.x_points.size())},
                      {"y_values", static_cast<int>(obs.y_values.size())}};
    ordered_json per_x = ordered_json::array();
    for (std::size_t i = 0; i < obs.x_points.size(); ++i) {
      const auto& det = rec.details[i];
      // feasibility margin of the recovered shift at this support point
      double margin = std::numeric_limits<double>::infinity();
      for (Eigen::Index jcol = 0; jcol < obs.y_values.size(); ++jcol) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (obs.f_y_r1(ii, jcol) <= 0 && obs.f_y_r2_r1c(ii, jcol) <= 0) continue;
        margin = std::min(margin, std::exp(det.d) * obs.f_y_r1(ii, jcol) -
                                      obs.f_y_r2_r1c(ii, jcol));
      }
      per_x.push_back({{"x", vec_json(obs.x_points[i])},
                       {"d", det.d},
                       {"lower_bracket", det.lower_bracket},
                       {"upper_bracket", det.upper_bracket},
                       {"iterations", det.iterations},
                       {"monotone_audit", det.monotone_audit},
                       {"restriction_margin", margin}});
      std::cout << "x[" << i << "]: d = " << fmt6(det.d)
                << "  margin = " << fmt6(margin)
                << (det.monotone_audit ? "" : "  (monotonicity audit FAILED)")
                << "\n";
    }
    out["baseline_shifts"] = std::move(per_x);
    out["recovered"] = {{"pi1", mat_json(rec.pi1)},
                        {"pi2", mat_json(rec.pi2)},
                        {"f_y_given_x", mat_json(rec.f_y_given_x)},
                        {"y_values", vec_json(obs.y_values)}};
    if (!cfg.out_path.empty()) write_text(cfg.out_path, out.dump(2) + "\n");
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << kToolName << " identify: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace sor
