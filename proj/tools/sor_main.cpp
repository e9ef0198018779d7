#include <CLI11.hpp>

#include "sor/cli_ops.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Survey outcome estimation from two-call contact data"};
  app.set_version_flag("--version",
                       std::string(sor::kToolName) + " " + sor::kToolVersion);
  app.require_subcommand(1);

  sor::EstimateConfig est;
  CLI::App* cmd_est = app.add_subcommand(
      "estimate", "Estimate the outcome mean from a two-call survey CSV");
  cmd_est->add_option("--data", est.data_path, "input CSV file")->required();
  cmd_est->add_option("--method", est.methods,
                      "methods to run: cc, ipw, reg, dr, calibration");
  cmd_est->add_option("--a1-design", est.a1_design,
                      "first-call propensity design (linear, squares, "
                      "linear+squares, intercept-only)");
  cmd_est->add_option("--a2-design", est.a2_design,
                      "second-call propensity design");
  cmd_est->add_option("--outcome-design", est.outcome_design,
                      "outcome regression design");
  cmd_est->add_option("--quadrature-order", est.quadrature_order,
                      "tilted-expectation quadrature order (16, 32, 64, 96)");
  cmd_est->add_option("--tol", est.tol, "solver residual tolerance");
  cmd_est->add_option("--max-iter", est.max_iter, "solver iteration cap");
  cmd_est->add_option("--bootstrap", est.bootstrap_b,
                      "bootstrap resamples (0 = sandwich only; >= 100 otherwise)");
  cmd_est->add_option("--seed", est.seed, "bootstrap seed");
  cmd_est->add_option("--out", est.out_path, "JSON report path");

  sor::SimulateConfig sim;
  CLI::App* cmd_sim = app.add_subcommand(
      "simulate", "Run a seeded replication study of the estimators");
  cmd_sim->add_option("--scenario", sim.scenario,
                      "TT, FT, TF, FF, FIG1-i, FIG1-ii, or custom");
  cmd_sim->add_option("--scenario-config", sim.scenario_config_path,
                      "JSON scenario file (with --scenario custom)");
  cmd_sim->add_option("--reps", sim.reps, "number of replications");
  cmd_sim->add_option("--n", sim.n, "records per replication");
  cmd_sim->add_option("--seed", sim.seed, "master seed");
  cmd_sim->add_option("--method", sim.methods, "methods to run");
  cmd_sim->add_option("--tol", sim.tol, "solver residual tolerance");
  cmd_sim->add_option("--out-prefix", sim.out_prefix,
                      "writes <prefix>.metrics.csv, <prefix>.replications.csv "
                      "and <prefix>.report.json");

  sor::IdentifyConfig idf;
  CLI::App* cmd_idf = app.add_subcommand(
      "identify", "Invert finite-support response tables (baseline shifts, "
                  "propensities, outcome law)");
  cmd_idf->add_option("--input", idf.input_path, "JSON tables file")->required();
  cmd_idf->add_option("--out", idf.out_path, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sor::kExitConfig;  // --help/--version stay 0
  }

  if (cmd_est->parsed()) return sor::cmd_estimate(est);
  if (cmd_sim->parsed()) return sor::cmd_simulate(sim);
  if (cmd_idf->parsed()) return sor::cmd_identify(idf);
  return sor::kExitConfig;
}
