#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sor {

inline constexpr const char* kToolName = "sor";
inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;  // bad flags, unknown names, bad config
inline constexpr int kExitData = 3;    // unreadable/invalid data
inline constexpr int kExitSolver = 4;  // non-convergence, infeasibility

struct EstimateConfig {
  std::string data_path;
  std::vector<std::string> methods{"dr"};
  std::string a1_design = "linear", a2_design = "linear",
              outcome_design = "linear";
  int quadrature_order = 64;
  double tol = 1e-10;
  int max_iter = 200;
  int bootstrap_b = 0;
  std::uint64_t seed = 1;
  std::string out_path;  // empty = stdout only
};

struct SimulateConfig {
  std::string scenario = "TT";       // named design, or "custom"
  std::string scenario_config_path;  // JSON ScenarioSpec when custom
  int reps = 500;
  std::uint64_t n = 3000;
  std::uint64_t seed = 1;
  std::vector<std::string> methods{"ipw", "reg", "dr"};
  double tol = 1e-10;
  std::string out_prefix;  // writes <prefix>.metrics.csv/.report.json/.replications.csv
};

struct IdentifyConfig {
  std::string input_path;  // JSON: {"joint": {...}} or {"observed": {...}}
  std::string out_path;
};

// Each returns a process exit code and writes reports (JSON; metrics as
// CSV). Reports embed the effective config, master seed, and tool version;
// re-running the embedded config reproduces the bytes exactly.
int cmd_estimate(const EstimateConfig& cfg);
int cmd_simulate(const SimulateConfig& cfg);
int cmd_identify(const IdentifyConfig& cfg);

}  // namespace sor
