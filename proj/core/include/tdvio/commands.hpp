#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tdvio/evaluation.hpp"

namespace tdvio {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitDiverged = 3,
};

struct SimulateOptions {
  std::string out;
  // Unset fields keep the value from `config` (or the built-in default).
  std::optional<std::string> scenario;
  std::optional<double> offset_ms;
  std::optional<double> pixel_noise;
  std::optional<bool> imu_noise;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::string config;  // scenario JSON, same schema as scenario.json (waypoints live here)
};

struct RunOptionsCli {
  std::string dataset;
  std::string out;
  std::optional<double> init_td_ms;
  std::optional<bool> calibrate_td;
  std::optional<int> window_size;
  std::optional<std::string> parameterization;
  std::optional<std::string> jacobian_mode;
  double init_velocity_sigma = 0.0;  // m/s, bootstrap velocity perturbation drawn with `seed`
  std::uint64_t seed = 1;
  std::string config;  // JSON estimator settings
};

struct EvalOptions {
  std::string est;
  std::string gt;
  std::string out;  // optional eval.json
};

struct SweepOptions {
  std::string out;
  std::string scenario = "sinusoid3d";
  std::vector<double> offsets_ms{20.0, 40.0, 60.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double init_td_ms = 0.0;
  double duration = 60.0;
  double pixel_noise = 1.0;
  int jobs = 1;
  std::string config;
};

/// Each command writes its files and returns an ExitCode; errors are
/// reported on `err`. Library exceptions are mapped to exit codes.
int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err);
int cmd_run(const RunOptionsCli& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_sweep(const SweepOptions& opts, std::ostream& out, std::ostream& err);

/// Parses argv (subcommand first) and dispatches.
int tdvio_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Applies a JSON object of estimator settings on top of `config`. Throws
/// DataError on unknown keys or malformed values.
void apply_estimator_json(const std::string& text, EstimatorConfig& config);

/// Maps an exception to an exit code.
int exit_code_for(const std::exception& e);

}  // namespace tdvio
