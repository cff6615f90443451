#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tdvio/estimator.hpp"
#include "tdvio/simulator.hpp"

namespace tdvio {

struct TrajectoryRecord {
  double t = 0.0;  // s
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
};

std::vector<TrajectoryRecord> to_records(const std::vector<GroundTruthRecord>& gt);
std::vector<TrajectoryRecord> to_records(const std::vector<TrajectorySample>& est);

/// Position RMSE in centimeters after associating each estimate with the
/// linearly interpolated ground truth and a rigid (no scale) least-squares
/// alignment. Estimates outside the ground-truth span are ignored. Throws
/// InsufficientOverlap with fewer than 10 associated records.
double rmse_ate(const std::vector<TrajectoryRecord>& est, const std::vector<TrajectoryRecord>& gt);

/// Ground truth interpolated at t (linear position/velocity, slerp attitude).
/// Throws OutOfRange outside the record span.
GroundTruthRecord interpolate_groundtruth(const std::vector<GroundTruthRecord>& gt, double t);

/// Estimator settings matching a simulated scenario's sensors. Zero noise
/// densities in the scenario fall back to the default weights.
EstimatorConfig estimator_config_for(const SimScenario& scn);

struct RunOptions {
  EstimatorConfig config;
  Vec3 velocity_perturbation = Vec3::Zero();  // added to the bootstrap velocity, m/s
  /// Called after every processed frame.
  std::function<void(const EstimatorOutput&)> on_frame;
};

struct TdTracePoint {
  double t_s = 0.0;  // camera time of the frame
  double td_ms = 0.0;
  double cost = 0.0;  // final window cost
};

struct RunResult {
  std::vector<TdTracePoint> td_trace;
  std::vector<TrajectorySample> trajectory;
  double final_td_ms = 0.0;
  std::optional<double> ate_cm;  // when ground truth is available
  std::size_t frames_processed = 0;
  int dropped_factors = 0;
  int outliers_removed = 0;
  double wall_time_s = 0.0;
};

/// Replays IMU and frames through an estimator bootstrapped from ground
/// truth at the first key-state time. Errors from the estimator propagate
/// with the failing frame index prefixed.
RunResult run_estimator(const SimData& data, const RunOptions& opts);

struct SweepCell {
  double offset_ms = 0.0;
  std::uint64_t seed = 0;
  bool calibrate = true;
  std::optional<double> estimated_td_ms;
  std::optional<double> ate_cm;
  std::string error;  // empty on success
};

struct SweepSpec {
  SimScenario base;  // true_td and seeds are overwritten per cell
  std::vector<double> offsets_ms{20.0, 40.0, 60.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double init_td_ms = 0.0;
  int jobs = 1;
  std::optional<EstimatorConfig> config;  // scenario-derived defaults when empty
};

/// Runs every (offset, seed, calibrate on/off) cell. Failing cells record
/// their error and the sweep continues. Output order is independent of jobs.
std::vector<SweepCell> run_sweep(const SweepSpec& spec);

}  // namespace tdvio
