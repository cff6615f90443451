#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tdvio/imu_preintegration.hpp"
#include "tdvio/nlls_solver.hpp"
#include "tdvio/visual_factors.hpp"
#include "tdvio/window_factors.hpp"

namespace tdvio {

enum class Parameterization { kXyz, kInvDepth };

const char* to_string(Parameterization p);
/// Accepts "xyz", "invdepth" and "inv_depth". Throws InvalidArgument.
Parameterization parse_parameterization(const std::string& s);

struct EstimatorConfig {
  int window_size = 10;
  Parameterization parameterization = Parameterization::kInvDepth;
  bool calibrate_td = true;
  double init_td = 0.0;  // s
  double pixel_noise_px = 1.0;
  double huber_threshold = 1.0;
  double min_inverse_depth = kMinInverseDepth;
  double outlier_threshold = 3.0;  // whitened residual norm
  double default_depth = 5.0;      // m, used below min_parallax
  double min_parallax_deg = 0.5;
  CompensationJacobian jacobian_mode = CompensationJacobian::kLinearizationConstant;
  ImuNoise imu_noise;
  CameraExtrinsics extrinsics;
  Intrinsics intrinsics;
  WorldConstants world;
  SolverConfig solver{.max_iters = 5};  // per window; fewer than the solver default to keep real time
  // Standard deviations of the prior placed on the first key state, in
  // error-state order (theta, p, v, b_a, b_g).
  Vec3 prior_sigma_theta = Vec3::Constant(1e-3);
  Vec3 prior_sigma_p = Vec3::Constant(1e-3);
  Vec3 prior_sigma_v = Vec3::Constant(0.5);
  Vec3 prior_sigma_ba = Vec3::Constant(0.02);
  Vec3 prior_sigma_bg = Vec3::Constant(5e-4);

  /// Throws InvalidArgument.
  void validate() const;
};

struct FeatureTrack {
  int feature_id = 0;
  Vec2 px = Vec2::Zero();  // undistorted pixels
};

struct FrameInput {
  double t_image = 0.0;  // camera clock, s
  std::vector<FeatureTrack> tracks;
};

/// Initial navigation state for the first key state.
struct InitialState {
  Quat q = Quat::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
};

struct EstimatorOutput {
  std::int64_t frame_index = 0;
  double t_image = 0.0;
  ImuKeyState state;  // newest key state after optimization
  double td = 0.0;
  SolverReport solver;
  int window_states = 0;
  int active_features = 0;
  int visual_factors = 0;
  int outliers_removed = 0;
  int prior_rows = 0;            // rows of the marginalization prior after this frame
  int marginalized_features = 0;
};

struct TrajectorySample {
  double t = 0.0;  // IMU clock, s
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
};

/// Sliding-window visual-inertial estimator with online camera-IMU time
/// offset. Not thread-safe; one instance per stream.
class Estimator {
 public:
  explicit Estimator(EstimatorConfig config);

  const EstimatorConfig& config() const { return config_; }

  /// Supplies the state of the first key state. Must precede the first frame.
  void bootstrap(const InitialState& init);
  bool bootstrapped() const { return bootstrapped_; }

  /// Throws NonMonotonicTimestamp unless s.t is strictly increasing.
  void process_imu(const ImuSample& s);

  /// Throws InitializationPending before bootstrap, InsufficientImu when the
  /// buffer does not reach t_image + td, EstimatorDiverged when |td| >= 0.5 s.
  EstimatorOutput process_frame(const FrameInput& frame);

  /// Latest optimized time offset; init_td before any optimization.
  double current_time_offset() const { return td_; }

  /// Key states that already left the window followed by the current window.
  std::vector<TrajectorySample> trajectory() const;

  std::size_t window_size() const { return frames_.size(); }
  std::size_t imu_buffer_size() const { return imu_.size(); }
  std::size_t feature_count() const { return features_.size(); }
  const std::optional<MarginalPrior>& marginal_prior() const { return prior_; }

 private:
  struct FrameObs {
    Vec2 px;
    bool outlier = false;
  };
  struct KeyFrame {
    std::int64_t number = 0;
    double t_image = 0.0;
    ImuKeyState state;
    std::shared_ptr<Preintegration> preint;  // from the previous key state, null for the first
    std::map<int, FrameObs> obs;
  };
  struct Feature {
    int id = 0;
    bool active = false;
    std::int64_t anchor = 0;  // key-frame number
    Vec2 anchor_obs = Vec2::Zero();  // normalized
    double lambda = 0.0;
    Vec3 p_world = Vec3::Zero();
  };

  struct VisualRef {
    FactorPtr factor;
    int feature_id;
    std::int64_t frame;
  };

  static VarId state_var(std::int64_t number);
  static VarId feature_var(int id);
  static constexpr VarId kTdVar = 1;

  Vec3 gyro_at(double t) const;
  KeyFrame* find_frame(std::int64_t number);
  void activate_features();
  void triangulate(Feature& f, const KeyFrame& anchor, const KeyFrame& other) const;
  void build_problem(Problem& problem, std::vector<VisualRef>* visual) const;
  void read_back(const Problem& problem);
  int reject_outliers(const Problem& problem, const std::vector<VisualRef>& visual);
  int marginalize_oldest();
  void relinearize_preintegrations();
  void trim_imu();

  EstimatorConfig config_;
  std::shared_ptr<const CameraModel> camera_;
  bool bootstrapped_ = false;
  InitialState init_;
  double td_ = 0.0;
  std::int64_t next_frame_ = 0;
  std::vector<ImuSample> imu_;
  std::deque<KeyFrame> frames_;
  std::map<int, Feature> features_;
  std::optional<MarginalPrior> prior_;
  std::optional<ImuKeyState> bootstrap_prior_;  // attached to frame 0 while it is in the window
  std::vector<TrajectorySample> history_;
};

}  // namespace tdvio
