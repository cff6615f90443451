#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdvio/estimator.hpp"
#include "tdvio/imu_preintegration.hpp"
#include "tdvio/visual_factors.hpp"

namespace tdvio {

enum class TrajectoryKind { kSinusoid3d, kCircle, kWaypointSpline };

const char* to_string(TrajectoryKind k);
/// Throws InvalidArgument for unknown names.
TrajectoryKind parse_trajectory_kind(const std::string& s);

struct Waypoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
};

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kSinusoid3d;
  // sinusoid3d: p_i(t) = amplitude_i * sin(rate_i * t + phase_i)
  Vec3 amplitude{2.0, 1.5, 0.5};   // m
  Vec3 rate{0.6, 0.8, 1.1};        // rad/s
  Vec3 phase{0.0, 1.0, 2.0};       // rad
  // circle: radius r in the horizontal plane at height `height`
  double radius = 3.0;       // m
  double circle_rate = 0.4;  // rad/s
  double height = 0.0;       // m
  // Attitude program, Z-Y-X Euler angles: angle_i(t) = att_amplitude_i * sin(att_rate_i * t)
  // with i = (yaw, pitch, roll).
  Vec3 att_amplitude{0.8, 0.2, 0.2};  // rad
  Vec3 att_rate{0.5, 0.9, 1.1};       // rad/s
  double duration = 60.0;             // s
  std::uint64_t seed = 1;             // landmark layout
  std::vector<Waypoint> waypoints;    // waypoint_spline only

  /// Throws InvalidArgument.
  void validate() const;
};

struct NoiseSpec {
  double accel_noise_density = 2.0e-3;
  double gyro_noise_density = 1.6968e-4;
  double accel_random_walk = 3.0e-3;
  double gyro_random_walk = 1.9393e-5;
  double pixel_sigma = 1.0;  // px
  std::uint64_t seed = 1;

  static NoiseSpec zero();
  ImuNoise imu() const;
  void validate() const;
};

struct SimScenario {
  TrajectorySpec trajectory;
  int feature_count = 1000;
  Vec3 room_half_extent{6.0, 6.0, 3.0};  // m, features lie on the faces of this box
  int min_visible_features = 50;         // average per frame
  Intrinsics intrinsics;
  int image_width = 752;
  int image_height = 480;
  CameraExtrinsics extrinsics = default_extrinsics();
  double imu_rate = 1000.0;  // Hz
  double cam_rate = 30.0;    // Hz
  double true_td = 0.0;      // s
  NoiseSpec noise;

  /// Camera looking along body +x with image x along body -y.
  static CameraExtrinsics default_extrinsics();
  std::int64_t imu_period_ns() const;
  std::int64_t cam_period_ns() const;
  void validate() const;
};

struct TruthState {
  Quat q = Quat::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a_world = Vec3::Zero();
  Vec3 omega_body = Vec3::Zero();
};

/// Closed-form state at time t. Throws OutOfRange outside [0, duration].
TruthState truth_state(const TrajectorySpec& traj, double t);

struct Landmark {
  int id = 0;
  Vec3 p = Vec3::Zero();
};

/// Feature cloud on the room faces, seeded by the trajectory seed.
std::vector<Landmark> generate_landmarks(const SimScenario& scn);

struct ImuRecord {
  std::int64_t t_ns = 0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();

  ImuSample sample() const { return {static_cast<double>(t_ns) * 1e-9, accel, gyro}; }
};

struct FrameRecord {
  std::int64_t t_ns = 0;  // camera clock
  std::vector<FeatureTrack> tracks;

  FrameInput input() const { return {static_cast<double>(t_ns) * 1e-9, tracks}; }
};

struct GroundTruthRecord {
  std::int64_t t_ns = 0;
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
};

/// IMU stream over [0, duration] with biases starting at zero.
std::vector<ImuRecord> synth_imu(const SimScenario& scn);

/// Frame stamped t_image_ns showing the scene at t_image + true_td.
FrameRecord synth_frame(const SimScenario& scn, const std::vector<Landmark>& landmarks,
                        std::int64_t t_image_ns);

/// Camera timestamps for which t_image + true_td stays inside the trajectory
/// with a 0.2 s margin on both ends.
std::vector<std::int64_t> frame_times(const SimScenario& scn);

struct SimData {
  std::vector<ImuRecord> imu;
  std::vector<FrameRecord> frames;
  std::vector<GroundTruthRecord> groundtruth;  // at IMU rate
};

/// Full synthetic dataset. Throws ScenarioError when the average visible
/// feature count falls below min_visible_features.
SimData simulate(const SimScenario& scn);

/// simulate() followed by write_dataset() into out_dir.
void export_dataset(const SimScenario& scn, const std::string& out_dir);

}  // namespace tdvio
