#pragma once

#include "tdvio/manifold.hpp"

namespace tdvio {

/// Pinhole intrinsics for pre-undistorted observations.
struct Intrinsics {
  double fx = 458.654;
  double fy = 457.296;
  double cx = 367.215;
  double cy = 248.375;

  void validate() const;
  /// Pixel to normalized image-plane coordinates.
  Vec2 normalize(const Vec2& px) const { return {(px.x() - cx) / fx, (px.y() - cy) / fy}; }
};

struct FeatureXYZ {
  int id = 0;
  Vec3 p_world = Vec3::Zero();
};

struct FeatureInvDepth {
  int id = 0;
  double lambda = 0.2;   // 1 / depth along the anchor ray, 1/m
  int anchor_idx = 0;    // window index of the anchor key state
  Vec2 anchor_obs = Vec2::Zero();  // normalized coordinates on the anchor frame
};

struct Observation {
  int feature_id = 0;
  int frame_idx = 0;
  Vec2 z = Vec2::Zero();  // undistorted pixels
  double sigma_px = 1.0;
};

/// Camera-to-IMU clock offset: an image stamped t_image shows the scene at
/// IMU time t_image + td.
struct TimeOffset {
  double td = 0.0;  // seconds
};

inline constexpr double kMaxCompensation = 0.1;     // |td - t_dj| bound, s
inline constexpr double kMinInverseDepth = 1e-4;    // 1/m
inline constexpr double kMinCameraDepth = 1e-6;     // m

/// How the pose compensation (v * dt, omega * dt) enters the Jacobians.
enum class CompensationJacobian {
  /// Velocity and gyro bias are treated as constants at the linearization
  /// point; their columns are zero.
  kLinearizationConstant,
  /// Velocity and gyro-bias columns include the compensation terms.
  kFull,
};

struct CompensatedPose {
  Mat3 R;  // IMU to world at the image-aligned instant
  Vec3 p;
  Mat3 dR;  // R = R(q) * dR
  double delta = 0.0;  // td - t_dj
};

/// Shifts the key-state pose to the image-aligned instant with its stored
/// velocity and angular rate. Throws OffsetOutOfRange when |td - t_dj| >= 0.1 s.
CompensatedPose compensate_pose(const ImuKeyState& x, TimeOffset td);

/// Throws BehindCamera when p_cam.z <= 1e-6.
Vec2 pinhole_project(const Vec3& p_cam, const Intrinsics& K);

/// Whitened reprojection residual z - pi(p_cam) / sigma of a world point.
Vec2 residual_xyz(const Observation& obs, const ImuKeyState& x_j, const FeatureXYZ& f,
                  const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td);

struct XyzJacobians {
  Eigen::Matrix<double, 2, 15> pose = Eigen::Matrix<double, 2, 15>::Zero();
  Eigen::Matrix<double, 2, 3> feature = Eigen::Matrix<double, 2, 3>::Zero();
  Vec2 td = Vec2::Zero();
};

XyzJacobians jacobian_xyz(const Observation& obs, const ImuKeyState& x_j, const FeatureXYZ& f,
                          const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td,
                          CompensationJacobian mode = CompensationJacobian::kLinearizationConstant);

/// Residual and Jacobians in a single pass. `J` may be null.
Vec2 evaluate_xyz(const Observation& obs, const ImuKeyState& x_j, const FeatureXYZ& f,
                  const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td,
                  CompensationJacobian mode, XyzJacobians* J);

/// World position of an inverse-depth feature, lifted through the
/// compensated anchor pose. Throws DegenerateDepth when lambda < 1e-4.
Vec3 feature_world_from_anchor(const FeatureInvDepth& f, const ImuKeyState& x_i,
                               const CameraExtrinsics& ext, TimeOffset td);

/// Whitened reprojection residual of an inverse-depth feature anchored at x_i
/// and observed from x_j. Throws InvalidArgument when obs.frame_idx equals the
/// anchor index.
Vec2 residual_invdepth(const Observation& obs, const ImuKeyState& x_j, const ImuKeyState& x_i,
                       const FeatureInvDepth& f, const CameraExtrinsics& ext,
                       const Intrinsics& K, TimeOffset td);

struct InvDepthJacobians {
  Eigen::Matrix<double, 2, 15> pose_i = Eigen::Matrix<double, 2, 15>::Zero();
  Eigen::Matrix<double, 2, 15> pose_j = Eigen::Matrix<double, 2, 15>::Zero();
  Vec2 lambda = Vec2::Zero();
  Vec2 td = Vec2::Zero();
};

InvDepthJacobians jacobian_invdepth(
    const Observation& obs, const ImuKeyState& x_j, const ImuKeyState& x_i,
    const FeatureInvDepth& f, const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td,
    CompensationJacobian mode = CompensationJacobian::kLinearizationConstant);

Vec2 evaluate_invdepth(const Observation& obs, const ImuKeyState& x_j, const ImuKeyState& x_i,
                       const FeatureInvDepth& f, const CameraExtrinsics& ext,
                       const Intrinsics& K, TimeOffset td, CompensationJacobian mode,
                       InvDepthJacobians* J);

}  // namespace tdvio
