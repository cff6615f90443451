#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace tdvio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

// Quaternions are Hamilton, stored/printed as (w,x,y,z), and map body to
// world. Rotation perturbations are applied on the right: R * Exp(dtheta).

Mat3 skew(const Vec3& v);

/// Exact SO(3) exponential as a unit quaternion. Falls back to the first-order
/// series below 1e-8 rad.
Quat quat_from_small_angle(const Vec3& theta);

/// Inverse of quat_from_small_angle on the shortest arc.
Vec3 quat_log(const Quat& q);

/// Right Jacobian of SO(3) and its inverse.
Mat3 right_jacobian(const Vec3& theta);
Mat3 right_jacobian_inverse(const Vec3& theta);

/// Left/right quaternion product matrices: a*b = left(a)*[b] = right(b)*[a],
/// with coefficient vectors ordered (w,x,y,z).
Eigen::Matrix4d quat_left(const Quat& q);
Eigen::Matrix4d quat_right(const Quat& q);

/// Offsets of the blocks inside a 15-dim key-state error vector.
namespace es {
inline constexpr int kTheta = 0;
inline constexpr int kPos = 3;
inline constexpr int kVel = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;
inline constexpr int kDim = 15;
}  // namespace es

struct ErrorState {
  Vec15 vec = Vec15::Zero();

  ErrorState() = default;
  explicit ErrorState(const Vec15& v) : vec(v) {}

  auto dtheta() { return vec.segment<3>(es::kTheta); }
  auto dp() { return vec.segment<3>(es::kPos); }
  auto dv() { return vec.segment<3>(es::kVel); }
  auto db_a() { return vec.segment<3>(es::kBa); }
  auto db_g() { return vec.segment<3>(es::kBg); }
  auto dtheta() const { return vec.segment<3>(es::kTheta); }
  auto dp() const { return vec.segment<3>(es::kPos); }
  auto dv() const { return vec.segment<3>(es::kVel); }
  auto db_a() const { return vec.segment<3>(es::kBa); }
  auto db_g() const { return vec.segment<3>(es::kBg); }
};

/// Navigation state attached to one sliding-window slot.
struct ImuKeyState {
  Quat q = Quat::Identity();  // body to world
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  double t_stamp = 0.0;  // IMU clock, seconds
  double t_dj = 0.0;     // offset estimate in force when the slot was created
  Vec3 gyro_meas = Vec3::Zero();  // raw gyro sample interpolated at t_stamp

  /// Bias-corrected angular velocity at t_stamp.
  Vec3 omega_body() const { return gyro_meas - b_g; }
  Mat3 R() const { return q.toRotationMatrix(); }
};

ImuKeyState boxplus(const ImuKeyState& state, const ErrorState& delta);
ErrorState boxminus(const ImuKeyState& a, const ImuKeyState& b);

struct CameraExtrinsics {
  Mat3 R_ic = Mat3::Identity();  // camera to IMU
  Vec3 p_ic = Vec3::Zero();      // camera origin in IMU frame

  /// Throws InvalidArgument when R_ic is not a proper rotation.
  void validate() const;
};

struct WorldConstants {
  Vec3 gravity{0.0, 0.0, -9.81};

  /// Throws InvalidArgument when |gravity| is outside [9.7, 9.9] and
  /// allow_any_gravity is false.
  void validate(bool allow_any_gravity = false) const;
};

}  // namespace tdvio
