#include "tdvio/visual_factors.hpp"

#include <cmath>
#include <string>

#include "tdvio/errors.hpp"

namespace tdvio {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

// d pi / d p_cam, in pixels per meter.
Mat23 projection_jacobian(const Vec3& p_cam, const Intrinsics& K) {
  const double inv_z = 1.0 / p_cam.z();
  const double inv_z2 = inv_z * inv_z;
  Mat23 J;
  J << K.fx * inv_z, 0.0, -K.fx * p_cam.x() * inv_z2,
       0.0, K.fy * inv_z, -K.fy * p_cam.y() * inv_z2;
  return J;
}

void check_sigma(const Observation& obs) {
  if (!(obs.sigma_px > 0.0)) throw InvalidArgument("observation sigma must be positive");
}

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("focal lengths must be positive");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw InvalidArgument("principal point not finite");
}

CompensatedPose compensate_pose(const ImuKeyState& x, TimeOffset td) {
  const double delta = td.td - x.t_dj;
  if (!(std::abs(delta) < kMaxCompensation)) {
    throw OffsetOutOfRange("time-offset compensation of " + std::to_string(delta) +
                           " s exceeds the 0.1 s bound");
  }
  CompensatedPose out;
  out.delta = delta;
  out.dR = quat_from_small_angle(x.omega_body() * delta).toRotationMatrix();
  out.R = x.R() * out.dR;
  out.p = x.p + x.v * delta;
  return out;
}

Vec2 pinhole_project(const Vec3& p_cam, const Intrinsics& K) {
  if (!(p_cam.z() > kMinCameraDepth)) {
    throw BehindCamera("point at depth " + std::to_string(p_cam.z()) + " m is behind the camera");
  }
  return {K.fx * p_cam.x() / p_cam.z() + K.cx, K.fy * p_cam.y() / p_cam.z() + K.cy};
}

Vec2 evaluate_xyz(const Observation& obs, const ImuKeyState& x_j, const FeatureXYZ& f,
                  const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td,
                  CompensationJacobian mode, XyzJacobians* J) {
  check_sigma(obs);
  const CompensatedPose C = compensate_pose(x_j, td);
  const Mat3 RcT = C.R.transpose();
  const Vec3 p_imu = RcT * (f.p_world - C.p);
  const Vec3 p_cam = ext.R_ic.transpose() * (p_imu - ext.p_ic);
  const double inv_sigma = 1.0 / obs.sigma_px;
  const Vec2 r = (obs.z - pinhole_project(p_cam, K)) * inv_sigma;
  if (J == nullptr) return r;

  const Mat23 dr_dpimu = -inv_sigma * projection_jacobian(p_cam, K) * ext.R_ic.transpose();
  const Vec3 omega = x_j.omega_body();
  const Mat3 p_imu_x = skew(p_imu);

  J->pose.setZero();
  J->pose.block<2, 3>(0, es::kTheta) = dr_dpimu * p_imu_x * C.dR.transpose();
  J->pose.block<2, 3>(0, es::kPos) = -dr_dpimu * RcT;
  if (mode == CompensationJacobian::kFull) {
    J->pose.block<2, 3>(0, es::kVel) = -dr_dpimu * RcT * C.delta;
    J->pose.block<2, 3>(0, es::kBg) =
        -dr_dpimu * p_imu_x * right_jacobian(omega * C.delta) * C.delta;
  }
  J->feature = dr_dpimu * RcT;
  J->td = dr_dpimu * (p_imu_x * omega - RcT * x_j.v);
  return r;
}

Vec2 residual_xyz(const Observation& obs, const ImuKeyState& x_j, const FeatureXYZ& f,
                  const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td) {
  return evaluate_xyz(obs, x_j, f, ext, K, td, CompensationJacobian::kLinearizationConstant,
                      nullptr);
}

XyzJacobians jacobian_xyz(const Observation& obs, const ImuKeyState& x_j, const FeatureXYZ& f,
                          const CameraExtrinsics& ext, const Intrinsics& K, TimeOffset td,
                          CompensationJacobian mode) {
  XyzJacobians J;
  evaluate_xyz(obs, x_j, f, ext, K, td, mode, &J);
  return J;
}

Vec3 feature_world_from_anchor(const FeatureInvDepth& f, const ImuKeyState& x_i,
                               const CameraExtrinsics& ext, TimeOffset td) {
  if (!(f.lambda >= kMinInverseDepth)) {
    throw DegenerateDepth("inverse depth " + std::to_string(f.lambda) + " below minimum");
  }
  const CompensatedPose Ci = compensate_pose(x_i, td);
  const Vec3 p_cam_i = Vec3(f.anchor_obs.x(), f.anchor_obs.y(), 1.0) / f.lambda;
  return Ci.R * (ext.R_ic * p_cam_i + ext.p_ic) + Ci.p;
}

Vec2 evaluate_invdepth(const Observation& obs, const ImuKeyState& x_j, const ImuKeyState& x_i,
                       const FeatureInvDepth& f, const CameraExtrinsics& ext,
                       const Intrinsics& K, TimeOffset td, CompensationJacobian mode,
                       InvDepthJacobians* J) {
  check_sigma(obs);
  if (obs.frame_idx == f.anchor_idx) {
    throw InvalidArgument("inverse-depth residual needs distinct anchor and target frames");
  }
  if (!(f.lambda >= kMinInverseDepth)) {
    throw DegenerateDepth("inverse depth " + std::to_string(f.lambda) + " below minimum");
  }
  const CompensatedPose Ci = compensate_pose(x_i, td);
  const CompensatedPose Cj = compensate_pose(x_j, td);
  const Vec3 ray(f.anchor_obs.x(), f.anchor_obs.y(), 1.0);
  const Vec3 p_cam_i = ray / f.lambda;
  const Vec3 p_imu_i = ext.R_ic * p_cam_i + ext.p_ic;
  const Vec3 p_world = Ci.R * p_imu_i + Ci.p;
  const Mat3 RjT = Cj.R.transpose();
  const Vec3 p_imu_j = RjT * (p_world - Cj.p);
  const Vec3 p_cam_j = ext.R_ic.transpose() * (p_imu_j - ext.p_ic);
  const double inv_sigma = 1.0 / obs.sigma_px;
  const Vec2 r = (obs.z - pinhole_project(p_cam_j, K)) * inv_sigma;
  if (J == nullptr) return r;

  const Mat23 dr_dpimu_j = -inv_sigma * projection_jacobian(p_cam_j, K) * ext.R_ic.transpose();
  const Mat23 dr_dpworld = dr_dpimu_j * RjT;
  const Vec3 omega_i = x_i.omega_body();
  const Vec3 omega_j = x_j.omega_body();
  const Mat3 p_imu_i_x = skew(p_imu_i);
  const Mat3 p_imu_j_x = skew(p_imu_j);

  J->pose_i.setZero();
  J->pose_j.setZero();
  J->pose_i.block<2, 3>(0, es::kTheta) = -dr_dpworld * Ci.R * p_imu_i_x * Ci.dR.transpose();
  J->pose_i.block<2, 3>(0, es::kPos) = dr_dpworld;
  J->pose_j.block<2, 3>(0, es::kTheta) = dr_dpimu_j * p_imu_j_x * Cj.dR.transpose();
  J->pose_j.block<2, 3>(0, es::kPos) = -dr_dpworld;
  if (mode == CompensationJacobian::kFull) {
    J->pose_i.block<2, 3>(0, es::kVel) = dr_dpworld * Ci.delta;
    J->pose_i.block<2, 3>(0, es::kBg) =
        dr_dpworld * Ci.R * p_imu_i_x * right_jacobian(omega_i * Ci.delta) * Ci.delta;
    J->pose_j.block<2, 3>(0, es::kVel) = -dr_dpworld * Cj.delta;
    J->pose_j.block<2, 3>(0, es::kBg) =
        -dr_dpimu_j * p_imu_j_x * right_jacobian(omega_j * Cj.delta) * Cj.delta;
  }
  J->lambda = dr_dpworld * Ci.R * ext.R_ic * (-ray / (f.lambda * f.lambda));
  J->td = dr_dpworld * (-Ci.R * p_imu_i_x * omega_i + x_i.v - x_j.v) +
          dr_dpimu_j * p_imu_j_x * omega_j;
  return r;
}

Vec2 residual_invdepth(const Observation& obs, const ImuKeyState& x_j, const ImuKeyState& x_i,
                       const FeatureInvDepth& f, const CameraExtrinsics& ext,
                       const Intrinsics& K, TimeOffset td) {
  return evaluate_invdepth(obs, x_j, x_i, f, ext, K, td,
                           CompensationJacobian::kLinearizationConstant, nullptr);
}

InvDepthJacobians jacobian_invdepth(const Observation& obs, const ImuKeyState& x_j,
                                    const ImuKeyState& x_i, const FeatureInvDepth& f,
                                    const CameraExtrinsics& ext, const Intrinsics& K,
                                    TimeOffset td, CompensationJacobian mode) {
  InvDepthJacobians J;
  evaluate_invdepth(obs, x_j, x_i, f, ext, K, td, mode, &J);
  return J;
}

}  // namespace tdvio
