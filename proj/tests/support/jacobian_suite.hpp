#pragma once

// Analytic-vs-central-difference comparison over random configurations for
// the inertial residual and both visual residuals. Used by the unit tests and
// by the acceptance binary.

#include <map>
#include <string>

#include "test_support.hpp"

namespace tdvio::test {

struct VisualConfig {
  ImuKeyState x_j;
  ImuKeyState x_i;  // anchor, inverse depth only
  CameraExtrinsics ext;
  Intrinsics K;
  TimeOffset td;
  Observation obs;
  FeatureXYZ fxyz;
  FeatureInvDepth finv;
};

/// Camera pose (world from camera) of a key state at the compensated instant.
inline std::pair<Mat3, Vec3> camera_pose(const ImuKeyState& x, const CameraExtrinsics& ext,
                                         TimeOffset td) {
  const CompensatedPose C = compensate_pose(x, td);
  return {C.R * ext.R_ic, C.p + C.R * ext.p_ic};
}

inline VisualConfig random_visual_config(Rng& rng) {
  for (;;) {
    VisualConfig c;
    c.x_j = random_state(rng);
    ErrorState d;
    d.dtheta() = uniform_vec(rng, -0.2, 0.2);
    d.dp() = uniform_vec(rng, -0.5, 0.5);
    d.dv() = uniform_vec(rng, -0.5, 0.5);
    c.x_i = boxplus(c.x_j, d);
    c.x_i.gyro_meas = uniform_vec(rng, -1.0, 1.0);
    c.x_i.t_dj = c.x_j.t_dj + uniform(rng, -0.02, 0.02);
    c.ext = random_extrinsics(rng);
    c.td.td = c.x_j.t_dj + uniform(rng, -0.03, 0.03);

    // xyz feature in front of camera j
    const auto [Rj, pj] = camera_pose(c.x_j, c.ext, c.td);
    const double depth = uniform(rng, 2.0, 10.0);
    const Vec3 p_cam(uniform(rng, -0.6, 0.6) * depth, uniform(rng, -0.4, 0.4) * depth, depth);
    c.fxyz.id = 1;
    c.fxyz.p_world = Rj * p_cam + pj;

    // inverse-depth feature anchored on camera i, must be visible from j
    c.finv.id = 2;
    c.finv.anchor_idx = 0;
    c.finv.anchor_obs = Vec2(uniform(rng, -0.5, 0.5), uniform(rng, -0.4, 0.4));
    c.finv.lambda = 1.0 / uniform(rng, 2.0, 10.0);
    const auto [Ri, pi_] = camera_pose(c.x_i, c.ext, c.td);
    const Vec3 pw = Ri * (Vec3(c.finv.anchor_obs.x(), c.finv.anchor_obs.y(), 1.0) / c.finv.lambda) + pi_;
    if ((Rj.transpose() * (pw - pj)).z() < 0.5) continue;

    c.obs.feature_id = 1;
    c.obs.frame_idx = 1;
    c.obs.sigma_px = uniform(rng, 0.5, 2.0);
    c.obs.z = Vec2(uniform(rng, 0.0, 752.0), uniform(rng, 0.0, 480.0));
    return c;
  }
}

struct ImuConfig {
  Preintegration preint;
  ImuKeyState xj, xj1;
  WorldConstants world;
};

inline ImuConfig random_imu_config(Rng& rng) {
  ImuConfig c;
  const auto batch = random_imu_batch(rng, uniform(rng, 0.05, 0.3), 200.0);
  c.preint = Preintegration(uniform_vec(rng, -0.1, 0.1), uniform_vec(rng, -0.02, 0.02), ImuNoise{});
  for (std::size_t k = 0; k + 1 < batch.size(); ++k) c.preint.integrate(batch[k], batch[k + 1]);
  c.xj = random_state(rng);
  c.xj.b_a = c.preint.lin_ba() + uniform_vec(rng, -0.03, 0.03);
  c.xj.b_g = c.preint.lin_bg() + uniform_vec(rng, -0.03, 0.03);
  c.xj1 = random_state(rng);
  return c;
}

/// Worst relative error per Jacobian block over `configs` random draws.
inline std::map<std::string, double> run_jacobian_suite(int configs, std::uint64_t seed) {
  std::map<std::string, double> worst;
  auto note = [&](const std::string& key, double e) { worst[key] = std::max(worst[key], e); };
  Rng rng(seed);
  constexpr auto kFull = CompensationJacobian::kFull;

  for (int n = 0; n < configs; ++n) {
    // inertial
    const ImuConfig ic = random_imu_config(rng);
    const ImuResidualJacobians Ji = imu_residual_jacobians(ic.preint, ic.xj, ic.xj1, ic.world);
    note("imu/x_j", relative_error(Ji.J_xj, numeric_state_jacobian(
        [&](const ImuKeyState& x) -> Eigen::VectorXd {
          return imu_residual(ic.preint, x, ic.xj1, ic.world);
        }, ic.xj)));
    note("imu/x_j1", relative_error(Ji.J_xj1, numeric_state_jacobian(
        [&](const ImuKeyState& x) -> Eigen::VectorXd {
          return imu_residual(ic.preint, ic.xj, x, ic.world);
        }, ic.xj1)));

    const VisualConfig c = random_visual_config(rng);

    // xyz
    const XyzJacobians Jx = jacobian_xyz(c.obs, c.x_j, c.fxyz, c.ext, c.K, c.td, kFull);
    note("xyz/pose", relative_error(Jx.pose, numeric_state_jacobian(
        [&](const ImuKeyState& x) -> Eigen::VectorXd {
          return residual_xyz(c.obs, x, c.fxyz, c.ext, c.K, c.td);
        }, c.x_j)));
    note("xyz/feature", relative_error(Jx.feature, numeric_jacobian(
        [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
          FeatureXYZ f = c.fxyz;
          f.p_world = p;
          return residual_xyz(c.obs, c.x_j, f, c.ext, c.K, c.td);
        }, c.fxyz.p_world)));
    note("xyz/td", relative_error(Jx.td, numeric_jacobian(
        [&](const Eigen::VectorXd& t) -> Eigen::VectorXd {
          return residual_xyz(c.obs, c.x_j, c.fxyz, c.ext, c.K, TimeOffset{t[0]});
        }, Eigen::VectorXd::Constant(1, c.td.td), 1e-7)));

    // inverse depth
    const InvDepthJacobians Jd =
        jacobian_invdepth(c.obs, c.x_j, c.x_i, c.finv, c.ext, c.K, c.td, kFull);
    note("invdepth/pose_i", relative_error(Jd.pose_i, numeric_state_jacobian(
        [&](const ImuKeyState& x) -> Eigen::VectorXd {
          return residual_invdepth(c.obs, c.x_j, x, c.finv, c.ext, c.K, c.td);
        }, c.x_i)));
    note("invdepth/pose_j", relative_error(Jd.pose_j, numeric_state_jacobian(
        [&](const ImuKeyState& x) -> Eigen::VectorXd {
          return residual_invdepth(c.obs, x, c.x_i, c.finv, c.ext, c.K, c.td);
        }, c.x_j)));
    note("invdepth/lambda", relative_error(Jd.lambda, numeric_jacobian(
        [&](const Eigen::VectorXd& l) -> Eigen::VectorXd {
          FeatureInvDepth f = c.finv;
          f.lambda = l[0];
          return residual_invdepth(c.obs, c.x_j, c.x_i, f, c.ext, c.K, c.td);
        }, Eigen::VectorXd::Constant(1, c.finv.lambda))));
    note("invdepth/td", relative_error(Jd.td, numeric_jacobian(
        [&](const Eigen::VectorXd& t) -> Eigen::VectorXd {
          return residual_invdepth(c.obs, c.x_j, c.x_i, c.finv, c.ext, c.K, TimeOffset{t[0]});
        }, Eigen::VectorXd::Constant(1, c.td.td), 1e-7)));
  }
  return worst;
}

}  // namespace tdvio::test
