#include "tdvio/imu_preintegration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "tdvio/errors.hpp"

namespace tdvio {

namespace {

constexpr double kMaxSampleInterval = 0.1;

Mat3 bottom_right(const Eigen::Matrix4d& m) { return m.block<3, 3>(1, 1); }

}  // namespace

ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t) {
  const double span = b.t - a.t;
  if (span <= 0.0) return a;
  const double s = (t - a.t) / span;
  ImuSample out;
  out.t = t;
  out.accel = (1.0 - s) * a.accel + s * b.accel;
  out.gyro = (1.0 - s) * a.gyro + s * b.gyro;
  return out;
}

Preintegration::Preintegration(const Vec3& lin_ba, const Vec3& lin_bg, const ImuNoise& noise)
    : lin_ba_(lin_ba), lin_bg_(lin_bg), noise_(noise) {}

void Preintegration::reset() {
  alpha_.setZero();
  beta_.setZero();
  gamma_ = Quat::Identity();
  dt_total_ = 0.0;
  cov_.setZero();
  jacobian_.setIdentity();
}

void Preintegration::integrate(const ImuSample& s0, const ImuSample& s1) {
  const double dt = s1.t - s0.t;
  if (!(dt > 0.0) || dt > kMaxSampleInterval) {
    throw SensorGap("IMU interval of " + std::to_string(dt) + " s at t=" + std::to_string(s0.t) +
                    " is outside (0, 0.1]");
  }
  if (!s0.accel.allFinite() || !s0.gyro.allFinite() || !s1.accel.allFinite() ||
      !s1.gyro.allFinite()) {
    throw InvalidArgument("non-finite IMU sample");
  }
  steps_.emplace_back(s0, s1);
  step(s0, s1);
}

void Preintegration::repropagate(const Vec3& lin_ba, const Vec3& lin_bg) {
  lin_ba_ = lin_ba;
  lin_bg_ = lin_bg;
  reset();
  for (const auto& [s0, s1] : steps_) step(s0, s1);
}

// Midpoint rule. Error state ordering is (alpha, beta, theta, ba, bg) with the
// attitude error applied on the right of gamma.
void Preintegration::step(const ImuSample& s0, const ImuSample& s1) {
  const double dt = s1.t - s0.t;
  const double dt2 = dt * dt;

  const Vec3 w = 0.5 * (s0.gyro + s1.gyro) - lin_bg_;
  const Vec3 wdt = w * dt;
  const Quat dq = quat_from_small_angle(wdt);
  const Mat3 E = dq.toRotationMatrix();
  const Mat3 Jr = right_jacobian(wdt);

  const Mat3 R0 = gamma_.toRotationMatrix();
  const Quat gamma1 = (gamma_ * dq).normalized();
  const Mat3 R1 = gamma1.toRotationMatrix();

  const Vec3 a0 = s0.accel - lin_ba_;
  const Vec3 a1 = s1.accel - lin_ba_;
  const Vec3 a_mid = 0.5 * (R0 * a0 + R1 * a1);

  alpha_ += beta_ * dt + 0.5 * a_mid * dt2;
  beta_ += a_mid * dt;
  gamma_ = gamma1;
  dt_total_ += dt;

  const Mat3 R1a1x = R1 * skew(a1);
  const Mat3 da_dtheta = -0.5 * R0 * skew(a0) - 0.5 * R1a1x * E.transpose();
  const Mat3 da_dba = -0.5 * (R0 + R1);
  const Mat3 da_dbg = 0.5 * R1a1x * Jr * dt;

  Mat15 F = Mat15::Identity();
  F.block<3, 3>(pi::kAlpha, pi::kBeta) = Mat3::Identity() * dt;
  F.block<3, 3>(pi::kAlpha, pi::kGamma) = 0.5 * dt2 * da_dtheta;
  F.block<3, 3>(pi::kAlpha, pi::kBa) = 0.5 * dt2 * da_dba;
  F.block<3, 3>(pi::kAlpha, pi::kBg) = 0.5 * dt2 * da_dbg;
  F.block<3, 3>(pi::kBeta, pi::kGamma) = dt * da_dtheta;
  F.block<3, 3>(pi::kBeta, pi::kBa) = dt * da_dba;
  F.block<3, 3>(pi::kBeta, pi::kBg) = dt * da_dbg;
  F.block<3, 3>(pi::kGamma, pi::kGamma) = E.transpose();
  F.block<3, 3>(pi::kGamma, pi::kBg) = -Jr * dt;

  // White measurement noise over the interval: (n_a, n_g), each with variance
  // density^2 / dt.
  Eigen::Matrix<double, 15, 6> G = Eigen::Matrix<double, 15, 6>::Zero();
  const Mat3 dth_dng = -Jr * dt;
  const Mat3 da_dna = -0.5 * (R0 + R1);
  const Mat3 da_dng = -0.5 * R1a1x * dth_dng;
  G.block<3, 3>(pi::kAlpha, 0) = 0.5 * dt2 * da_dna;
  G.block<3, 3>(pi::kAlpha, 3) = 0.5 * dt2 * da_dng;
  G.block<3, 3>(pi::kBeta, 0) = dt * da_dna;
  G.block<3, 3>(pi::kBeta, 3) = dt * da_dng;
  G.block<3, 3>(pi::kGamma, 3) = dth_dng;

  Eigen::Matrix<double, 6, 1> q;
  const double var_a = noise_.accel_noise_density * noise_.accel_noise_density / dt;
  const double var_g = noise_.gyro_noise_density * noise_.gyro_noise_density / dt;
  q << var_a, var_a, var_a, var_g, var_g, var_g;

  cov_ = F * cov_ * F.transpose() + G * q.asDiagonal() * G.transpose();
  const double rw_a = noise_.accel_random_walk * noise_.accel_random_walk * dt;
  const double rw_g = noise_.gyro_random_walk * noise_.gyro_random_walk * dt;
  cov_.block<3, 3>(pi::kBa, pi::kBa).diagonal().array() += rw_a;
  cov_.block<3, 3>(pi::kBg, pi::kBg).diagonal().array() += rw_g;
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();

  jacobian_ = F * jacobian_;
}

bool Preintegration::needs_relinearization(const Vec3& ba, const Vec3& bg,
                                           double threshold) const {
  return (ba - lin_ba_).norm() > threshold || (bg - lin_bg_).norm() > threshold;
}

CorrectedDeltas Preintegration::bias_corrected(const Vec3& ba, const Vec3& bg,
                                               double threshold) const {
  if (needs_relinearization(ba, bg, threshold)) {
    throw RelinearizationRequired("bias moved beyond the re-linearization threshold");
  }
  const Vec3 dba = ba - lin_ba_;
  const Vec3 dbg = bg - lin_bg_;
  CorrectedDeltas out;
  out.alpha = alpha_ + J_alpha_ba() * dba + J_alpha_bg() * dbg;
  out.beta = beta_ + J_beta_ba() * dba + J_beta_bg() * dbg;
  out.gamma = (gamma_ * quat_from_small_angle(J_gamma_bg() * dbg)).normalized();
  return out;
}

Mat15 Preintegration::sqrt_information() const {
  Mat15 cov = cov_;
  Eigen::LLT<Mat15> llt(cov);
  double jitter = 1e-12;
  while (llt.info() != Eigen::Success && jitter < 1.0) {
    cov = cov_ + jitter * Mat15::Identity();
    llt.compute(cov);
    jitter *= 10.0;
  }
  const Mat15 info = llt.solve(Mat15::Identity());
  Eigen::LLT<Mat15> info_llt(0.5 * (info + info.transpose()));
  return info_llt.matrixL().transpose();
}

Preintegration preintegrate_interval(std::span<const ImuSample> buffer, double t0, double t1,
                                     const Vec3& lin_ba, const Vec3& lin_bg,
                                     const ImuNoise& noise) {
  if (!(t1 > t0)) throw SensorGap("empty preintegration interval");
  if (buffer.size() < 2 || buffer.front().t > t0 || buffer.back().t < t1) {
    throw SensorGap("IMU buffer does not cover [" + std::to_string(t0) + ", " +
                    std::to_string(t1) + "]");
  }
  const auto by_time = [](const ImuSample& s, double t) { return s.t < t; };
  // First sample with t >= t0.
  auto it = std::lower_bound(buffer.begin(), buffer.end(), t0, by_time);
  ImuSample start = (it->t == t0) ? *it : interpolate(*(it - 1), *it, t0);
  start.t = t0;

  Preintegration preint(lin_ba, lin_bg, noise);
  ImuSample prev = start;
  if (it->t == t0) ++it;
  for (; it != buffer.end() && it->t < t1; ++it) {
    preint.integrate(prev, *it);
    prev = *it;
  }
  ImuSample end = (it->t == t1) ? *it : interpolate(*(it - 1), *it, t1);
  end.t = t1;
  preint.integrate(prev, end);
  return preint;
}

Vec15 imu_residual(const Preintegration& preint, const ImuKeyState& xj, const ImuKeyState& xj1,
                   const WorldConstants& world) {
  const CorrectedDeltas d = preint.bias_corrected(xj.b_a, xj.b_g);
  const double dt = preint.dt_total();
  const Mat3 RjT = xj.R().transpose();
  const Vec3& g = world.gravity;

  Vec15 r;
  r.segment<3>(pi::kAlpha) = RjT * (xj1.p - xj.p - xj.v * dt - 0.5 * g * dt * dt) - d.alpha;
  r.segment<3>(pi::kBeta) = RjT * (xj1.v - xj.v - g * dt) - d.beta;
  r.segment<3>(pi::kGamma) = 2.0 * (d.gamma.conjugate() * xj.q.conjugate() * xj1.q).vec();
  r.segment<3>(pi::kBa) = xj1.b_a - xj.b_a;
  r.segment<3>(pi::kBg) = xj1.b_g - xj.b_g;
  return r;
}

ImuResidualJacobians imu_residual_jacobians(const Preintegration& preint, const ImuKeyState& xj,
                                            const ImuKeyState& xj1, const WorldConstants& world) {
  const CorrectedDeltas d = preint.bias_corrected(xj.b_a, xj.b_g);
  const double dt = preint.dt_total();
  const Mat3 RjT = xj.R().transpose();
  const Vec3& g = world.gravity;
  const Vec3 dbg = xj.b_g - preint.lin_bg();
  const Quat rel = xj.q.conjugate() * xj1.q;
  const Quat err = d.gamma.conjugate() * rel;

  ImuResidualJacobians J;
  J.J_xj.setZero();
  J.J_xj1.setZero();

  const Vec3 dp_body = RjT * (xj1.p - xj.p - xj.v * dt - 0.5 * g * dt * dt);
  const Vec3 dv_body = RjT * (xj1.v - xj.v - g * dt);

  // position row
  J.J_xj.block<3, 3>(pi::kAlpha, es::kTheta) = skew(dp_body);
  J.J_xj.block<3, 3>(pi::kAlpha, es::kPos) = -RjT;
  J.J_xj.block<3, 3>(pi::kAlpha, es::kVel) = -RjT * dt;
  J.J_xj.block<3, 3>(pi::kAlpha, es::kBa) = -preint.J_alpha_ba();
  J.J_xj.block<3, 3>(pi::kAlpha, es::kBg) = -preint.J_alpha_bg();
  J.J_xj1.block<3, 3>(pi::kAlpha, es::kPos) = RjT;

  // velocity row
  J.J_xj.block<3, 3>(pi::kBeta, es::kTheta) = skew(dv_body);
  J.J_xj.block<3, 3>(pi::kBeta, es::kVel) = -RjT;
  J.J_xj.block<3, 3>(pi::kBeta, es::kBa) = -preint.J_beta_ba();
  J.J_xj.block<3, 3>(pi::kBeta, es::kBg) = -preint.J_beta_bg();
  J.J_xj1.block<3, 3>(pi::kBeta, es::kVel) = RjT;

  // attitude row
  J.J_xj.block<3, 3>(pi::kGamma, es::kTheta) =
      -bottom_right(quat_left(d.gamma.conjugate()) * quat_right(rel));
  J.J_xj.block<3, 3>(pi::kGamma, es::kBg) =
      -bottom_right(quat_right(err)) * right_jacobian(preint.J_gamma_bg() * dbg) *
      preint.J_gamma_bg();
  J.J_xj1.block<3, 3>(pi::kGamma, es::kTheta) = bottom_right(quat_left(err));

  // bias random walk rows
  J.J_xj.block<3, 3>(pi::kBa, es::kBa) = -Mat3::Identity();
  J.J_xj.block<3, 3>(pi::kBg, es::kBg) = -Mat3::Identity();
  J.J_xj1.block<3, 3>(pi::kBa, es::kBa) = Mat3::Identity();
  J.J_xj1.block<3, 3>(pi::kBg, es::kBg) = Mat3::Identity();
  return J;
}

}  // namespace tdvio
