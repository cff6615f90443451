#pragma once

#include <span>
#include <utility>
#include <vector>

#include "tdvio/manifold.hpp"

namespace tdvio {

struct ImuSample {
  double t = 0.0;  // seconds
  Vec3 accel = Vec3::Zero();  // specific force, body frame
  Vec3 gyro = Vec3::Zero();   // body rate
};

/// Linear interpolation of two samples at time t (a.t <= t <= b.t).
ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t);

/// Continuous-time IMU noise parameters. Defaults are the simulation values
/// used throughout the evaluation.
struct ImuNoise {
  double accel_noise_density = 2.0e-3;    // m/s^2/sqrt(Hz)
  double gyro_noise_density = 1.6968e-4;  // rad/s/sqrt(Hz)
  double accel_random_walk = 3.0e-3;      // m/s^3/sqrt(Hz)
  double gyro_random_walk = 1.9393e-5;    // rad/s^2/sqrt(Hz)
};

/// Offsets of the blocks in the 15-dim preintegration residual/covariance:
/// position (alpha), velocity (beta), attitude (gamma), accel bias, gyro bias.
namespace pi {
inline constexpr int kAlpha = 0;
inline constexpr int kBeta = 3;
inline constexpr int kGamma = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;
}  // namespace pi

struct CorrectedDeltas {
  Vec3 alpha;
  Vec3 beta;
  Quat gamma;
};

/// Relative motion increments between two key states, accumulated with the
/// midpoint rule, together with their covariance and first-order bias
/// sensitivities. Raw samples are retained so the batch can be re-integrated
/// about new biases.
class Preintegration {
 public:
  Preintegration() = default;
  Preintegration(const Vec3& lin_ba, const Vec3& lin_bg, const ImuNoise& noise);

  /// Advances by one interval [s0.t, s1.t]. Throws SensorGap unless
  /// 0 < s1.t - s0.t <= 0.1 s.
  void integrate(const ImuSample& s0, const ImuSample& s1);

  /// Re-runs every stored interval about new linearization biases.
  void repropagate(const Vec3& lin_ba, const Vec3& lin_bg);

  /// First-order bias correction of alpha/beta/gamma. Throws
  /// RelinearizationRequired if either bias moved further than `threshold`.
  CorrectedDeltas bias_corrected(const Vec3& ba, const Vec3& bg, double threshold = 0.1) const;

  bool needs_relinearization(const Vec3& ba, const Vec3& bg, double threshold = 0.1) const;

  const Vec3& alpha() const { return alpha_; }
  const Vec3& beta() const { return beta_; }
  const Quat& gamma() const { return gamma_; }
  double dt_total() const { return dt_total_; }
  const Mat15& cov() const { return cov_; }
  /// d(alpha,beta,gamma,ba,bg)_end / d(same)_start, accumulated over the batch.
  const Mat15& jacobian() const { return jacobian_; }
  const Vec3& lin_ba() const { return lin_ba_; }
  const Vec3& lin_bg() const { return lin_bg_; }
  const ImuNoise& noise() const { return noise_; }
  std::size_t num_intervals() const { return steps_.size(); }

  Mat3 J_alpha_ba() const { return jacobian_.block<3, 3>(pi::kAlpha, pi::kBa); }
  Mat3 J_alpha_bg() const { return jacobian_.block<3, 3>(pi::kAlpha, pi::kBg); }
  Mat3 J_beta_ba() const { return jacobian_.block<3, 3>(pi::kBeta, pi::kBa); }
  Mat3 J_beta_bg() const { return jacobian_.block<3, 3>(pi::kBeta, pi::kBg); }
  Mat3 J_gamma_bg() const { return jacobian_.block<3, 3>(pi::kGamma, pi::kBg); }

  /// Upper-triangular whitening matrix L^T with L L^T = cov^{-1}.
  Mat15 sqrt_information() const;

 private:
  void reset();
  void step(const ImuSample& s0, const ImuSample& s1);

  Vec3 lin_ba_ = Vec3::Zero();
  Vec3 lin_bg_ = Vec3::Zero();
  ImuNoise noise_;

  Vec3 alpha_ = Vec3::Zero();
  Vec3 beta_ = Vec3::Zero();
  Quat gamma_ = Quat::Identity();
  double dt_total_ = 0.0;
  Mat15 cov_ = Mat15::Zero();
  Mat15 jacobian_ = Mat15::Identity();

  std::vector<std::pair<ImuSample, ImuSample>> steps_;
};

/// Preintegrates a buffer over [t0, t1]. Boundary samples are linearly
/// interpolated to the exact endpoints. Throws SensorGap when the buffer does
/// not cover the interval.
Preintegration preintegrate_interval(std::span<const ImuSample> buffer, double t0, double t1,
                                     const Vec3& lin_ba, const Vec3& lin_bg,
                                     const ImuNoise& noise);

/// 15-dim inertial residual, predicted minus preintegrated, not whitened.
/// Blocks follow the pi:: layout.
Vec15 imu_residual(const Preintegration& preint, const ImuKeyState& xj, const ImuKeyState& xj1,
                   const WorldConstants& world);

struct ImuResidualJacobians {
  Mat15 J_xj;   // d r / d error-state(xj)
  Mat15 J_xj1;  // d r / d error-state(xj1)
};

ImuResidualJacobians imu_residual_jacobians(const Preintegration& preint, const ImuKeyState& xj,
                                            const ImuKeyState& xj1, const WorldConstants& world);

}  // namespace tdvio
