#pragma once

// Shared helpers for the unit and acceptance tests: random configurations,
// central differences on the key-state manifold and an RK4 reference
// integrator for IMU kinematics.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tdvio/imu_preintegration.hpp"
#include "tdvio/manifold.hpp"
#include "tdvio/visual_factors.hpp"

namespace tdvio::test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 uniform_vec(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Quat random_quat(Rng& rng) {
  Eigen::Vector4d c;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 4; ++i) c[i] = n(rng);
  c.normalize();
  return Quat(c[0], c[1], c[2], c[3]);
}

inline ImuKeyState random_state(Rng& rng) {
  ImuKeyState x;
  x.q = random_quat(rng);
  x.p = uniform_vec(rng, -5.0, 5.0);
  x.v = uniform_vec(rng, -2.0, 2.0);
  x.b_a = uniform_vec(rng, -0.1, 0.1);
  x.b_g = uniform_vec(rng, -0.02, 0.02);
  x.gyro_meas = uniform_vec(rng, -1.0, 1.0);
  x.t_stamp = uniform(rng, 0.0, 10.0);
  x.t_dj = uniform(rng, -0.05, 0.05);
  return x;
}

inline CameraExtrinsics random_extrinsics(Rng& rng) {
  CameraExtrinsics e;
  e.R_ic = random_quat(rng).toRotationMatrix();
  e.p_ic = uniform_vec(rng, -0.1, 0.1);
  return e;
}

/// max |A - N| / max(1, |N|) over entries.
inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
    for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
      const double d = std::abs(analytic(i, j) - numeric(i, j));
      worst = std::max(worst, d / std::max(1.0, std::abs(numeric(i, j))));
    }
  }
  return worst;
}

/// Central differences of f over the 15-dim error state of x.
inline Eigen::MatrixXd numeric_state_jacobian(
    const std::function<Eigen::VectorXd(const ImuKeyState&)>& f, const ImuKeyState& x,
    double step = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), es::kDim);
  for (int k = 0; k < es::kDim; ++k) {
    ErrorState d;
    d.vec[k] = step;
    const Eigen::VectorXd fp = f(boxplus(x, d));
    d.vec[k] = -step;
    const Eigen::VectorXd fm = f(boxplus(x, d));
    J.col(k) = (fp - fm) / (2.0 * step);
  }
  return J;
}

/// Central differences over a Euclidean argument.
inline Eigen::MatrixXd numeric_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double step = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += step;
    xm[k] -= step;
    J.col(k) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return J;
}

// ---- RK4 reference for the preintegration kinematics ----
//
// d alpha = beta, d beta = R(gamma) (a - b_a), d gamma = gamma * (0, (w - b_g) / 2)
// with a, w linear between samples. Each sample interval is split into
// `substeps` RK4 steps.

struct Rk4Deltas {
  Vec3 alpha = Vec3::Zero();
  Vec3 beta = Vec3::Zero();
  Quat gamma = Quat::Identity();
};

inline Rk4Deltas rk4_preintegrate(const std::vector<ImuSample>& samples, const Vec3& ba,
                                  const Vec3& bg, int substeps) {
  using Vec10 = Eigen::Matrix<double, 10, 1>;
  auto deriv = [&](const Vec10& y, const Vec3& a, const Vec3& w) {
    Quat g(y[6], y[7], y[8], y[9]);
    g.normalize();
    Vec10 d;
    d.segment<3>(0) = y.segment<3>(3);
    d.segment<3>(3) = g * (a - ba);
    const Vec3 om = w - bg;
    const Quat dq = g * Quat(0.0, 0.5 * om.x(), 0.5 * om.y(), 0.5 * om.z());
    d.segment<4>(6) << dq.w(), dq.x(), dq.y(), dq.z();
    return d;
  };
  Vec10 y = Vec10::Zero();
  y[6] = 1.0;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuSample& s0 = samples[i];
    const ImuSample& s1 = samples[i + 1];
    const double T = s1.t - s0.t;
    const double h = T / substeps;
    auto input = [&](double tau) {
      const double u = tau / T;
      return std::pair<Vec3, Vec3>{(1 - u) * s0.accel + u * s1.accel,
                                   (1 - u) * s0.gyro + u * s1.gyro};
    };
    for (int k = 0; k < substeps; ++k) {
      const double t0 = k * h;
      const auto [a0, w0] = input(t0);
      const auto [am, wm] = input(t0 + 0.5 * h);
      const auto [a1, w1] = input(t0 + h);
      const Vec10 k1 = deriv(y, a0, w0);
      const Vec10 k2 = deriv(y + 0.5 * h * k1, am, wm);
      const Vec10 k3 = deriv(y + 0.5 * h * k2, am, wm);
      const Vec10 k4 = deriv(y + h * k3, a1, w1);
      y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      y.segment<4>(6).normalize();
    }
  }
  Rk4Deltas out;
  out.alpha = y.segment<3>(0);
  out.beta = y.segment<3>(3);
  out.gamma = Quat(y[6], y[7], y[8], y[9]).normalized();
  return out;
}

/// Smooth random IMU signal: a constant plus two sinusoids per axis.
inline std::vector<ImuSample> random_imu_batch(Rng& rng, double duration, double rate) {
  Eigen::Matrix<double, 6, 1> c, a1, a2, f1, f2, ph;
  for (int i = 0; i < 6; ++i) {
    const bool accel = i < 3;
    c[i] = uniform(rng, -1.0, 1.0) * (accel ? 3.0 : 0.5);
    a1[i] = uniform(rng, 0.0, accel ? 2.0 : 0.8);
    a2[i] = uniform(rng, 0.0, accel ? 1.0 : 0.3);
    f1[i] = uniform(rng, 0.5, 3.0);
    f2[i] = uniform(rng, 3.0, 8.0);
    ph[i] = uniform(rng, 0.0, 6.283);
  }
  const int n = static_cast<int>(std::lround(duration * rate));
  std::vector<ImuSample> out;
  out.reserve(n + 1);
  for (int k = 0; k <= n; ++k) {
    const double t = k / rate;
    Eigen::Matrix<double, 6, 1> s;
    for (int i = 0; i < 6; ++i) {
      s[i] = c[i] + a1[i] * std::sin(f1[i] * t + ph[i]) + a2[i] * std::sin(f2[i] * t);
    }
    out.push_back({t, s.head<3>(), s.tail<3>()});
  }
  return out;
}

/// Fresh, empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tdvio_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace tdvio::test
