#include "tdvio/manifold.hpp"

#include <cmath>

#include "tdvio/errors.hpp"

namespace tdvio {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Quat quat_from_small_angle(const Vec3& theta) {
  const double n = theta.norm();
  if (n < 1e-8) {
    Quat q(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * n;
  const Vec3 axis = theta / n;
  const double s = std::sin(half);
  return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 vec = q.vec();
  const double n = vec.norm();
  if (n < 1e-10) return 2.0 * vec / q.w();
  return 2.0 * std::atan2(n, q.w()) * vec / n;
}

Mat3 right_jacobian(const Vec3& theta) {
  const double n = theta.norm();
  const Mat3 K = skew(theta);
  if (n < 1e-6) return Mat3::Identity() - 0.5 * K + K * K / 6.0;
  const double n2 = n * n;
  return Mat3::Identity() - (1.0 - std::cos(n)) / n2 * K +
         (n - std::sin(n)) / (n2 * n) * K * K;
}

Mat3 right_jacobian_inverse(const Vec3& theta) {
  const double n = theta.norm();
  const Mat3 K = skew(theta);
  if (n < 1e-6) return Mat3::Identity() + 0.5 * K + K * K / 12.0;
  const double n2 = n * n;
  const double c = 1.0 / n2 - (1.0 + std::cos(n)) / (2.0 * n * std::sin(n));
  return Mat3::Identity() + 0.5 * K + c * K * K;
}

Eigen::Matrix4d quat_left(const Quat& q) {
  Eigen::Matrix4d m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() + skew(q.vec());
  return m;
}

Eigen::Matrix4d quat_right(const Quat& q) {
  Eigen::Matrix4d m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() - skew(q.vec());
  return m;
}

ImuKeyState boxplus(const ImuKeyState& state, const ErrorState& delta) {
  ImuKeyState out = state;
  out.q = (state.q * quat_from_small_angle(delta.dtheta())).normalized();
  out.p += delta.dp();
  out.v += delta.dv();
  out.b_a += delta.db_a();
  out.b_g += delta.db_g();
  return out;
}

ErrorState boxminus(const ImuKeyState& a, const ImuKeyState& b) {
  ErrorState d;
  d.dtheta() = quat_log(b.q.conjugate() * a.q);
  d.dp() = a.p - b.p;
  d.dv() = a.v - b.v;
  d.db_a() = a.b_a - b.b_a;
  d.db_g() = a.b_g - b.b_g;
  return d;
}

void CameraExtrinsics::validate() const {
  if (!R_ic.allFinite() || !p_ic.allFinite()) {
    throw InvalidArgument("camera extrinsics contain non-finite values");
  }
  const double ortho = (R_ic.transpose() * R_ic - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9 || std::abs(R_ic.determinant() - 1.0) > 1e-9) {
    throw InvalidArgument("camera extrinsic rotation is not orthonormal with det +1");
  }
}

void WorldConstants::validate(bool allow_any_gravity) const {
  if (!gravity.allFinite()) throw InvalidArgument("gravity is not finite");
  const double g = gravity.norm();
  if (!allow_any_gravity && (g < 9.7 || g > 9.9)) {
    throw InvalidArgument("gravity magnitude outside [9.7, 9.9] m/s^2");
  }
}

}  // namespace tdvio
