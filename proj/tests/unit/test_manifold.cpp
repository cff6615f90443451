#include <gtest/gtest.h>

#include "tdvio/errors.hpp"
#include "tdvio/manifold.hpp"
#include "test_support.hpp"

using namespace tdvio;
using tdvio::test::Rng;

TEST(Manifold, ExpLogRoundTrip) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Vec3 th = test::uniform_vec(rng, -1.5, 1.5);
    EXPECT_LT((quat_log(quat_from_small_angle(th)) - th).norm(), 1e-12);
  }
  EXPECT_LT((quat_log(quat_from_small_angle(Vec3(1e-10, 0, 0))) - Vec3(1e-10, 0, 0)).norm(), 1e-20);
}

TEST(Manifold, ExpMatchesAngleAxis) {
  const Vec3 th(0.3, -0.2, 0.5);
  const Mat3 expected = Eigen::AngleAxisd(th.norm(), th.normalized()).toRotationMatrix();
  EXPECT_LT((quat_from_small_angle(th).toRotationMatrix() - expected).norm(), 1e-14);
}

TEST(Manifold, RightJacobianMatchesFiniteDifference) {
  // Exp(th + d) ~ Exp(th) Exp(Jr d)
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Vec3 th = test::uniform_vec(rng, -1.0, 1.0);
    const Quat q0 = quat_from_small_angle(th);
    Mat3 num;
    for (int k = 0; k < 3; ++k) {
      Vec3 d = Vec3::Zero();
      d[k] = 1e-6;
      const Vec3 a = quat_log(q0.conjugate() * quat_from_small_angle(th + d));
      const Vec3 b = quat_log(q0.conjugate() * quat_from_small_angle(th - d));
      num.col(k) = (a - b) / 2e-6;
    }
    EXPECT_LT((right_jacobian(th) - num).norm(), 1e-8);
    EXPECT_LT((right_jacobian_inverse(th) * right_jacobian(th) - Mat3::Identity()).norm(), 1e-12);
  }
}

TEST(Manifold, QuaternionProductMatrices) {
  Rng rng(5);
  const Quat a = test::random_quat(rng), b = test::random_quat(rng);
  const Quat ab = a * b;
  const Eigen::Vector4d expected(ab.w(), ab.x(), ab.y(), ab.z());
  const Eigen::Vector4d av(a.w(), a.x(), a.y(), a.z()), bv(b.w(), b.x(), b.y(), b.z());
  EXPECT_LT((quat_left(a) * bv - expected).norm(), 1e-14);
  EXPECT_LT((quat_right(b) * av - expected).norm(), 1e-14);
}

TEST(Manifold, BoxplusBoxminusInverse) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const ImuKeyState x = test::random_state(rng);
    ErrorState d;
    for (int k = 0; k < 15; ++k) d.vec[k] = test::uniform(rng, -0.5, 0.5);
    const ImuKeyState y = boxplus(x, d);
    EXPECT_LT((boxminus(y, x).vec - d.vec).norm(), 1e-12);
    // right perturbation
    EXPECT_LT((y.R() - x.R() * quat_from_small_angle(d.dtheta()).toRotationMatrix()).norm(), 1e-12);
    EXPECT_EQ(y.t_stamp, x.t_stamp);
    EXPECT_EQ(y.t_dj, x.t_dj);
  }
}

TEST(Manifold, OmegaBodyIsBiasCorrectedGyro) {
  ImuKeyState x;
  x.gyro_meas = Vec3(0.1, 0.2, 0.3);
  x.b_g = Vec3(0.01, 0.0, -0.01);
  EXPECT_TRUE(x.omega_body().isApprox(Vec3(0.09, 0.2, 0.31)));
}

TEST(Manifold, ValidatesExtrinsicsAndGravity) {
  CameraExtrinsics e;
  EXPECT_NO_THROW(e.validate());
  e.R_ic = -Mat3::Identity();
  EXPECT_THROW(e.validate(), InvalidArgument);

  WorldConstants w;
  EXPECT_NO_THROW(w.validate());
  w.gravity = Vec3(0, 0, -3.7);
  EXPECT_THROW(w.validate(), InvalidArgument);
  EXPECT_NO_THROW(w.validate(true));
}
