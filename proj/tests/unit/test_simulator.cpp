#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "tdvio/dataset.hpp"
#include "tdvio/errors.hpp"
#include "tdvio/simulator.hpp"
#include "test_support.hpp"

using namespace tdvio;

namespace {

SimScenario hover(double duration) {
  SimScenario scn;
  scn.trajectory.amplitude.setZero();
  scn.trajectory.att_amplitude.setZero();
  scn.trajectory.duration = duration;
  return scn;
}

}  // namespace

TEST(TruthState, CircleSpeed) {
  TrajectorySpec t;
  t.kind = TrajectoryKind::kCircle;
  t.radius = 5.0;
  t.circle_rate = 0.3;
  for (double s : {0.0, 3.3, 17.0}) EXPECT_NEAR(truth_state(t, s).v.norm(), 1.5, 1e-12);
}

TEST(TruthState, DerivativesMatchFiniteDifferences) {
  for (TrajectoryKind kind : {TrajectoryKind::kSinusoid3d, TrajectoryKind::kCircle}) {
    TrajectorySpec t;
    t.kind = kind;
    const double h = 1e-6;
    for (double s : {0.5, 12.25, 33.0, 59.0}) {
      const TruthState a = truth_state(t, s - h), b = truth_state(t, s + h), c = truth_state(t, s);
      EXPECT_LT(((b.p - a.p) / (2 * h) - c.v).norm(), 1e-6);
      EXPECT_LT(((b.v - a.v) / (2 * h) - c.a_world).norm(), 1e-6);
      const Vec3 w = quat_log(a.q.conjugate() * b.q) / (2 * h);
      EXPECT_LT((w - c.omega_body).norm(), 1e-6);
    }
  }
}

TEST(TruthState, WaypointSplineInterpolatesAndIsSmooth) {
  TrajectorySpec t;
  t.kind = TrajectoryKind::kWaypointSpline;
  t.duration = 12.0;
  t.waypoints = {{0.0, Vec3(0, 0, 0)}, {4.0, Vec3(2, 1, 0)}, {8.0, Vec3(0, 3, 1)}, {12.0, Vec3(-1, 0, 0)}};
  for (const auto& w : t.waypoints) EXPECT_LT((truth_state(t, w.t).p - w.p).norm(), 1e-12);
  const double h = 1e-6;
  for (double s : {1.0, 4.0 + 1e-3, 9.5}) {
    const TruthState a = truth_state(t, s - h), b = truth_state(t, s + h), c = truth_state(t, s);
    EXPECT_LT(((b.p - a.p) / (2 * h) - c.v).norm(), 1e-6);
    EXPECT_LT(((b.v - a.v) / (2 * h) - c.a_world).norm(), 1e-6);
  }
}

TEST(TruthState, InitialStateAndRange) {
  TrajectorySpec t;
  const TruthState s = truth_state(t, 0.0);
  const Vec3 expected = t.amplitude.cwiseProduct(t.phase.array().sin().matrix());
  EXPECT_LT((s.p - expected).norm(), 1e-15);
  EXPECT_LT(quat_log(s.q).norm(), 1e-15);
  EXPECT_THROW(truth_state(t, -0.1), OutOfRange);
  EXPECT_THROW(truth_state(t, t.duration + 0.1), OutOfRange);
}

TEST(SynthImu, StationaryHoverMeasuresGravityReaction) {
  SimScenario scn = hover(10.0);
  scn.noise = NoiseSpec::zero();
  for (const auto& r : synth_imu(scn)) {
    ASSERT_LT((r.accel - Vec3(0, 0, 9.81)).norm(), 1e-12);
    ASSERT_LT(r.gyro.norm(), 1e-15);
  }
}

TEST(SynthImu, WhiteNoiseVariance) {
  SimScenario scn = hover(1000.0);
  scn.noise.accel_random_walk = 0.0;
  scn.noise.gyro_random_walk = 0.0;
  const auto imu = synth_imu(scn);
  ASSERT_GE(imu.size(), 1000000u);
  Eigen::Array3d sa = Eigen::Array3d::Zero(), sg = Eigen::Array3d::Zero();
  for (const auto& r : imu) {
    sa += (r.accel - Vec3(0, 0, 9.81)).array().square();
    sg += r.gyro.array().square();
  }
  const double n = static_cast<double>(imu.size());
  const double va = scn.imu_rate * std::pow(scn.noise.accel_noise_density, 2);
  const double vg = scn.imu_rate * std::pow(scn.noise.gyro_noise_density, 2);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(sa[i] / n / va, 1.0, 0.05);
    EXPECT_NEAR(sg[i] / n / vg, 1.0, 0.05);
  }
}

TEST(SynthImu, BiasRandomWalkGrowsLinearly) {
  SimScenario scn = hover(10.0);
  scn.noise.accel_noise_density = 0.0;
  scn.noise.gyro_noise_density = 0.0;
  const int runs = 400;
  double a5 = 0, a10 = 0, g5 = 0, g10 = 0;
  for (int k = 0; k < runs; ++k) {
    scn.noise.seed = 100 + k;
    const auto imu = synth_imu(scn);
    const auto& m5 = imu[5000];
    const auto& m10 = imu.back();
    a5 += (m5.accel - Vec3(0, 0, 9.81)).squaredNorm();
    a10 += (m10.accel - Vec3(0, 0, 9.81)).squaredNorm();
    g5 += m5.gyro.squaredNorm();
    g10 += m10.gyro.squaredNorm();
  }
  const double n = 3.0 * runs;
  const double qa = std::pow(scn.noise.accel_random_walk, 2);
  const double qg = std::pow(scn.noise.gyro_random_walk, 2);
  EXPECT_NEAR(a5 / n / (qa * 5.0), 1.0, 0.1);
  EXPECT_NEAR(a10 / n / (qa * 10.0), 1.0, 0.1);
  EXPECT_NEAR(g5 / n / (qg * 5.0), 1.0, 0.1);
  EXPECT_NEAR(g10 / n / (qg * 10.0), 1.0, 0.1);
}

TEST(SynthImu, Rk4IntegrationReproducesTruth) {
  // Integrate the noise-free measurements in the world frame and compare with
  // the analytic trajectory.
  SimScenario scn;
  scn.trajectory.duration = 10.0;
  scn.noise = NoiseSpec::zero();
  const auto imu = synth_imu(scn);
  const Vec3 g = WorldConstants{}.gravity;
  const TruthState s0 = truth_state(scn.trajectory, 0.0);

  using Vec10 = Eigen::Matrix<double, 10, 1>;
  auto deriv = [&](const Vec10& y, const Vec3& a, const Vec3& w) {
    const Quat q = Quat(y[6], y[7], y[8], y[9]).normalized();
    Vec10 d;
    d.segment<3>(0) = y.segment<3>(3);
    d.segment<3>(3) = q * a + g;
    const Quat dq = q * Quat(0.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
    d.segment<4>(6) << dq.w(), dq.x(), dq.y(), dq.z();
    return d;
  };
  Vec10 y;
  y << s0.p, s0.v, s0.q.w(), s0.q.x(), s0.q.y(), s0.q.z();
  for (std::size_t k = 0; k + 1 < imu.size(); ++k) {
    const ImuSample a = imu[k].sample(), b = imu[k + 1].sample();
    const double h = b.t - a.t;
    const ImuSample m = interpolate(a, b, a.t + 0.5 * h);
    const Vec10 k1 = deriv(y, a.accel, a.gyro);
    const Vec10 k2 = deriv(y + 0.5 * h * k1, m.accel, m.gyro);
    const Vec10 k3 = deriv(y + 0.5 * h * k2, m.accel, m.gyro);
    const Vec10 k4 = deriv(y + h * k3, b.accel, b.gyro);
    y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    y.segment<4>(6).normalize();
  }
  const TruthState end = truth_state(scn.trajectory, imu.back().sample().t);
  EXPECT_LT((y.segment<3>(0) - end.p).norm(), 1e-4);
}

TEST(SynthFrame, ZeroOffsetReprojectsTruth) {
  SimScenario scn;
  scn.noise = NoiseSpec::zero();
  const auto lm = generate_landmarks(scn);
  const std::int64_t t_ns = 2'000'000'000;
  const FrameRecord f = synth_frame(scn, lm, t_ns);
  ASSERT_GT(f.tracks.size(), 50u);
  const TruthState s = truth_state(scn.trajectory, 2.0);
  const Mat3 R_wc = s.q.toRotationMatrix() * scn.extrinsics.R_ic;
  const Vec3 c = s.p + s.q * scn.extrinsics.p_ic;
  for (const auto& tr : f.tracks) {
    const Vec3 pc = R_wc.transpose() * (lm[tr.feature_id].p - c);
    EXPECT_LT((pinhole_project(pc, scn.intrinsics) - tr.px).norm(), 1e-9);
  }
}

TEST(SynthFrame, OffsetShiftsSceneTime) {
  SimScenario a, b;
  a.noise = b.noise = NoiseSpec::zero();
  b.true_td = 0.020;
  const auto lm = generate_landmarks(a);
  const FrameRecord fa = synth_frame(a, lm, 3'020'000'000);
  const FrameRecord fb = synth_frame(b, lm, 3'000'000'000);
  ASSERT_EQ(fa.tracks.size(), fb.tracks.size());
  for (std::size_t i = 0; i < fa.tracks.size(); ++i) {
    EXPECT_EQ(fa.tracks[i].feature_id, fb.tracks[i].feature_id);
    EXPECT_LT((fa.tracks[i].px - fb.tracks[i].px).norm(), 1e-9);
  }
}

TEST(SynthFrame, PixelNoiseStatistics) {
  SimScenario noisy, clean;
  clean.noise = NoiseSpec::zero();
  const auto lm = generate_landmarks(noisy);
  std::vector<double> ex, ey;
  for (std::int64_t k = 10; ex.size() < 100000; ++k) {
    const std::int64_t t = k * noisy.cam_period_ns();
    const FrameRecord fn = synth_frame(noisy, lm, t), fc = synth_frame(clean, lm, t);
    ASSERT_EQ(fn.tracks.size(), fc.tracks.size());
    for (std::size_t i = 0; i < fn.tracks.size(); ++i) {
      ex.push_back(fn.tracks[i].px.x() - fc.tracks[i].px.x());
      ey.push_back(fn.tracks[i].px.y() - fc.tracks[i].px.y());
    }
  }
  for (const auto* e : {&ex, &ey}) {
    double m = 0, v = 0;
    for (double x : *e) m += x;
    m /= e->size();
    for (double x : *e) v += (x - m) * (x - m);
    v /= e->size() - 1;
    EXPECT_LT(std::abs(m), 0.02);
    EXPECT_NEAR(std::sqrt(v), noisy.noise.pixel_sigma, 0.05 * noisy.noise.pixel_sigma);
  }
}

TEST(Simulate, VisibilityAndFrameTimes) {
  SimScenario scn;
  scn.trajectory.duration = 10.0;
  scn.true_td = 0.04;
  const SimData d = simulate(scn);
  EXPECT_EQ(d.imu.size(), 10001u);
  EXPECT_EQ(d.groundtruth.size(), d.imu.size());
  for (const auto& f : d.frames) {
    const double t = f.t_ns * 1e-9 + scn.true_td;
    EXPECT_GE(t, 0.2);
    EXPECT_LE(t, 9.8);
  }
  scn.feature_count = 20;
  EXPECT_THROW(simulate(scn), ScenarioError);
}

TEST(Simulate, ValidatesScenario) {
  SimScenario scn;
  scn.true_td = 0.6;
  EXPECT_THROW(simulate(scn), InvalidArgument);
  scn.true_td = 0.0;
  scn.imu_rate = 200.0;
  EXPECT_THROW(simulate(scn), InvalidArgument);
}

TEST(ExportDataset, DeterministicAndSeedScoped) {
  SimScenario scn;
  scn.trajectory.duration = 10.0;
  const std::string a = test::temp_dir("export_a"), b = test::temp_dir("export_b"),
                    c = test::temp_dir("export_c");
  export_dataset(scn, a);
  export_dataset(scn, b);
  for (const char* f : {"imu.csv", "frames.csv", "groundtruth.csv", "scenario.json"}) {
    EXPECT_EQ(read_file(a + "/" + f), read_file(b + "/" + f)) << f;
  }
  scn.noise.seed = 99;
  export_dataset(scn, c);
  EXPECT_NE(read_file(a + "/imu.csv"), read_file(c + "/imu.csv"));
  EXPECT_NE(read_file(a + "/frames.csv"), read_file(c + "/frames.csv"));
  EXPECT_EQ(read_file(a + "/groundtruth.csv"), read_file(c + "/groundtruth.csv"));
}

TEST(ExportDataset, RoundTrip) {
  SimScenario scn;
  scn.trajectory.duration = 10.0;
  scn.true_td = 0.03;
  const SimData d = simulate(scn);
  const std::string dir = test::temp_dir("roundtrip");
  write_dataset(d, scn, dir);
  const LoadedDataset back = read_dataset(dir);
  ASSERT_TRUE(back.has_scenario);
  ASSERT_EQ(back.data.imu.size(), d.imu.size());
  for (std::size_t i = 0; i < d.imu.size(); ++i) {
    ASSERT_EQ(back.data.imu[i].t_ns, d.imu[i].t_ns);
    ASSERT_EQ(back.data.imu[i].accel, d.imu[i].accel);
    ASSERT_EQ(back.data.imu[i].gyro, d.imu[i].gyro);
  }
  ASSERT_EQ(back.data.frames.size(), d.frames.size());
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    ASSERT_EQ(back.data.frames[i].t_ns, d.frames[i].t_ns);
    ASSERT_EQ(back.data.frames[i].tracks.size(), d.frames[i].tracks.size());
    for (std::size_t k = 0; k < d.frames[i].tracks.size(); ++k) {
      ASSERT_EQ(back.data.frames[i].tracks[k].feature_id, d.frames[i].tracks[k].feature_id);
      ASSERT_EQ(back.data.frames[i].tracks[k].px, d.frames[i].tracks[k].px);
    }
  }
  ASSERT_EQ(back.data.groundtruth.size(), d.groundtruth.size());
  for (std::size_t i = 0; i < d.groundtruth.size(); ++i) {
    ASSERT_EQ(back.data.groundtruth[i].p, d.groundtruth[i].p);
    ASSERT_EQ(back.data.groundtruth[i].q.coeffs(), d.groundtruth[i].q.coeffs());
  }
  EXPECT_EQ(scenario_to_json(back.scenario), scenario_to_json(scn));
  // text -> values -> text
  write_dataset(back.data, back.scenario, dir + "_again");
  EXPECT_EQ(read_file(dir + "/frames.csv"), read_file(dir + "_again/frames.csv"));
  std::filesystem::remove_all(dir + "_again");
}
