#include <random>
#include <utility>
#include <vector>

#include <benchmark/benchmark.h>

#include "tdvio/evaluation.hpp"
#include "tdvio/imu_preintegration.hpp"
#include "tdvio/nlls_solver.hpp"
#include "tdvio/simulator.hpp"
#include "tdvio/visual_factors.hpp"
#include "tdvio/window_factors.hpp"

using namespace tdvio;

namespace {

constexpr VarId kTd = 1;
VarId state_id(int k) { return 100 + k; }
VarId lambda_id(int k) { return 10000 + k; }

ImuKeyState key_state(const TruthState& s, double t) {
  ImuKeyState x;
  x.q = s.q;
  x.p = s.p;
  x.v = s.v;
  x.gyro_meas = s.omega_body;
  x.t_stamp = t;
  return x;
}

// A window of noise-free key states at 20 Hz on the default trajectory with
// inverse-depth landmarks anchored in the first frame.
struct Window {
  Problem problem;
  std::vector<VarId> anchored;
};

Window make_window(int states) {
  SimScenario scn;
  scn.noise = NoiseSpec::zero();
  const double t0 = 5.0, dt = 0.05;
  const auto imu = synth_imu(scn);
  const auto landmarks = generate_landmarks(scn);
  auto camera = std::make_shared<CameraModel>();
  camera->ext = scn.extrinsics;
  camera->K = scn.intrinsics;

  Window w;
  w.problem.add_variable(kTd, Variable::time_offset(0.0));
  std::vector<ImuKeyState> xs;
  for (int k = 0; k < states; ++k) {
    const double t = t0 + k * dt;
    xs.push_back(key_state(truth_state(scn.trajectory, t), t));
    w.problem.add_variable(state_id(k), Variable::key_state(xs.back()));
  }
  for (int k = 0; k + 1 < states; ++k) {
    auto p = std::make_shared<Preintegration>(Vec3::Zero(), Vec3::Zero(), ImuNoise{});
    for (std::size_t i = 0; i + 1 < imu.size(); ++i) {
      const ImuSample a = imu[i].sample(), b = imu[i + 1].sample();
      if (a.t >= xs[k].t_stamp - 1e-9 && b.t <= xs[k + 1].t_stamp + 1e-9) p->integrate(a, b);
    }
    w.problem.add_factor(std::make_shared<ImuFactor>(state_id(k), state_id(k + 1), p, WorldConstants{}));
  }

  const auto project = [&](const ImuKeyState& x, const Vec3& pw, Vec2* z) {
    const CompensatedPose C = compensate_pose(x, TimeOffset{x.t_dj});
    const Vec3 pc = scn.extrinsics.R_ic.transpose() * (C.R.transpose() * (pw - C.p) - scn.extrinsics.p_ic);
    if (pc.z() < 0.5) return false;
    *z = pinhole_project(pc, scn.intrinsics);
    return z->x() >= 0 && z->x() < 752 && z->y() >= 0 && z->y() < 480;
  };
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  int n = 0;
  for (const Landmark& l : landmarks) {
    Vec2 z0;
    if (!project(xs[0], l.p, &z0)) continue;
    const Vec3 pc = scn.extrinsics.R_ic.transpose() * (xs[0].R().transpose() * (l.p - xs[0].p) - scn.extrinsics.p_ic);
    const Vec2 anchor_obs(pc.x() / pc.z(), pc.y() / pc.z());
    std::vector<std::pair<int, Vec2>> seen;
    for (int k = 1; k < states; ++k) {
      Vec2 z;
      if (project(xs[k], l.p, &z)) seen.emplace_back(k, z);
    }
    if (seen.empty()) continue;
    w.problem.add_variable(lambda_id(n), Variable::inv_depth(jitter(rng) / pc.z()));
    for (const auto& [k, z] : seen)
      w.problem.add_factor(std::make_shared<VisualInvDepthFactor>(state_id(0), state_id(k), lambda_id(n), kTd,
                                                                  anchor_obs, z, 1.0, camera));
    w.anchored.push_back(lambda_id(n));
    if (++n == 150) break;
  }
  Vec15 sigma = Vec15::Constant(1e-3);
  w.problem.add_factor(std::make_shared<KeyStatePriorFactor>(state_id(0), xs[0], sigma));
  return w;
}

}  // namespace

static void BM_Preintegrate(benchmark::State& state) {
  std::vector<ImuSample> s;
  for (int k = 0; k <= 200; ++k) {
    const double t = k * 0.005;
    s.push_back({t, Vec3(0.3 * std::sin(t), 9.81, 0.1), Vec3(0.2, -0.1 * std::cos(2 * t), 0.05)});
  }
  for (auto _ : state) {
    Preintegration p(Vec3::Zero(), Vec3::Zero(), ImuNoise{});
    for (std::size_t k = 0; k + 1 < s.size(); ++k) p.integrate(s[k], s[k + 1]);
    benchmark::DoNotOptimize(p.cov());
  }
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_Preintegrate);

static void BM_InvDepthJacobian(benchmark::State& state) {
  const SimScenario scn;
  ImuKeyState xi, xj;
  xi.v = Vec3(1, 0, 0);
  xi.gyro_meas = Vec3(0.1, 0.2, 0.3);
  xj = xi;
  xj.p = Vec3(0.05, 0, 0);
  xj.t_stamp = 0.05;
  FeatureInvDepth f;
  f.anchor_obs = Vec2(0.1, -0.05);
  f.lambda = 0.25;
  Observation obs;
  obs.frame_idx = 1;
  obs.z = Vec2(380, 240);
  const auto mode = static_cast<CompensationJacobian>(state.range(0));
  for (auto _ : state) {
    InvDepthJacobians J;
    benchmark::DoNotOptimize(
        evaluate_invdepth(obs, xj, xi, f, scn.extrinsics, scn.intrinsics, TimeOffset{0.01}, mode, &J));
    benchmark::DoNotOptimize(J);
  }
}
BENCHMARK(BM_InvDepthJacobian)
    ->Arg(static_cast<int>(CompensationJacobian::kLinearizationConstant))
    ->Arg(static_cast<int>(CompensationJacobian::kFull));

static void BM_WindowSolve(benchmark::State& state) {
  const Window w = make_window(static_cast<int>(state.range(0)));
  SolverConfig cfg;
  cfg.max_iters = 5;
  for (auto _ : state) {
    Problem p = w.problem;
    benchmark::DoNotOptimize(lm_solve(p, cfg));
  }
  state.counters["factors"] = static_cast<double>(w.problem.factors().size());
}
BENCHMARK(BM_WindowSolve)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_MarginalizeOldest(benchmark::State& state) {
  const Window w = make_window(10);
  std::vector<VarId> drop{state_id(0)};
  drop.insert(drop.end(), w.anchored.begin(), w.anchored.end());
  for (auto _ : state) {
    benchmark::DoNotOptimize(marginalize_variables(w.problem, w.problem.factors(), drop));
  }
}
BENCHMARK(BM_MarginalizeOldest)->Unit(benchmark::kMillisecond);

static void BM_EstimatorFrames(benchmark::State& state) {
  SimScenario scn;
  scn.trajectory.duration = 5.0;
  const SimData data = simulate(scn);
  RunOptions opts;
  opts.config = estimator_config_for(scn);
  std::size_t frames = 0;
  for (auto _ : state) frames += run_estimator(data, opts).frames_processed;
  state.SetItemsProcessed(static_cast<std::int64_t>(frames));
}
BENCHMARK(BM_EstimatorFrames)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
