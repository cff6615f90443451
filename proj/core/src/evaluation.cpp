#include "tdvio/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include <Eigen/Geometry>

#include "tdvio/errors.hpp"

namespace tdvio {

std::vector<TrajectoryRecord> to_records(const std::vector<GroundTruthRecord>& gt) {
  std::vector<TrajectoryRecord> out;
  out.reserve(gt.size());
  for (const auto& r : gt) out.push_back({static_cast<double>(r.t_ns) * 1e-9, r.p, r.q});
  return out;
}

std::vector<TrajectoryRecord> to_records(const std::vector<TrajectorySample>& est) {
  std::vector<TrajectoryRecord> out;
  out.reserve(est.size());
  for (const auto& s : est) out.push_back({s.t, s.p, s.q});
  return out;
}

double rmse_ate(const std::vector<TrajectoryRecord>& est, const std::vector<TrajectoryRecord>& gt) {
  if (gt.size() < 2) throw InsufficientOverlap("ground truth has fewer than two records");
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  for (const TrajectoryRecord& e : est) {
    if (e.t < gt.front().t || e.t > gt.back().t) continue;
    auto it = std::lower_bound(gt.begin(), gt.end(), e.t,
                               [](const TrajectoryRecord& r, double t) { return r.t < t; });
    Vec3 p;
    if (it->t == e.t) {
      p = it->p;
    } else {
      const auto& a = *(it - 1);
      const double s = (e.t - a.t) / (it->t - a.t);
      p = (1.0 - s) * a.p + s * it->p;
    }
    src.push_back(e.p);
    dst.push_back(p);
  }
  if (src.size() < 10) {
    throw InsufficientOverlap("only " + std::to_string(src.size()) +
                              " estimates overlap the ground truth (need 10)");
  }
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd S(3, n), D(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    S.col(i) = src[static_cast<std::size_t>(i)];
    D.col(i) = dst[static_cast<std::size_t>(i)];
  }
  const Eigen::Matrix4d T = Eigen::umeyama(S, D, false);
  const Eigen::Matrix3Xd aligned = (T.topLeftCorner<3, 3>() * S).colwise() + T.topRightCorner<3, 1>();
  const double mse = (aligned - D).colwise().squaredNorm().mean();
  return std::sqrt(mse) * 100.0;
}

GroundTruthRecord interpolate_groundtruth(const std::vector<GroundTruthRecord>& gt, double t) {
  if (gt.empty()) throw OutOfRange("empty ground truth");
  const auto t_ns = static_cast<double>(t) * 1e9;
  if (t_ns < static_cast<double>(gt.front().t_ns) || t_ns > static_cast<double>(gt.back().t_ns)) {
    throw OutOfRange("time " + std::to_string(t) + " s outside ground truth");
  }
  auto it = std::lower_bound(gt.begin(), gt.end(), t_ns, [](const GroundTruthRecord& r, double v) {
    return static_cast<double>(r.t_ns) < v;
  });
  if (it == gt.begin()) return *it;
  const auto& a = *(it - 1);
  const auto& b = *it;
  const double s = (t_ns - static_cast<double>(a.t_ns)) / static_cast<double>(b.t_ns - a.t_ns);
  GroundTruthRecord out;
  out.t_ns = static_cast<std::int64_t>(std::llround(t_ns));
  out.p = (1.0 - s) * a.p + s * b.p;
  out.v = (1.0 - s) * a.v + s * b.v;
  out.q = a.q.slerp(s, b.q).normalized();
  return out;
}

EstimatorConfig estimator_config_for(const SimScenario& scn) {
  EstimatorConfig c;
  c.intrinsics = scn.intrinsics;
  c.extrinsics = scn.extrinsics;
  const NoiseSpec& n = scn.noise;
  if (n.accel_noise_density > 0.0 && n.gyro_noise_density > 0.0 && n.accel_random_walk > 0.0 &&
      n.gyro_random_walk > 0.0) {
    c.imu_noise = n.imu();
  }
  if (n.pixel_sigma > 0.0) c.pixel_noise_px = n.pixel_sigma;
  return c;
}

RunResult run_estimator(const SimData& data, const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  if (data.groundtruth.empty()) {
    throw DataError("ground truth is required to bootstrap the estimator");
  }
  if (data.frames.empty() || data.imu.size() < 2) throw DataError("dataset has no frames or IMU");

  Estimator est(opts.config);
  RunResult result;
  std::size_t next_imu = 0;
  const auto feed_until = [&](double t) {
    while (next_imu < data.imu.size() && data.imu[next_imu].sample().t <= t) {
      est.process_imu(data.imu[next_imu].sample());
      ++next_imu;
    }
    // One more sample so the buffer brackets t.
    if (next_imu < data.imu.size()) {
      est.process_imu(data.imu[next_imu].sample());
      ++next_imu;
    }
  };

  for (std::size_t k = 0; k < data.frames.size(); ++k) {
    const FrameInput frame = data.frames[k].input();
    const double t_key = frame.t_image + est.current_time_offset();
    if (k == 0) {
      const GroundTruthRecord g = interpolate_groundtruth(data.groundtruth, t_key);
      InitialState init;
      init.q = g.q;
      init.p = g.p;
      init.v = g.v + opts.velocity_perturbation;
      est.bootstrap(init);
    }
    if (t_key > data.imu.back().sample().t) break;  // stream ends before this frame's key state
    feed_until(t_key);
    EstimatorOutput out;
    try {
      out = est.process_frame(frame);
    } catch (const Error& e) {
      const std::string msg = "frame " + std::to_string(k) + ": " + e.what();
      if (dynamic_cast<const EstimatorDiverged*>(&e)) throw EstimatorDiverged(msg);
      if (dynamic_cast<const SolverDiverged*>(&e)) throw SolverDiverged(msg);
      if (dynamic_cast<const InsufficientImu*>(&e)) throw InsufficientImu(msg);
      if (dynamic_cast<const SingularBlock*>(&e)) throw SingularBlock(msg);
      throw DataError(msg);
    }
    result.td_trace.push_back({frame.t_image, out.td * 1e3, out.solver.final_cost});
    result.dropped_factors += out.solver.dropped_factors;
    result.outliers_removed += out.outliers_removed;
    ++result.frames_processed;
    if (opts.on_frame) opts.on_frame(out);
  }
  if (result.frames_processed == 0) throw DataError("no frame could be processed");
  result.trajectory = est.trajectory();
  result.final_td_ms = est.current_time_offset() * 1e3;
  const auto gt = to_records(data.groundtruth);
  try {
    result.ate_cm = rmse_ate(to_records(result.trajectory), gt);
  } catch (const InsufficientOverlap&) {
    result.ate_cm.reset();
  }
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<SweepCell> run_sweep(const SweepSpec& spec) {
  std::vector<SweepCell> cells;
  for (double off : spec.offsets_ms) {
    for (std::uint64_t seed : spec.seeds) {
      for (bool cal : {true, false}) {
        SweepCell c;
        c.offset_ms = off;
        c.seed = seed;
        c.calibrate = cal;
        cells.push_back(c);
      }
    }
  }

  const auto run_cell = [&](SweepCell& c) {
    try {
      SimScenario scn = spec.base;
      scn.true_td = c.offset_ms * 1e-3;
      scn.noise.seed = c.seed;
      scn.trajectory.seed = c.seed;
      const SimData data = simulate(scn);
      RunOptions opts;
      opts.config = spec.config ? *spec.config : estimator_config_for(scn);
      opts.config.calibrate_td = c.calibrate;
      opts.config.init_td = spec.init_td_ms * 1e-3;
      const RunResult r = run_estimator(data, opts);
      c.estimated_td_ms = r.final_td_ms;
      c.ate_cm = r.ate_cm;
    } catch (const std::exception& e) {
      c.error = e.what();
    }
  };

  const int jobs = std::max(1, spec.jobs);
  if (jobs == 1) {
    for (SweepCell& c : cells) run_cell(c);
    return cells;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
    });
  }
  for (std::thread& t : pool) t.join();
  return cells;
}

}  // namespace tdvio
