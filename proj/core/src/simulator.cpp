#include "tdvio/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tdvio/dataset.hpp"
#include "tdvio/errors.hpp"

namespace tdvio {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t frame_seed(std::uint64_t seed, std::int64_t t_ns) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(t_ns));
}

struct Kinematics {
  Vec3 p, v, a;
};

Kinematics sinusoid(const TrajectorySpec& s, double t) {
  Kinematics k;
  for (int i = 0; i < 3; ++i) {
    const double w = s.rate[i];
    const double arg = w * t + s.phase[i];
    k.p[i] = s.amplitude[i] * std::sin(arg);
    k.v[i] = s.amplitude[i] * w * std::cos(arg);
    k.a[i] = -s.amplitude[i] * w * w * std::sin(arg);
  }
  return k;
}

Kinematics circle(const TrajectorySpec& s, double t) {
  const double w = s.circle_rate;
  const double c = std::cos(w * t);
  const double sn = std::sin(w * t);
  const double r = s.radius;
  return {Vec3(r * c, r * sn, s.height), Vec3(-r * w * sn, r * w * c, 0.0),
          Vec3(-r * w * w * c, -r * w * w * sn, 0.0)};
}

/// Natural cubic spline second derivatives for one axis.
std::vector<double> spline_moments(const std::vector<Waypoint>& wp, int axis) {
  const std::size_t n = wp.size();
  std::vector<double> M(n, 0.0);
  if (n < 3) return M;
  // Thomas algorithm on the interior equations.
  std::vector<double> c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = wp[i].t - wp[i - 1].t;
    const double h1 = wp[i + 1].t - wp[i].t;
    const double a = h0 / 6.0;
    const double b = (h0 + h1) / 3.0;
    const double cc = h1 / 6.0;
    const double rhs = (wp[i + 1].p[axis] - wp[i].p[axis]) / h1 -
                       (wp[i].p[axis] - wp[i - 1].p[axis]) / h0;
    const double denom = b - a * c[i - 1];
    c[i] = cc / denom;
    d[i] = (rhs - a * d[i - 1]) / denom;
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    M[i] = d[i] - c[i] * M[i + 1];
    if (i == 1) break;
  }
  return M;
}

Kinematics spline(const TrajectorySpec& s, double t) {
  const auto& wp = s.waypoints;
  auto it = std::upper_bound(wp.begin(), wp.end(), t,
                             [](double v, const Waypoint& w) { return v < w.t; });
  std::size_t i = it == wp.begin() ? 0 : static_cast<std::size_t>(it - wp.begin()) - 1;
  i = std::min(i, wp.size() - 2);
  const double h = wp[i + 1].t - wp[i].t;
  const double A = (wp[i + 1].t - t) / h;
  const double B = (t - wp[i].t) / h;
  Kinematics k;
  for (int axis = 0; axis < 3; ++axis) {
    // Recomputing the moments per call keeps truth_state a pure function of
    // the spec; waypoint lists are short.
    const std::vector<double> M = spline_moments(wp, axis);
    const double y0 = wp[i].p[axis];
    const double y1 = wp[i + 1].p[axis];
    k.p[axis] = A * y0 + B * y1 + ((A * A * A - A) * M[i] + (B * B * B - B) * M[i + 1]) * h * h / 6.0;
    k.v[axis] = (y1 - y0) / h - (3.0 * A * A - 1.0) / 6.0 * h * M[i] +
                (3.0 * B * B - 1.0) / 6.0 * h * M[i + 1];
    k.a[axis] = A * M[i] + B * M[i + 1];
  }
  return k;
}

double gaussian(std::mt19937_64& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

Vec3 gaussian3(std::mt19937_64& rng) {
  const double x = gaussian(rng);
  const double y = gaussian(rng);
  const double z = gaussian(rng);
  return {x, y, z};
}

}  // namespace

const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kSinusoid3d: return "sinusoid3d";
    case TrajectoryKind::kCircle: return "circle";
    case TrajectoryKind::kWaypointSpline: return "waypoint_spline";
  }
  return "unknown";
}

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "sinusoid3d") return TrajectoryKind::kSinusoid3d;
  if (s == "circle") return TrajectoryKind::kCircle;
  if (s == "waypoint_spline") return TrajectoryKind::kWaypointSpline;
  throw InvalidArgument("unknown trajectory kind '" + s +
                        "' (expected sinusoid3d, circle or waypoint_spline)");
}

void TrajectorySpec::validate() const {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw InvalidArgument("duration must be positive");
  if (!amplitude.allFinite() || !rate.allFinite() || !phase.allFinite() ||
      !att_amplitude.allFinite() || !att_rate.allFinite()) {
    throw InvalidArgument("trajectory parameters must be finite");
  }
  if (kind == TrajectoryKind::kCircle && !(radius > 0.0)) {
    throw InvalidArgument("circle radius must be positive");
  }
  if (kind == TrajectoryKind::kWaypointSpline) {
    if (waypoints.size() < 2) throw InvalidArgument("waypoint_spline needs at least two waypoints");
    for (std::size_t i = 1; i < waypoints.size(); ++i) {
      if (!(waypoints[i].t > waypoints[i - 1].t)) {
        throw InvalidArgument("waypoint times must be strictly increasing");
      }
    }
    if (waypoints.front().t > 0.0 || waypoints.back().t < duration) {
      throw InvalidArgument("waypoints must span [0, duration]");
    }
  }
}

NoiseSpec NoiseSpec::zero() {
  NoiseSpec n;
  n.accel_noise_density = 0.0;
  n.gyro_noise_density = 0.0;
  n.accel_random_walk = 0.0;
  n.gyro_random_walk = 0.0;
  n.pixel_sigma = 0.0;
  return n;
}

ImuNoise NoiseSpec::imu() const {
  return {accel_noise_density, gyro_noise_density, accel_random_walk, gyro_random_walk};
}

void NoiseSpec::validate() const {
  for (double x : {accel_noise_density, gyro_noise_density, accel_random_walk, gyro_random_walk,
                   pixel_sigma}) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidArgument("noise parameters must be >= 0");
  }
}

CameraExtrinsics SimScenario::default_extrinsics() {
  CameraExtrinsics e;
  e.R_ic << 0.0, 0.0, 1.0,
            -1.0, 0.0, 0.0,
            0.0, -1.0, 0.0;
  e.p_ic = Vec3(0.05, 0.0, 0.02);
  return e;
}

std::int64_t SimScenario::imu_period_ns() const {
  return static_cast<std::int64_t>(std::llround(1e9 / imu_rate));
}

std::int64_t SimScenario::cam_period_ns() const {
  return static_cast<std::int64_t>(1e9 / cam_rate);
}

void SimScenario::validate() const {
  trajectory.validate();
  noise.validate();
  intrinsics.validate();
  extrinsics.validate();
  if (feature_count < 1) throw InvalidArgument("feature_count must be positive");
  if (!(room_half_extent.array() > 0.0).all()) throw InvalidArgument("room extent must be positive");
  if (image_width < 1 || image_height < 1) throw InvalidArgument("image size must be positive");
  if (!(cam_rate > 0.0) || !(imu_rate >= 10.0 * cam_rate)) {
    throw InvalidArgument("imu_rate must be at least 10x cam_rate");
  }
  if (!(std::abs(true_td) < 0.5)) throw InvalidArgument("|true_td| must be below 0.5 s");
}

TruthState truth_state(const TrajectorySpec& traj, double t) {
  // Nanosecond stamps converted to seconds can land an ulp past the end.
  if (t > traj.duration && t <= traj.duration + 1e-9) t = traj.duration;
  if (!(t >= 0.0 && t <= traj.duration)) {
    throw OutOfRange("time " + std::to_string(t) + " s outside trajectory [0, " +
                     std::to_string(traj.duration) + "]");
  }
  Kinematics k;
  switch (traj.kind) {
    case TrajectoryKind::kSinusoid3d: k = sinusoid(traj, t); break;
    case TrajectoryKind::kCircle: k = circle(traj, t); break;
    case TrajectoryKind::kWaypointSpline: k = spline(traj, t); break;
  }

  const Vec3& A = traj.att_amplitude;
  const Vec3& W = traj.att_rate;
  const double yaw = A[0] * std::sin(W[0] * t);
  const double pitch = A[1] * std::sin(W[1] * t);
  const double roll = A[2] * std::sin(W[2] * t);
  const double dyaw = A[0] * W[0] * std::cos(W[0] * t);
  const double dpitch = A[1] * W[1] * std::cos(W[1] * t);
  const double droll = A[2] * W[2] * std::cos(W[2] * t);

  TruthState s;
  s.q = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
         Eigen::AngleAxisd(roll, Vec3::UnitX()))
            .normalized();
  s.p = k.p;
  s.v = k.v;
  s.a_world = k.a;
  const double sr = std::sin(roll), cr = std::cos(roll);
  const double sp = std::sin(pitch), cp = std::cos(pitch);
  s.omega_body = Vec3(droll - dyaw * sp, dpitch * cr + dyaw * cp * sr, -dpitch * sr + dyaw * cp * cr);
  return s;
}

std::vector<Landmark> generate_landmarks(const SimScenario& scn) {
  std::mt19937_64 rng(splitmix64(scn.trajectory.seed));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3& h = scn.room_half_extent;
  // Face areas: +-x, +-y, +-z.
  const double ax = 4.0 * h.y() * h.z();
  const double ay = 4.0 * h.x() * h.z();
  const double az = 4.0 * h.x() * h.y();
  std::discrete_distribution<int> face({ax, ax, ay, ay, az, az});
  std::vector<Landmark> out;
  out.reserve(static_cast<std::size_t>(scn.feature_count));
  for (int id = 0; id < scn.feature_count; ++id) {
    const int f = face(rng);
    const int axis = f / 2;
    const double sign = (f % 2 == 0) ? 1.0 : -1.0;
    Vec3 p(unit(rng) * h.x(), unit(rng) * h.y(), unit(rng) * h.z());
    p[axis] = sign * h[axis];
    out.push_back({id, p});
  }
  return out;
}

std::vector<ImuRecord> synth_imu(const SimScenario& scn) {
  const std::int64_t period = scn.imu_period_ns();
  const double dt = static_cast<double>(period) * 1e-9;
  const double rate = 1.0 / dt;
  const NoiseSpec& n = scn.noise;
  const double sa = n.accel_noise_density * std::sqrt(rate);
  const double sg = n.gyro_noise_density * std::sqrt(rate);
  const double wa = n.accel_random_walk * std::sqrt(dt);
  const double wg = n.gyro_random_walk * std::sqrt(dt);
  const Vec3 g = WorldConstants{}.gravity;

  std::mt19937_64 rng(splitmix64(n.seed ^ 0x1d0ULL));
  Vec3 ba = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  const auto end_ns = static_cast<std::int64_t>(std::floor(scn.trajectory.duration * 1e9));
  std::vector<ImuRecord> out;
  out.reserve(static_cast<std::size_t>(end_ns / period + 1));
  for (std::int64_t t_ns = 0; t_ns <= end_ns; t_ns += period) {
    const TruthState s = truth_state(scn.trajectory, static_cast<double>(t_ns) * 1e-9);
    ImuRecord r;
    r.t_ns = t_ns;
    r.accel = s.q.conjugate() * (s.a_world - g) + ba;
    r.gyro = s.omega_body + bg;
    if (sa > 0.0) r.accel += sa * gaussian3(rng);
    if (sg > 0.0) r.gyro += sg * gaussian3(rng);
    if (wa > 0.0) ba += wa * gaussian3(rng);
    if (wg > 0.0) bg += wg * gaussian3(rng);
    out.push_back(r);
  }
  return out;
}

FrameRecord synth_frame(const SimScenario& scn, const std::vector<Landmark>& landmarks,
                        std::int64_t t_image_ns) {
  const double t = static_cast<double>(t_image_ns) * 1e-9 + scn.true_td;
  const TruthState s = truth_state(scn.trajectory, t);
  const Mat3 R_wc = s.q.toRotationMatrix() * scn.extrinsics.R_ic;
  const Vec3 c = s.q * scn.extrinsics.p_ic + s.p;
  const Mat3 R_cw = R_wc.transpose();
  const Intrinsics& K = scn.intrinsics;

  std::mt19937_64 rng(frame_seed(scn.noise.seed, t_image_ns));
  FrameRecord f;
  f.t_ns = t_image_ns;
  for (const Landmark& l : landmarks) {
    const Vec3 pc = R_cw * (l.p - c);
    if (pc.z() < 0.2) continue;
    const Vec2 px(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
    if (px.x() < 0.0 || px.y() < 0.0 || px.x() >= scn.image_width || px.y() >= scn.image_height) {
      continue;
    }
    FeatureTrack tr;
    tr.feature_id = l.id;
    tr.px = px;
    if (scn.noise.pixel_sigma > 0.0) {
      const double nx = gaussian(rng);
      const double ny = gaussian(rng);
      tr.px += scn.noise.pixel_sigma * Vec2(nx, ny);
    }
    f.tracks.push_back(tr);
  }
  return f;
}

std::vector<std::int64_t> frame_times(const SimScenario& scn) {
  const std::int64_t period = scn.cam_period_ns();
  const double margin = 0.2;
  std::vector<std::int64_t> out;
  for (std::int64_t k = 0;; ++k) {
    const std::int64_t t_ns = k * period;
    const double t = static_cast<double>(t_ns) * 1e-9;
    if (t + scn.true_td > scn.trajectory.duration - margin) break;
    if (t < margin || t + scn.true_td < margin) continue;
    out.push_back(t_ns);
  }
  return out;
}

SimData simulate(const SimScenario& scn) {
  scn.validate();
  SimData d;
  d.imu = synth_imu(scn);
  d.groundtruth.reserve(d.imu.size());
  for (const ImuRecord& r : d.imu) {
    const TruthState s = truth_state(scn.trajectory, static_cast<double>(r.t_ns) * 1e-9);
    d.groundtruth.push_back({r.t_ns, s.p, s.q, s.v});
  }
  const std::vector<Landmark> landmarks = generate_landmarks(scn);
  std::size_t visible = 0;
  for (std::int64_t t_ns : frame_times(scn)) {
    d.frames.push_back(synth_frame(scn, landmarks, t_ns));
    visible += d.frames.back().tracks.size();
  }
  if (d.frames.empty()) throw ScenarioError("scenario produces no camera frames");
  const double mean_visible = static_cast<double>(visible) / static_cast<double>(d.frames.size());
  if (mean_visible < scn.min_visible_features) {
    throw ScenarioError("average visible features per frame " + std::to_string(mean_visible) +
                        " is below the configured minimum " +
                        std::to_string(scn.min_visible_features));
  }
  return d;
}

void export_dataset(const SimScenario& scn, const std::string& out_dir) {
  write_dataset(simulate(scn), scn, out_dir);
}

}  // namespace tdvio
