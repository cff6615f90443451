#include "tdvio/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "tdvio/errors.hpp"

namespace tdvio {

namespace {

constexpr VarId kStateBase = VarId{1} << 40;
constexpr VarId kFeatureBase = VarId{2} << 40;

bool finite_state(const ImuKeyState& x) {
  return x.q.coeffs().allFinite() && x.p.allFinite() && x.v.allFinite() && x.b_a.allFinite() &&
         x.b_g.allFinite();
}

}  // namespace

const char* to_string(Parameterization p) {
  return p == Parameterization::kXyz ? "xyz" : "invdepth";
}

Parameterization parse_parameterization(const std::string& s) {
  if (s == "xyz") return Parameterization::kXyz;
  if (s == "invdepth" || s == "inv_depth") return Parameterization::kInvDepth;
  throw InvalidArgument("unknown parameterization '" + s + "' (expected xyz or invdepth)");
}

void EstimatorConfig::validate() const {
  if (window_size < 3) throw InvalidArgument("window_size must be at least 3");
  if (!(std::abs(init_td) < 0.5)) throw InvalidArgument("|init_td| must be below 0.5 s");
  if (!(pixel_noise_px > 0.0)) throw InvalidArgument("pixel_noise_px must be positive");
  if (!(huber_threshold >= 0.0)) throw InvalidArgument("huber_threshold must be non-negative");
  if (!(min_inverse_depth > 0.0)) throw InvalidArgument("min_inverse_depth must be positive");
  if (!(outlier_threshold > 0.0)) throw InvalidArgument("outlier_threshold must be positive");
  if (!(default_depth > 0.0)) throw InvalidArgument("default_depth must be positive");
  if (solver.max_iters < 1) throw InvalidArgument("solver max_iters must be at least 1");
  for (double n : {imu_noise.accel_noise_density, imu_noise.gyro_noise_density,
                   imu_noise.accel_random_walk, imu_noise.gyro_random_walk}) {
    if (!(n > 0.0)) throw InvalidArgument("IMU noise densities must be positive");
  }
  extrinsics.validate();
  intrinsics.validate();
  world.validate();
}

Estimator::Estimator(EstimatorConfig config) : config_(std::move(config)) {
  config_.validate();
  auto camera = std::make_shared<CameraModel>();
  camera->ext = config_.extrinsics;
  camera->K = config_.intrinsics;
  camera->mode = config_.jacobian_mode;
  camera_ = std::move(camera);
  td_ = config_.init_td;
}

VarId Estimator::state_var(std::int64_t number) { return kStateBase + number; }
VarId Estimator::feature_var(int id) { return kFeatureBase + id; }

void Estimator::bootstrap(const InitialState& init) {
  if (!frames_.empty()) throw InvalidArgument("bootstrap must precede the first frame");
  init_ = init;
  bootstrapped_ = true;
}

void Estimator::process_imu(const ImuSample& s) {
  if (!imu_.empty() && !(s.t > imu_.back().t)) {
    throw NonMonotonicTimestamp("IMU sample at " + std::to_string(s.t) +
                                " s does not follow " + std::to_string(imu_.back().t) + " s");
  }
  if (!s.accel.allFinite() || !s.gyro.allFinite() || !std::isfinite(s.t)) {
    throw InvalidArgument("IMU sample is not finite");
  }
  imu_.push_back(s);
}

Vec3 Estimator::gyro_at(double t) const {
  const auto it = std::lower_bound(imu_.begin(), imu_.end(), t,
                                   [](const ImuSample& s, double v) { return s.t < v; });
  if (it == imu_.end()) throw InsufficientImu("no IMU sample at " + std::to_string(t) + " s");
  if (it->t == t) return it->gyro;
  if (it == imu_.begin()) throw InsufficientImu("no IMU sample before " + std::to_string(t) + " s");
  return interpolate(*(it - 1), *it, t).gyro;
}

Estimator::KeyFrame* Estimator::find_frame(std::int64_t number) {
  if (frames_.empty()) return nullptr;
  const std::int64_t k = number - frames_.front().number;
  if (k < 0 || k >= static_cast<std::int64_t>(frames_.size())) return nullptr;
  return &frames_[static_cast<std::size_t>(k)];
}

EstimatorOutput Estimator::process_frame(const FrameInput& frame) {
  if (!bootstrapped_) throw InitializationPending("estimator has not been bootstrapped");
  if (!frames_.empty() && !(frame.t_image > frames_.back().t_image)) {
    throw NonMonotonicTimestamp("frame at " + std::to_string(frame.t_image) +
                                " s does not follow the previous frame");
  }
  const double t_state = frame.t_image + td_;
  if (imu_.empty() || imu_.back().t < t_state || imu_.front().t > t_state) {
    throw InsufficientImu("IMU buffer does not cover key-state time " + std::to_string(t_state) +
                          " s");
  }

  KeyFrame kf;
  kf.number = next_frame_;
  kf.t_image = frame.t_image;
  ImuKeyState& x = kf.state;
  if (frames_.empty()) {
    x.q = init_.q.normalized();
    x.p = init_.p;
    x.v = init_.v;
    x.b_a = init_.b_a;
    x.b_g = init_.b_g;
  } else {
    const ImuKeyState& prev = frames_.back().state;
    if (!(t_state > prev.t_stamp)) {
      throw NonMonotonicTimestamp("key-state time " + std::to_string(t_state) +
                                  " s does not follow the previous key state");
    }
    kf.preint = std::make_shared<Preintegration>(preintegrate_interval(
        imu_, prev.t_stamp, t_state, prev.b_a, prev.b_g, config_.imu_noise));
    const Preintegration& pre = *kf.preint;
    const double dt = pre.dt_total();
    const Vec3& g = config_.world.gravity;
    const Mat3 R = prev.R();
    x.q = (prev.q * pre.gamma()).normalized();
    x.p = prev.p + prev.v * dt + 0.5 * g * dt * dt + R * pre.alpha();
    x.v = prev.v + g * dt + R * pre.beta();
    x.b_a = prev.b_a;
    x.b_g = prev.b_g;
  }
  x.t_stamp = t_state;
  x.t_dj = td_;
  x.gyro_meas = gyro_at(t_state);

  for (const FeatureTrack& tr : frame.tracks) {
    if (!tr.px.allFinite()) throw InvalidArgument("feature observation is not finite");
    if (!kf.obs.emplace(tr.feature_id, FrameObs{tr.px, false}).second) {
      throw InvalidArgument("feature id " + std::to_string(tr.feature_id) +
                            " appears twice in one frame");
    }
    if (!features_.count(tr.feature_id)) {
      Feature f;
      f.id = tr.feature_id;
      features_.emplace(tr.feature_id, f);
    }
  }
  if (frames_.empty()) bootstrap_prior_ = x;
  frames_.push_back(std::move(kf));
  ++next_frame_;

  activate_features();

  Problem problem;
  std::vector<VisualRef> visual;
  build_problem(problem, &visual);

  EstimatorOutput out;
  out.solver = lm_solve(problem, config_.solver);
  read_back(problem);
  if (!(std::abs(td_) < 0.5)) {
    throw EstimatorDiverged("time offset " + std::to_string(td_ * 1e3) +
                            " ms left the +-500 ms bound at frame " +
                            std::to_string(frames_.back().number));
  }
  for (const KeyFrame& k : frames_) {
    if (!finite_state(k.state)) {
      throw EstimatorDiverged("non-finite key state at frame " + std::to_string(k.number));
    }
  }
  out.visual_factors = static_cast<int>(visual.size());
  out.outliers_removed = reject_outliers(problem, visual);
  relinearize_preintegrations();

  if (static_cast<int>(frames_.size()) > config_.window_size) {
    out.marginalized_features = marginalize_oldest();
  }
  trim_imu();

  out.frame_index = frames_.back().number;
  out.t_image = frames_.back().t_image;
  out.state = frames_.back().state;
  out.td = td_;
  out.window_states = static_cast<int>(frames_.size());
  out.active_features = static_cast<int>(
      std::count_if(features_.begin(), features_.end(), [](const auto& kv) { return kv.second.active; }));
  out.prior_rows = prior_ ? prior_->rows() : 0;
  return out;
}

void Estimator::activate_features() {
  for (auto& [id, f] : features_) {
    if (f.active) continue;
    const KeyFrame* first = nullptr;
    const KeyFrame* last = nullptr;
    for (const KeyFrame& k : frames_) {
      auto it = k.obs.find(id);
      if (it == k.obs.end() || it->second.outlier) continue;
      if (first == nullptr) first = &k;
      last = &k;
    }
    if (first == nullptr || first == last) continue;
    triangulate(f, *first, *last);
  }
}

void Estimator::triangulate(Feature& f, const KeyFrame& anchor, const KeyFrame& other) const {
  const CameraExtrinsics& ext = config_.extrinsics;
  const Vec2 na = config_.intrinsics.normalize(anchor.obs.at(f.id).px);
  const Vec2 nb = config_.intrinsics.normalize(other.obs.at(f.id).px);
  const CompensatedPose Ca = compensate_pose(anchor.state, TimeOffset{td_});
  const CompensatedPose Cb = compensate_pose(other.state, TimeOffset{td_});
  const Vec3 ca = Ca.R * ext.p_ic + Ca.p;
  const Vec3 cb = Cb.R * ext.p_ic + Cb.p;
  const Vec3 da = Ca.R * ext.R_ic * Vec3(na.x(), na.y(), 1.0);
  const Vec3 db = Cb.R * ext.R_ic * Vec3(nb.x(), nb.y(), 1.0);

  double depth = config_.default_depth;
  const double cos_parallax = da.normalized().dot(db.normalized());
  const double parallax = std::acos(std::clamp(cos_parallax, -1.0, 1.0));
  if (parallax >= config_.min_parallax_deg * std::numbers::pi / 180.0) {
    Eigen::Matrix<double, 3, 2> A;
    A.col(0) = da;
    A.col(1) = -db;
    const Eigen::Vector2d st = A.colPivHouseholderQr().solve(cb - ca);
    if (std::isfinite(st[0]) && st[0] > 0.1 && st[1] > 0.1 &&
        1.0 / st[0] >= config_.min_inverse_depth) {
      depth = st[0];
    }
  }
  f.active = true;
  f.anchor = anchor.number;
  f.anchor_obs = na;
  f.lambda = 1.0 / depth;
  f.p_world = ca + depth * da;
}

void Estimator::build_problem(Problem& problem, std::vector<VisualRef>* visual) const {
  Variable td = Variable::time_offset(td_);
  td.fixed = !config_.calibrate_td;
  problem.add_variable(kTdVar, td);
  for (const KeyFrame& k : frames_) problem.add_variable(state_var(k.number), Variable::key_state(k.state));

  if (bootstrap_prior_ && frames_.front().number == 0) {
    Vec15 sigma;
    sigma << config_.prior_sigma_theta, config_.prior_sigma_p, config_.prior_sigma_v,
        config_.prior_sigma_ba, config_.prior_sigma_bg;
    problem.add_factor(std::make_shared<KeyStatePriorFactor>(state_var(0), *bootstrap_prior_, sigma));
  }
  if (prior_) problem.add_factor(std::make_shared<MarginalPriorFactor>(*prior_));
  for (std::size_t k = 1; k < frames_.size(); ++k) {
    problem.add_factor(std::make_shared<ImuFactor>(state_var(frames_[k - 1].number),
                                                   state_var(frames_[k].number), frames_[k].preint,
                                                   config_.world));
  }

  const bool invdepth = config_.parameterization == Parameterization::kInvDepth;
  const double sigma = config_.pixel_noise_px;
  for (const auto& [id, f] : features_) {
    if (!f.active) continue;
    bool added = false;
    for (const KeyFrame& k : frames_) {
      if (invdepth && k.number == f.anchor) continue;
      auto it = k.obs.find(id);
      if (it == k.obs.end() || it->second.outlier) continue;
      if (!added) {
        problem.add_variable(feature_var(id), invdepth ? Variable::inv_depth(f.lambda)
                                                       : Variable::feature_xyz(f.p_world));
        added = true;
      }
      std::shared_ptr<Factor> factor;
      if (invdepth) {
        factor = std::make_shared<VisualInvDepthFactor>(state_var(f.anchor), state_var(k.number),
                                                        feature_var(id), kTdVar, f.anchor_obs,
                                                        it->second.px, sigma, camera_);
      } else {
        factor = std::make_shared<VisualXyzFactor>(state_var(k.number), feature_var(id), kTdVar,
                                                   it->second.px, sigma, camera_);
      }
      factor->set_huber_threshold(config_.huber_threshold);
      problem.add_factor(factor);
      if (visual != nullptr) visual->push_back({factor, id, k.number});
    }
  }
}

void Estimator::read_back(const Problem& problem) {
  td_ = problem.variable(kTdVar).vec[0];
  for (KeyFrame& k : frames_) k.state = problem.variable(state_var(k.number)).state;
  for (auto& [id, f] : features_) {
    if (!problem.has_variable(feature_var(id))) continue;
    const Variable& v = problem.variable(feature_var(id));
    if (v.kind == VarKind::kInvDepth) {
      f.lambda = v.vec[0];
    } else {
      f.p_world = v.vec.head<3>();
    }
  }
}

int Estimator::reject_outliers(const Problem& problem, const std::vector<VisualRef>& visual) {
  int removed = 0;
  Eigen::VectorXd r(2);
  for (const VisualRef& ref : visual) {
    bool bad = false;
    try {
      ref.factor->evaluate(problem, r, nullptr);
      bad = !r.allFinite() || r.norm() > config_.outlier_threshold;
    } catch (const FactorEvaluationError&) {
      bad = true;
    }
    if (!bad) continue;
    KeyFrame* k = find_frame(ref.frame);
    if (k != nullptr) {
      k->obs.at(ref.feature_id).outlier = true;
      ++removed;
    }
  }
  // Features whose depth left the valid range are dropped entirely.
  for (auto it = features_.begin(); it != features_.end();) {
    const Feature& f = it->second;
    const bool invalid = f.active && (config_.parameterization == Parameterization::kInvDepth
                                          ? !(f.lambda >= config_.min_inverse_depth) ||
                                                !std::isfinite(f.lambda)
                                          : !f.p_world.allFinite());
    if (invalid) {
      for (KeyFrame& k : frames_) k.obs.erase(it->first);
      it = features_.erase(it);
    } else {
      ++it;
    }
  }
  return removed;
}

void Estimator::relinearize_preintegrations() {
  for (std::size_t k = 1; k < frames_.size(); ++k) {
    const ImuKeyState& prev = frames_[k - 1].state;
    Preintegration& pre = *frames_[k].preint;
    if (pre.needs_relinearization(prev.b_a, prev.b_g)) {
      auto fresh = std::make_shared<Preintegration>(pre);
      fresh->repropagate(prev.b_a, prev.b_g);
      frames_[k].preint = std::move(fresh);
    }
  }
}

int Estimator::marginalize_oldest() {
  const KeyFrame& oldest = frames_.front();
  const VarId x0 = state_var(oldest.number);

  Problem problem;
  build_problem(problem, nullptr);

  std::vector<VarId> drop{x0};
  std::set<VarId> drop_set{x0};
  for (const auto& [id, f] : features_) {
    if (f.active && f.anchor == oldest.number && problem.has_variable(feature_var(id))) {
      drop.push_back(feature_var(id));
      drop_set.insert(feature_var(id));
    }
  }
  const auto touches = [](const FactorPtr& factor, const std::set<VarId>& ids) {
    return std::any_of(factor->variables().begin(), factor->variables().end(),
                       [&](VarId v) { return ids.count(v) != 0; });
  };
  std::vector<FactorPtr> factors;
  for (const FactorPtr& factor : problem.factors()) {
    if (touches(factor, drop_set)) factors.push_back(factor);
  }

  MarginalPrior prior;
  try {
    prior = marginalize_variables(problem, factors, drop);
  } catch (const SingularBlock&) {
    // Fall back to the inertial/prior information of the oldest state alone;
    // its visual information is discarded.
    std::vector<FactorPtr> reduced;
    for (const FactorPtr& factor : factors) {
      if (factor->kind() == FactorKind::kPrior || factor->kind() == FactorKind::kInertial) {
        reduced.push_back(factor);
      }
    }
    const std::vector<VarId> only_state{x0};
    prior = marginalize_variables(problem, reduced, only_state);
  }
  if (prior.rows() > 0) {
    prior_ = std::move(prior);
  } else {
    prior_.reset();
  }

  history_.push_back({oldest.state.t_stamp, oldest.state.p, oldest.state.q, oldest.state.v});

  // Re-anchor features whose anchor leaves the window.
  int marginalized = 0;
  for (auto it = features_.begin(); it != features_.end();) {
    Feature& f = it->second;
    const int id = it->first;
    const KeyFrame* new_anchor = nullptr;
    for (std::size_t k = 1; k < frames_.size(); ++k) {
      auto o = frames_[k].obs.find(id);
      if (o != frames_[k].obs.end() && !o->second.outlier) {
        new_anchor = &frames_[k];
        break;
      }
    }
    const bool anchored_here = f.active && f.anchor == oldest.number;
    if (anchored_here) ++marginalized;
    if (new_anchor == nullptr) {
      bool seen = false;
      for (std::size_t k = 1; k < frames_.size() && !seen; ++k) seen = frames_[k].obs.count(id) != 0;
      if (!seen || anchored_here) {
        for (KeyFrame& k : frames_) k.obs.erase(id);
        it = features_.erase(it);
        continue;
      }
      ++it;
      continue;
    }
    if (anchored_here) {
      const Vec2 na = config_.intrinsics.normalize(new_anchor->obs.at(id).px);
      if (config_.parameterization == Parameterization::kInvDepth) {
        try {
          FeatureInvDepth fd;
          fd.lambda = f.lambda;
          fd.anchor_obs = f.anchor_obs;
          const Vec3 pw = feature_world_from_anchor(fd, oldest.state, config_.extrinsics,
                                                    TimeOffset{td_});
          const CompensatedPose C = compensate_pose(new_anchor->state, TimeOffset{td_});
          const Vec3 pc = config_.extrinsics.R_ic.transpose() *
                          (C.R.transpose() * (pw - C.p) - config_.extrinsics.p_ic);
          if (pc.z() > 0.1 && 1.0 / pc.z() >= config_.min_inverse_depth) {
            f.lambda = 1.0 / pc.z();
          } else {
            f.active = false;
          }
        } catch (const FactorEvaluationError&) {
          f.active = false;
        }
      }
      f.anchor = new_anchor->number;
      f.anchor_obs = na;
    }
    ++it;
  }

  if (bootstrap_prior_ && oldest.number == 0) bootstrap_prior_.reset();
  frames_.pop_front();
  frames_.front().preint.reset();
  return marginalized;
}

void Estimator::trim_imu() {
  if (frames_.empty() || imu_.size() < 2) return;
  const double t0 = frames_.front().state.t_stamp;
  auto it = std::lower_bound(imu_.begin(), imu_.end(), t0,
                             [](const ImuSample& s, double v) { return s.t < v; });
  if (it != imu_.begin()) --it;  // keep one sample at or before the oldest key state
  imu_.erase(imu_.begin(), it);
}

std::vector<TrajectorySample> Estimator::trajectory() const {
  std::vector<TrajectorySample> out = history_;
  for (const KeyFrame& k : frames_) out.push_back({k.state.t_stamp, k.state.p, k.state.q, k.state.v});
  return out;
}

}  // namespace tdvio
