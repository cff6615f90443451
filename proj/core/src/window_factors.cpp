#include "tdvio/window_factors.hpp"

#include "tdvio/errors.hpp"

namespace tdvio {

ImuFactor::ImuFactor(VarId xj, VarId xj1, std::shared_ptr<const Preintegration> preint,
                     const WorldConstants& world)
    : Factor(FactorKind::kInertial, {xj, xj1}, es::kDim),
      preint_(std::move(preint)),
      world_(world),
      sqrt_info_(preint_->sqrt_information()) {}

void ImuFactor::evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                         Eigen::MatrixXd* J) const {
  const ImuKeyState& a = problem.variable(variables()[0]).state;
  const ImuKeyState& b = problem.variable(variables()[1]).state;
  const Preintegration* pre = preint_.get();
  Preintegration relinearized;
  if (pre->needs_relinearization(a.b_a, a.b_g)) {
    relinearized = *pre;
    relinearized.repropagate(a.b_a, a.b_g);
    pre = &relinearized;
  }
  r = sqrt_info_ * imu_residual(*pre, a, b, world_);
  if (J != nullptr) {
    const ImuResidualJacobians Jr = imu_residual_jacobians(*pre, a, b, world_);
    J->leftCols<es::kDim>() = sqrt_info_ * Jr.J_xj;
    J->rightCols<es::kDim>() = sqrt_info_ * Jr.J_xj1;
  }
}

VisualXyzFactor::VisualXyzFactor(VarId xj, VarId feature, VarId td, const Vec2& z, double sigma_px,
                                 std::shared_ptr<const CameraModel> camera)
    : Factor(FactorKind::kVisualXyz, {xj, feature, td}, 2),
      z_(z),
      sigma_px_(sigma_px),
      camera_(std::move(camera)) {}

void VisualXyzFactor::evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                               Eigen::MatrixXd* J) const {
  const ImuKeyState& x = problem.variable(variables()[0]).state;
  FeatureXYZ f;
  f.p_world = problem.variable(variables()[1]).vec.head<3>();
  const TimeOffset td{problem.variable(variables()[2]).vec[0]};
  Observation obs;
  obs.z = z_;
  obs.sigma_px = sigma_px_;
  if (J == nullptr) {
    r = evaluate_xyz(obs, x, f, camera_->ext, camera_->K, td, camera_->mode, nullptr);
    return;
  }
  XyzJacobians Jx;
  r = evaluate_xyz(obs, x, f, camera_->ext, camera_->K, td, camera_->mode, &Jx);
  J->leftCols<es::kDim>() = Jx.pose;
  J->middleCols<3>(es::kDim) = Jx.feature;
  J->col(es::kDim + 3) = Jx.td;
}

VisualInvDepthFactor::VisualInvDepthFactor(VarId xi, VarId xj, VarId lambda, VarId td,
                                           const Vec2& anchor_obs, const Vec2& z, double sigma_px,
                                           std::shared_ptr<const CameraModel> camera)
    : Factor(FactorKind::kVisualInvDepth, {xi, xj, lambda, td}, 2),
      anchor_obs_(anchor_obs),
      z_(z),
      sigma_px_(sigma_px),
      camera_(std::move(camera)) {
  if (xi == xj) throw InvalidArgument("inverse-depth factor needs distinct anchor and target");
}

void VisualInvDepthFactor::evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                                    Eigen::MatrixXd* J) const {
  const ImuKeyState& xi = problem.variable(variables()[0]).state;
  const ImuKeyState& xj = problem.variable(variables()[1]).state;
  FeatureInvDepth f;
  f.lambda = problem.variable(variables()[2]).vec[0];
  f.anchor_idx = 0;
  f.anchor_obs = anchor_obs_;
  const TimeOffset td{problem.variable(variables()[3]).vec[0]};
  Observation obs;
  obs.frame_idx = 1;
  obs.z = z_;
  obs.sigma_px = sigma_px_;
  if (J == nullptr) {
    r = evaluate_invdepth(obs, xj, xi, f, camera_->ext, camera_->K, td, camera_->mode, nullptr);
    return;
  }
  InvDepthJacobians Jd;
  r = evaluate_invdepth(obs, xj, xi, f, camera_->ext, camera_->K, td, camera_->mode, &Jd);
  J->leftCols<es::kDim>() = Jd.pose_i;
  J->middleCols<es::kDim>(es::kDim) = Jd.pose_j;
  J->col(2 * es::kDim) = Jd.lambda;
  J->col(2 * es::kDim + 1) = Jd.td;
}

KeyStatePriorFactor::KeyStatePriorFactor(VarId x, const ImuKeyState& x0, const Vec15& sigma)
    : Factor(FactorKind::kPrior, {x}, es::kDim), x0_(x0) {
  if (!(sigma.array() > 0.0).all()) throw InvalidArgument("prior sigmas must be positive");
  inv_sigma_ = sigma.cwiseInverse();
}

void KeyStatePriorFactor::evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                                   Eigen::MatrixXd* J) const {
  const Variable& v = problem.variable(variables()[0]);
  const Variable base = Variable::key_state(x0_);
  r = inv_sigma_.asDiagonal() * v.minus(base);
  if (J != nullptr) *J = inv_sigma_.asDiagonal() * v.minus_jacobian(base);
}

}  // namespace tdvio
