#pragma once

#include <memory>

#include "tdvio/imu_preintegration.hpp"
#include "tdvio/nlls_solver.hpp"
#include "tdvio/visual_factors.hpp"

namespace tdvio {

/// Whitened inertial factor between consecutive key states. If the current
/// bias estimate of x_j has drifted beyond the first-order validity threshold
/// the batch is re-integrated about it on the fly.
class ImuFactor final : public Factor {
 public:
  ImuFactor(VarId xj, VarId xj1, std::shared_ptr<const Preintegration> preint,
            const WorldConstants& world);
  void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                Eigen::MatrixXd* J) const override;
  const Preintegration& preintegration() const { return *preint_; }

 private:
  std::shared_ptr<const Preintegration> preint_;
  WorldConstants world_;
  Mat15 sqrt_info_;
};

/// Shared camera model handed to every visual factor of a window.
struct CameraModel {
  CameraExtrinsics ext;
  Intrinsics K;
  CompensationJacobian mode = CompensationJacobian::kLinearizationConstant;
};

/// Variables: {x_j, feature (3), td (1)}.
class VisualXyzFactor final : public Factor {
 public:
  VisualXyzFactor(VarId xj, VarId feature, VarId td, const Vec2& z, double sigma_px,
                  std::shared_ptr<const CameraModel> camera);
  void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                Eigen::MatrixXd* J) const override;

 private:
  Vec2 z_;
  double sigma_px_;
  std::shared_ptr<const CameraModel> camera_;
};

/// Variables: {x_i (anchor), x_j, lambda (1), td (1)}.
class VisualInvDepthFactor final : public Factor {
 public:
  VisualInvDepthFactor(VarId xi, VarId xj, VarId lambda, VarId td, const Vec2& anchor_obs,
                       const Vec2& z, double sigma_px, std::shared_ptr<const CameraModel> camera);
  void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                Eigen::MatrixXd* J) const override;

 private:
  Vec2 anchor_obs_;
  Vec2 z_;
  double sigma_px_;
  std::shared_ptr<const CameraModel> camera_;
};

/// r = diag(1/sigma) * (x [-] x0) on one key state.
class KeyStatePriorFactor final : public Factor {
 public:
  KeyStatePriorFactor(VarId x, const ImuKeyState& x0, const Vec15& sigma);
  void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                Eigen::MatrixXd* J) const override;

 private:
  ImuKeyState x0_;
  Vec15 inv_sigma_;
};

}  // namespace tdvio
