#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tdvio/manifold.hpp"

namespace tdvio {

using VarId = std::int64_t;

enum class VarKind {
  kKeyState,    // 15-dim tangent
  kFeatureXyz,  // 3
  kInvDepth,    // 1
  kTimeOffset,  // 1
  kVector,      // Euclidean, any size
};

const char* to_string(VarKind kind);

/// One optimization variable. Key states live on the SO(3) x R^12 manifold;
/// every other kind is Euclidean and stored in `vec`.
struct Variable {
  VarKind kind = VarKind::kVector;
  ImuKeyState state;
  Eigen::VectorXd vec;
  bool fixed = false;

  static Variable key_state(const ImuKeyState& x);
  static Variable feature_xyz(const Vec3& p);
  static Variable inv_depth(double lambda);
  static Variable time_offset(double td);
  static Variable vector(const Eigen::VectorXd& v);

  int dim() const;
  bool is_landmark() const { return kind == VarKind::kFeatureXyz || kind == VarKind::kInvDepth; }

  /// this <- this [+] delta
  void retract(const Eigen::Ref<const Eigen::VectorXd>& delta);
  /// this [-] base, in base's tangent space.
  Eigen::VectorXd minus(const Variable& base) const;
  /// d (this [+] delta [-] base) / d delta at delta = 0.
  Eigen::MatrixXd minus_jacobian(const Variable& base) const;
};

class Problem;

enum class FactorKind { kPrior, kInertial, kVisualXyz, kVisualInvDepth, kGeneric };

/// A whitened residual block over an ordered list of variables.
class Factor {
 public:
  Factor(FactorKind kind, std::vector<VarId> variables, int dim)
      : kind_(kind), variables_(std::move(variables)), dim_(dim) {}
  virtual ~Factor() = default;

  FactorKind kind() const { return kind_; }
  const std::vector<VarId>& variables() const { return variables_; }
  int dim() const { return dim_; }

  /// Huber threshold in whitened units; 0 disables the robust loss.
  double huber_threshold() const { return huber_threshold_; }
  void set_huber_threshold(double t) { huber_threshold_ = t; }

  /// Writes the whitened residual into r. When J is non-null it must already
  /// be dim() x (sum of variable dims), with column blocks in variables()
  /// order. Throws FactorEvaluationError when the factor cannot be evaluated.
  virtual void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                        Eigen::MatrixXd* J) const = 0;

 private:
  FactorKind kind_;
  std::vector<VarId> variables_;
  int dim_;
  double huber_threshold_ = 0.0;
};

using FactorPtr = std::shared_ptr<const Factor>;

class Problem {
 public:
  void add_variable(VarId id, Variable v);
  bool has_variable(VarId id) const { return variables_.count(id) != 0; }
  Variable& variable(VarId id);
  const Variable& variable(VarId id) const;
  const std::map<VarId, Variable>& variables() const { return variables_; }

  /// Every variable the factor touches must already exist.
  void add_factor(FactorPtr factor);
  const std::vector<FactorPtr>& factors() const { return factors_; }

 private:
  std::map<VarId, Variable> variables_;
  std::vector<FactorPtr> factors_;
};

struct LayoutEntry {
  VarId id;
  VarKind kind;
  int dim;
  int offset;
};

/// Column layout of the free (non-fixed) variables.
class VariableLayout {
 public:
  /// Key states, then landmarks, then generic vectors, then the time offset.
  static VariableLayout from_problem(const Problem& problem);
  /// Caller-defined order; fixed variables are skipped.
  static VariableLayout from_ids(const Problem& problem, std::span<const VarId> ids);

  const std::vector<LayoutEntry>& entries() const { return entries_; }
  int total_dim() const { return total_dim_; }
  /// Column offset, or -1 when the variable is fixed or absent.
  int offset(VarId id) const;
  const LayoutEntry* find(VarId id) const;

 private:
  void push(const Problem& problem, VarId id);

  std::vector<LayoutEntry> entries_;
  std::unordered_map<VarId, int> index_;
  int total_dim_ = 0;
};

struct NormalEquations {
  Eigen::MatrixXd H;  // sum J^T J, symmetric
  Eigen::VectorXd b;  // -sum J^T r
  double cost = 0.0;  // 0.5 * sum rho(|r|^2)
  int dropped_factors = 0;
};

NormalEquations build_normal_equations(const Problem& problem, const VariableLayout& layout);
NormalEquations build_normal_equations(const Problem& problem, std::span<const FactorPtr> factors,
                                       const VariableLayout& layout);

/// 0.5 * sum rho(|r|^2) without Jacobians; failing factors are skipped.
double evaluate_cost(const Problem& problem, int* dropped = nullptr);

struct SolverConfig {
  int max_iters = 10;
  double lambda_init = 1e-4;
  double grad_tol = 1e-8;
  double cost_tol = 1e-10;
  double lambda_max = 1e12;
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;        // before the step
  double trial_cost = 0.0;  // after the step
  double lambda = 0.0;
  bool accepted = false;
};

enum class Termination { kGradient, kCostChange, kMaxIterations, kNoVariables };
const char* to_string(Termination t);

struct SolverReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  int dropped_factors = 0;
  Termination termination = Termination::kMaxIterations;
  std::vector<IterationRecord> trace;
};

/// Levenberg-Marquardt with multiplicative diagonal damping. Landmark blocks
/// are eliminated by Schur complement before the dense Cholesky solve.
/// Updates the problem's variables in place. Throws SolverDiverged when the
/// damping exceeds lambda_max without an accepted step.
SolverReport lm_solve(Problem& problem, const SolverConfig& config = {});

/// Linearized factor summarizing marginalized variables.
struct MarginalPrior {
  Eigen::VectorXd r_p;
  Eigen::MatrixXd J_p;  // n x m, n <= m
  std::vector<std::pair<VarId, Variable>> linearization;  // retained variables, column order

  int rows() const { return static_cast<int>(r_p.size()); }
};

struct SchurComplement {
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
};

/// Eliminates the scalar indices in `drop`. Throws SingularBlock when the
/// jittered drop block has condition number above 1e14.
SchurComplement schur_complement(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                                 std::span<const int> drop);

/// Schur complement followed by the factorization H' = J_p^T J_p,
/// r_p = -(J_p^T)^+ b'. The linearization point is left empty.
MarginalPrior marginalize(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                          std::span<const int> drop);

/// Linearizes `factors` at the problem's current values and marginalizes the
/// variables in `drop`. Retained columns are the remaining free variables in
/// layout order.
MarginalPrior marginalize_variables(const Problem& problem, std::span<const FactorPtr> factors,
                                    std::span<const VarId> drop);

/// r = r_p + J_p * (x [-] x_lin)
class MarginalPriorFactor final : public Factor {
 public:
  explicit MarginalPriorFactor(MarginalPrior prior);
  void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                Eigen::MatrixXd* J) const override;
  const MarginalPrior& prior() const { return prior_; }

 private:
  static std::vector<VarId> ids(const MarginalPrior& prior);
  MarginalPrior prior_;
};

/// r = A * [x_1; ...; x_k] - c over Euclidean variables.
class LinearFactor final : public Factor {
 public:
  LinearFactor(std::vector<VarId> variables, Eigen::MatrixXd A, Eigen::VectorXd c);
  void evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                Eigen::MatrixXd* J) const override;

 private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd c_;
};

}  // namespace tdvio
