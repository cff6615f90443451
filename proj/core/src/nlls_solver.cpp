#include "tdvio/nlls_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "tdvio/errors.hpp"

namespace tdvio {

const char* to_string(VarKind kind) {
  switch (kind) {
    case VarKind::kKeyState: return "keystate";
    case VarKind::kFeatureXyz: return "feature_xyz";
    case VarKind::kInvDepth: return "inv_depth";
    case VarKind::kTimeOffset: return "td";
    case VarKind::kVector: return "vector";
  }
  return "unknown";
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::kGradient: return "gradient";
    case Termination::kCostChange: return "cost_change";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kNoVariables: return "no_variables";
  }
  return "unknown";
}

// ---------------------------------------------------------------- Variable

Variable Variable::key_state(const ImuKeyState& x) {
  Variable v;
  v.kind = VarKind::kKeyState;
  v.state = x;
  return v;
}

Variable Variable::feature_xyz(const Vec3& p) {
  Variable v;
  v.kind = VarKind::kFeatureXyz;
  v.vec = p;
  return v;
}

Variable Variable::inv_depth(double lambda) {
  Variable v;
  v.kind = VarKind::kInvDepth;
  v.vec = Eigen::VectorXd::Constant(1, lambda);
  return v;
}

Variable Variable::time_offset(double td) {
  Variable v;
  v.kind = VarKind::kTimeOffset;
  v.vec = Eigen::VectorXd::Constant(1, td);
  return v;
}

Variable Variable::vector(const Eigen::VectorXd& x) {
  Variable v;
  v.kind = VarKind::kVector;
  v.vec = x;
  return v;
}

int Variable::dim() const {
  return kind == VarKind::kKeyState ? es::kDim : static_cast<int>(vec.size());
}

void Variable::retract(const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (kind == VarKind::kKeyState) {
    state = boxplus(state, ErrorState(Vec15(delta)));
  } else {
    vec += delta;
  }
}

Eigen::VectorXd Variable::minus(const Variable& base) const {
  if (kind == VarKind::kKeyState) return boxminus(state, base.state).vec;
  return vec - base.vec;
}

Eigen::MatrixXd Variable::minus_jacobian(const Variable& base) const {
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(dim(), dim());
  if (kind == VarKind::kKeyState) {
    const Vec3 dtheta = quat_log(base.state.q.conjugate() * state.q);
    J.block<3, 3>(es::kTheta, es::kTheta) = right_jacobian_inverse(dtheta);
  }
  return J;
}

// ---------------------------------------------------------------- Problem

void Problem::add_variable(VarId id, Variable v) {
  if (!variables_.emplace(id, std::move(v)).second) {
    throw InvalidArgument("duplicate variable id " + std::to_string(id));
  }
}

Variable& Problem::variable(VarId id) {
  auto it = variables_.find(id);
  if (it == variables_.end()) throw InvalidArgument("unknown variable id " + std::to_string(id));
  return it->second;
}

const Variable& Problem::variable(VarId id) const {
  auto it = variables_.find(id);
  if (it == variables_.end()) throw InvalidArgument("unknown variable id " + std::to_string(id));
  return it->second;
}

void Problem::add_factor(FactorPtr factor) {
  for (VarId id : factor->variables()) {
    if (!has_variable(id)) {
      throw InvalidArgument("factor references unknown variable " + std::to_string(id));
    }
  }
  factors_.push_back(std::move(factor));
}

// ---------------------------------------------------------------- Layout

void VariableLayout::push(const Problem& problem, VarId id) {
  const Variable& v = problem.variable(id);
  if (v.fixed || index_.count(id)) return;
  index_[id] = static_cast<int>(entries_.size());
  entries_.push_back({id, v.kind, v.dim(), total_dim_});
  total_dim_ += v.dim();
}

VariableLayout VariableLayout::from_problem(const Problem& problem) {
  VariableLayout layout;
  int td_count = 0;
  const auto pass = [&](auto pred) {
    for (const auto& [id, v] : problem.variables()) {
      if (pred(v)) layout.push(problem, id);
    }
  };
  pass([](const Variable& v) { return v.kind == VarKind::kKeyState; });
  pass([](const Variable& v) { return v.is_landmark(); });
  pass([](const Variable& v) { return v.kind == VarKind::kVector; });
  pass([&](const Variable& v) {
    if (v.kind != VarKind::kTimeOffset) return false;
    ++td_count;
    return true;
  });
  if (td_count > 1) throw InvalidArgument("problem holds more than one time-offset variable");
  return layout;
}

VariableLayout VariableLayout::from_ids(const Problem& problem, std::span<const VarId> ids) {
  VariableLayout layout;
  for (VarId id : ids) layout.push(problem, id);
  return layout;
}

int VariableLayout::offset(VarId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : entries_[it->second].offset;
}

const LayoutEntry* VariableLayout::find(VarId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

// ---------------------------------------------------------------- Assembly

namespace {

/// Linearization workspace for one factor.
struct FactorHandle {
  FactorPtr factor;
  std::vector<int> offsets;  // layout offset per factor variable, -1 if fixed
  std::vector<int> dims;
  std::vector<int> cols;     // column offset in J
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  bool valid = false;
};

std::vector<FactorHandle> make_handles(const Problem& problem, std::span<const FactorPtr> factors,
                                       const VariableLayout& layout) {
  std::vector<FactorHandle> handles;
  handles.reserve(factors.size());
  for (const FactorPtr& f : factors) {
    FactorHandle h;
    h.factor = f;
    int col = 0;
    for (VarId id : f->variables()) {
      const int d = problem.variable(id).dim();
      h.offsets.push_back(layout.offset(id));
      h.dims.push_back(d);
      h.cols.push_back(col);
      col += d;
    }
    h.r.resize(f->dim());
    h.J.resize(f->dim(), col);
    handles.push_back(std::move(h));
  }
  return handles;
}

/// Applies the Huber loss by residual/Jacobian scaling and returns the
/// contribution to the cost.
double apply_loss(const Factor& f, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
  const double s = r.squaredNorm();
  const double delta = f.huber_threshold();
  if (delta <= 0.0 || s <= delta * delta) return 0.5 * s;
  const double norm = std::sqrt(s);
  const double rho = 2.0 * delta * norm - delta * delta;
  const double scale = std::sqrt(delta / norm);
  r *= scale;
  if (J != nullptr) *J *= scale;
  return 0.5 * rho;
}

bool evaluate_handle(const Problem& problem, FactorHandle& h, bool with_jacobian, double* cost) {
  try {
    h.factor->evaluate(problem, h.r, with_jacobian ? &h.J : nullptr);
  } catch (const FactorEvaluationError&) {
    h.valid = false;
    return false;
  }
  // A non-finite entry, or an overflow, poisons the sum.
  if (!std::isfinite(h.r.sum()) || (with_jacobian && !std::isfinite(h.J.sum()))) {
    h.valid = false;
    return false;
  }
  *cost += apply_loss(*h.factor, h.r, with_jacobian ? &h.J : nullptr);
  h.valid = true;
  return true;
}

void accumulate(const FactorHandle& h, Eigen::MatrixXd& H, Eigen::VectorXd& b) {
  // Per-block GEMM calls dominate at small sizes, and most factors leave
  // trailing columns of a block structurally zero (a visual residual does not
  // see velocity or biases), so those are skipped.
  const std::size_t n = h.offsets.size();
  const Eigen::Index m = h.J.rows();
  int width[8];
  std::vector<int> width_heap;
  int* w = width;
  if (n > 8) {
    width_heap.resize(n);
    w = width_heap.data();
  }
  for (std::size_t a = 0; a < n; ++a) {
    int k = h.dims[a];
    while (k > 0 && h.J.col(h.cols[a] + k - 1).isZero(0.0)) --k;
    w[a] = k;
  }
  if (m > 16) {
    // Tall factors (the marginal prior) are worth a real GEMM per block pair.
    for (std::size_t a = 0; a < n; ++a) {
      if (h.offsets[a] < 0 || w[a] == 0) continue;
      const auto Ja = h.J.middleCols(h.cols[a], w[a]);
      b.segment(h.offsets[a], w[a]).noalias() -= Ja.transpose() * h.r;
      for (std::size_t c = 0; c < n; ++c) {
        if (h.offsets[c] < 0 || w[c] == 0 || h.offsets[a] > h.offsets[c]) continue;
        H.block(h.offsets[a], h.offsets[c], w[a], w[c]).noalias() +=
            Ja.transpose() * h.J.middleCols(h.cols[c], w[c]);
      }
    }
    return;
  }
  // Gather the live columns in layout order, row-major, then form the upper
  // triangle of J^T J directly.
  int cols_live = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (h.offsets[a] >= 0) cols_live += w[a];
  }
  thread_local std::vector<int> dst;
  thread_local std::vector<double> Jc;
  dst.resize(cols_live);
  Jc.resize(static_cast<std::size_t>(cols_live * m));
  thread_local std::vector<std::size_t> order;
  order.resize(n);
  for (std::size_t a = 0; a < n; ++a) order[a] = a;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return h.offsets[x] < h.offsets[y]; });
  int k = 0;
  for (std::size_t a : order) {
    if (h.offsets[a] < 0) continue;
    for (int i = 0; i < w[a]; ++i, ++k) {
      dst[k] = h.offsets[a] + i;
      for (Eigen::Index r = 0; r < m; ++r) Jc[r * cols_live + k] = h.J(r, h.cols[a] + i);
    }
  }
  double* Hd = H.data();
  const Eigen::Index ld_h = H.outerStride();
  for (Eigen::Index r = 0; r < m; ++r) {
    const double* Jr = Jc.data() + r * cols_live;
    const double rr = h.r[r];
    for (int j = 0; j < cols_live; ++j) {
      const double a = Jr[j];
      if (a == 0.0) continue;
      b[dst[j]] -= a * rr;
      double* colj = Hd + dst[j] * ld_h;
      for (int i = 0; i <= j; ++i) colj[dst[i]] += Jr[i] * a;
    }
  }
}

NormalEquations linearize(const Problem& problem, std::vector<FactorHandle>& handles, int n) {
  NormalEquations ne;
  ne.H = Eigen::MatrixXd::Zero(n, n);
  ne.b = Eigen::VectorXd::Zero(n);
  for (FactorHandle& h : handles) {
    if (!evaluate_handle(problem, h, true, &ne.cost)) {
      ++ne.dropped_factors;
      continue;
    }
    accumulate(h, ne.H, ne.b);
  }
  // Only the upper triangle was accumulated.
  ne.H.triangularView<Eigen::StrictlyLower>() = ne.H.transpose();
  return ne;
}

}  // namespace

NormalEquations build_normal_equations(const Problem& problem, std::span<const FactorPtr> factors,
                                       const VariableLayout& layout) {
  auto handles = make_handles(problem, factors, layout);
  return linearize(problem, handles, layout.total_dim());
}

NormalEquations build_normal_equations(const Problem& problem, const VariableLayout& layout) {
  return build_normal_equations(problem, problem.factors(), layout);
}

double evaluate_cost(const Problem& problem, int* dropped) {
  double cost = 0.0;
  int n_dropped = 0;
  auto handles = make_handles(problem, problem.factors(), VariableLayout{});
  for (FactorHandle& h : handles) {
    if (!evaluate_handle(problem, h, false, &cost)) ++n_dropped;
  }
  if (dropped != nullptr) *dropped = n_dropped;
  return cost;
}

// ---------------------------------------------------------------- LM

namespace {

struct LandmarkBlock {
  int offset;  // in the landmark-last layout
  int dim;
};

/// Solves (H + lambda * D) dx = b with landmark blocks [nc, n) eliminated
/// first. Landmark blocks must not couple with each other.
bool solve_damped(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, double lambda, int nc,
                  const std::vector<LandmarkBlock>& landmarks, Eigen::VectorXd& dx) {
  const int n = static_cast<int>(H.rows());
  Eigen::VectorXd diag = H.diagonal();
  for (int i = 0; i < n; ++i) diag[i] = std::clamp(diag[i], 1e-6, 1e32);
  const Eigen::VectorXd damping = lambda * diag;

  Eigen::MatrixXd S = H.topLeftCorner(nc, nc);
  S.diagonal() += damping.head(nc);
  Eigen::VectorXd rhs = b.head(nc);

  std::vector<Eigen::MatrixXd> block_inv(landmarks.size());
  int total_l = 0;
  for (const auto& L : landmarks) total_l += L.dim;
  // Columns Hcl L^-T of every landmark, applied as one symmetric rank-k update.
  Eigen::MatrixXd Y(nc, total_l);
  int col = 0;
  for (std::size_t k = 0; k < landmarks.size(); ++k) {
    const auto& L = landmarks[k];
    Eigen::MatrixXd Hll = H.block(L.offset, L.offset, L.dim, L.dim);
    Hll.diagonal() += damping.segment(L.offset, L.dim);
    Eigen::LLT<Eigen::MatrixXd> llt(Hll);
    if (llt.info() != Eigen::Success) return false;
    block_inv[k] = llt.solve(Eigen::MatrixXd::Identity(L.dim, L.dim));
    if (nc > 0) {
      const auto Hcl = H.block(0, L.offset, nc, L.dim);
      Y.middleCols(col, L.dim) = llt.matrixL().solve(Hcl.transpose()).transpose();
      rhs.noalias() -= Hcl * (block_inv[k] * b.segment(L.offset, L.dim));
    }
    col += L.dim;
  }
  if (nc > 0 && total_l > 0) {
    // Landmarks reach only a subset of the dense rows (pose and offset, not
    // velocity or biases); the rank update is done on that subset.
    std::vector<int> touched;
    for (int i = 0; i < nc; ++i) {
      if (!Y.row(i).isZero(0.0)) touched.push_back(i);
    }
    const int nt = static_cast<int>(touched.size());
    Eigen::MatrixXd Yt(nt, total_l);
    for (int a = 0; a < nt; ++a) Yt.row(a) = Y.row(touched[a]);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(nt, nt);
    U.selfadjointView<Eigen::Lower>().rankUpdate(Yt, -1.0);
    for (int c = 0; c < nt; ++c) {
      for (int a = c; a < nt; ++a) S(touched[a], touched[c]) += U(a, c);
    }
  }
  S.triangularView<Eigen::StrictlyUpper>() = S.transpose();

  dx.resize(n);
  if (nc > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() == Eigen::Success) {
      dx.head(nc) = llt.solve(rhs);
    } else {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success) return false;
      dx.head(nc) = ldlt.solve(rhs);
    }
  }
  for (std::size_t k = 0; k < landmarks.size(); ++k) {
    const auto& L = landmarks[k];
    Eigen::VectorXd r = b.segment(L.offset, L.dim);
    if (nc > 0) r.noalias() -= H.block(L.offset, 0, L.dim, nc) * dx.head(nc);
    dx.segment(L.offset, L.dim) = block_inv[k] * r;
  }
  return dx.allFinite();
}

/// Orders free variables so that independent landmarks come last.
VariableLayout solver_layout(const Problem& problem, int* nc,
                             std::vector<LandmarkBlock>* landmarks) {
  std::set<VarId> coupled;
  for (const FactorPtr& f : problem.factors()) {
    int count = 0;
    for (VarId id : f->variables()) {
      const Variable& v = problem.variable(id);
      if (v.is_landmark() && !v.fixed) ++count;
    }
    // Priors and multi-landmark factors keep their landmarks in the dense part.
    if (count > 1 || (count == 1 && f->kind() == FactorKind::kPrior)) {
      for (VarId id : f->variables()) coupled.insert(id);
    }
  }
  const VariableLayout base = VariableLayout::from_problem(problem);
  std::vector<VarId> order;
  std::vector<VarId> eliminated;
  for (const auto& e : base.entries()) {
    const bool landmark = e.kind == VarKind::kFeatureXyz || e.kind == VarKind::kInvDepth;
    if (landmark && !coupled.count(e.id)) {
      eliminated.push_back(e.id);
    } else {
      order.push_back(e.id);
    }
  }
  order.insert(order.end(), eliminated.begin(), eliminated.end());
  VariableLayout layout = VariableLayout::from_ids(problem, order);
  *nc = 0;
  landmarks->clear();
  for (const auto& e : layout.entries()) {
    if (std::find(eliminated.begin(), eliminated.end(), e.id) != eliminated.end()) {
      landmarks->push_back({e.offset, e.dim});
    } else {
      *nc += e.dim;
    }
  }
  return layout;
}

void apply_step(Problem& problem, const VariableLayout& layout, const Eigen::VectorXd& dx) {
  for (const auto& e : layout.entries()) {
    problem.variable(e.id).retract(dx.segment(e.offset, e.dim));
  }
}

}  // namespace

SolverReport lm_solve(Problem& problem, const SolverConfig& config) {
  SolverReport report;
  int nc = 0;
  std::vector<LandmarkBlock> landmarks;
  const VariableLayout layout = solver_layout(problem, &nc, &landmarks);
  auto handles = make_handles(problem, problem.factors(), layout);

  NormalEquations ne = linearize(problem, handles, layout.total_dim());
  report.initial_cost = ne.cost;
  report.final_cost = ne.cost;
  report.dropped_factors = ne.dropped_factors;
  if (layout.total_dim() == 0) {
    report.termination = Termination::kNoVariables;
    return report;
  }
  if (ne.b.lpNorm<Eigen::Infinity>() < config.grad_tol) {
    report.termination = Termination::kGradient;
    return report;
  }

  double lambda = config.lambda_init;
  std::vector<Variable> backup(layout.entries().size());
  Eigen::VectorXd dx;
  FactorHandle scratch;
  report.termination = Termination::kMaxIterations;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    IterationRecord rec;
    rec.iteration = iter;
    rec.cost = ne.cost;
    rec.lambda = lambda;
    ++report.iterations;

    bool accepted = false;
    double trial_cost = std::numeric_limits<double>::infinity();
    std::optional<NormalEquations> relinearized;
    if (solve_damped(ne.H, ne.b, lambda, nc, landmarks, dx)) {
      for (std::size_t k = 0; k < layout.entries().size(); ++k) {
        backup[k] = problem.variable(layout.entries()[k].id);
      }
      apply_step(problem, layout, dx);

      // Trial cost over the factors that were valid at the current point. A
      // factor failing at the trial point (an inverse depth pushed below its
      // bound, a point behind the camera) rejects the step, otherwise leaving
      // the factor's domain would look like progress.
      trial_cost = 0.0;
      for (const FactorHandle& h : handles) {
        if (!h.valid) continue;
        scratch.factor = h.factor;
        scratch.r.resize(h.factor->dim());
        if (!evaluate_handle(problem, scratch, false, &trial_cost)) {
          trial_cost = std::numeric_limits<double>::infinity();
          break;
        }
      }
      accepted = std::isfinite(trial_cost) && trial_cost < ne.cost;
      // Near the minimum the decrease of a step drops below the rounding of
      // the cost sum and the comparison above becomes a coin toss. Inside
      // that band the gradient decides instead.
      if (!accepted && std::isfinite(trial_cost) &&
          std::abs(trial_cost - ne.cost) <= 1e-12 * std::max(ne.cost, 1e-300)) {
        std::vector<char> valid(handles.size());
        for (std::size_t k = 0; k < handles.size(); ++k) valid[k] = handles[k].valid;
        NormalEquations trial_ne = linearize(problem, handles, layout.total_dim());
        if (trial_ne.dropped_factors == ne.dropped_factors &&
            trial_ne.b.lpNorm<Eigen::Infinity>() < ne.b.lpNorm<Eigen::Infinity>()) {
          accepted = true;
          relinearized = std::move(trial_ne);
        } else {
          for (std::size_t k = 0; k < handles.size(); ++k) handles[k].valid = valid[k];
        }
      }
      if (!accepted) {
        for (std::size_t k = 0; k < layout.entries().size(); ++k) {
          problem.variable(layout.entries()[k].id) = backup[k];
        }
      }
    }
    rec.trial_cost = trial_cost;
    rec.accepted = accepted;
    report.trace.push_back(rec);

    if (accepted) {
      ++report.accepted_steps;
      const double prev_cost = ne.cost;
      lambda = std::max(lambda * 0.3, 1e-12);
      ne = relinearized ? std::move(*relinearized) : linearize(problem, handles, layout.total_dim());
      report.dropped_factors = ne.dropped_factors;
      report.final_cost = ne.cost;
      if (ne.b.lpNorm<Eigen::Infinity>() < config.grad_tol) {
        report.termination = Termination::kGradient;
        break;
      }
      if (std::abs(prev_cost - ne.cost) <= config.cost_tol * std::max(prev_cost, 1e-300)) {
        report.termination = Termination::kCostChange;
        break;
      }
    } else {
      if (std::isfinite(trial_cost) &&
          std::abs(ne.cost - trial_cost) <= config.cost_tol * std::max(ne.cost, 1e-300)) {
        report.termination = Termination::kCostChange;
        break;
      }
      lambda *= 10.0;
      if (lambda > config.lambda_max) {
        throw SolverDiverged("Levenberg-Marquardt damping exceeded " +
                             std::to_string(config.lambda_max) + " without progress");
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------- Marginalization

namespace {

SchurComplement dense_schur(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                            std::span<const int> drop) {
  const int n = static_cast<int>(H.rows());
  std::vector<char> is_drop(n, 0);
  for (int i : drop) {
    if (i < 0 || i >= n) throw InvalidArgument("drop index out of range");
    is_drop[i] = 1;
  }
  std::vector<int> d_idx;
  std::vector<int> r_idx;
  for (int i = 0; i < n; ++i) (is_drop[i] ? d_idx : r_idx).push_back(i);
  const int nd = static_cast<int>(d_idx.size());
  const int nr = static_cast<int>(r_idx.size());

  Eigen::MatrixXd Hdd(nd, nd), Hrd(nr, nd), Hrr(nr, nr);
  Eigen::VectorXd bd(nd), br(nr);
  for (int i = 0; i < nd; ++i) {
    bd[i] = b[d_idx[i]];
    for (int j = 0; j < nd; ++j) Hdd(i, j) = H(d_idx[i], d_idx[j]);
  }
  for (int i = 0; i < nr; ++i) {
    br[i] = b[r_idx[i]];
    for (int j = 0; j < nd; ++j) Hrd(i, j) = H(r_idx[i], d_idx[j]);
    for (int j = 0; j < nr; ++j) Hrr(i, j) = H(r_idx[i], r_idx[j]);
  }

  SchurComplement out;
  if (nd == 0) {
    out.H = Hrr;
    out.b = br;
    return out;
  }
  Hdd = 0.5 * (Hdd + Hdd.transpose());

  // Condition is judged after Jacobi scaling so that mixed physical units do
  // not register as singularity.
  Eigen::VectorXd scale = Hdd.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Hs = scale.asDiagonal() * Hdd * scale.asDiagonal();
  const Eigen::LLT<Eigen::MatrixXd> ldlt(Hs);
  const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
  if (!(rcond > 1e-14)) {
    throw SingularBlock("marginalized block is numerically singular (rcond " + std::to_string(rcond) +
                        ")");
  }
  // K = Hrd Hdd^-1 with Hdd^-1 = D Hs^-1 D.
  const Eigen::MatrixXd KsT = ldlt.solve(scale.asDiagonal() * Hrd.transpose());
  const Eigen::MatrixXd K = (scale.asDiagonal() * KsT).transpose();
  out.H = Hrr - K * Hrd.transpose();
  out.H = 0.5 * (out.H + out.H.transpose()).eval();
  out.b = br - K * bd;
  return out;
}

}  // namespace

SchurComplement schur_complement(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                                 std::span<const int> drop) {
  const int n = static_cast<int>(H.rows());
  for (int i : drop) {
    if (i < 0 || i >= n) throw InvalidArgument("drop index out of range");
  }
  // Dropped scalars that couple to no other such scalar (inverse depths
  // anchored in the same frame) go first, one sparse rank-1 update each.
  // Scanning from the back picks them up ahead of the dense state block.
  std::vector<int> scalar;
  std::vector<char> is_scalar(n, 0);
  for (auto it = drop.rbegin(); it != drop.rend(); ++it) {
    const int i = *it;
    if (is_scalar[i] || !(H(i, i) > 0.0)) continue;
    const bool decoupled = std::none_of(scalar.begin(), scalar.end(), [&](int s) { return H(i, s) != 0.0; });
    if (decoupled) {
      scalar.push_back(i);
      is_scalar[i] = 1;
    }
  }
  if (scalar.size() < 2) return dense_schur(H, b, drop);

  Eigen::MatrixXd Hw = H;
  Eigen::VectorXd bw = b;
  std::vector<int> nz;
  for (int s : scalar) {
    const double inv = 1.0 / H(s, s);
    nz.clear();
    for (int i = 0; i < n; ++i) {
      if (i != s && H(i, s) != 0.0) nz.push_back(i);
    }
    for (int c : nz) {
      const double hc = H(c, s) * inv;
      bw[c] -= hc * b[s];
      for (int a : nz) Hw(a, c) -= H(a, s) * hc;
    }
  }

  std::vector<int> rest;
  std::vector<int> pos(n, -1);
  for (int i = 0; i < n; ++i) {
    if (is_scalar[i]) continue;
    pos[i] = static_cast<int>(rest.size());
    rest.push_back(i);
  }
  const int m = static_cast<int>(rest.size());
  Eigen::MatrixXd Hr(m, m);
  Eigen::VectorXd br(m);
  for (int c = 0; c < m; ++c) {
    br[c] = bw[rest[c]];
    for (int a = 0; a < m; ++a) Hr(a, c) = Hw(rest[a], rest[c]);
  }
  std::vector<int> drop_rest;
  for (int i : drop) {
    if (!is_scalar[i]) drop_rest.push_back(pos[i]);
  }
  return dense_schur(Hr, br, drop_rest);
}

MarginalPrior marginalize(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                          std::span<const int> drop) {
  const SchurComplement sc = schur_complement(H, b, drop);
  MarginalPrior prior;
  const int m = static_cast<int>(sc.H.rows());
  if (m == 0) {
    prior.J_p.resize(0, 0);
    prior.r_p.resize(0);
    return prior;
  }
  // Directions no factor touched (e.g. biases seen only through visual
  // factors) are exactly zero; leaving them out shrinks the decomposition.
  std::vector<int> live;
  for (int i = 0; i < m; ++i) {
    if (!sc.H.row(i).isZero(0.0) || sc.b[i] != 0.0) live.push_back(i);
  }
  const int ml = static_cast<int>(live.size());
  Eigen::MatrixXd Hl(ml, ml);
  Eigen::VectorXd bl(ml);
  for (int a = 0; a < ml; ++a) {
    bl[a] = sc.b[live[a]];
    for (int c = 0; c < ml; ++c) Hl(a, c) = sc.H(live[a], live[c]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hl);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double eps = std::max(1e-8, 1e-14 * std::max(ml > 0 ? ev.maxCoeff() : 0.0, 0.0));
  std::vector<int> keep;
  for (int i = 0; i < ml; ++i) {
    if (ev[i] > eps) keep.push_back(i);
  }
  const int n = static_cast<int>(keep.size());
  prior.J_p = Eigen::MatrixXd::Zero(n, m);
  prior.r_p.resize(n);
  for (int k = 0; k < n; ++k) {
    const int i = keep[k];
    const Eigen::VectorXd vi = eig.eigenvectors().col(i);
    const double s = std::sqrt(ev[i]);
    for (int a = 0; a < ml; ++a) prior.J_p(k, live[a]) = s * vi[a];
    prior.r_p[k] = -vi.dot(bl) / s;
  }
  return prior;
}

MarginalPrior marginalize_variables(const Problem& problem, std::span<const FactorPtr> factors,
                                    std::span<const VarId> drop) {
  std::vector<VarId> drop_ids(drop.begin(), drop.end());
  std::vector<VarId> keep_ids;
  std::set<VarId> seen;
  for (const FactorPtr& f : factors) {
    for (VarId id : f->variables()) {
      if (problem.variable(id).fixed || !seen.insert(id).second) continue;
      if (std::find(drop_ids.begin(), drop_ids.end(), id) == drop_ids.end()) keep_ids.push_back(id);
    }
  }
  // Keep a deterministic column order: key states, landmarks, vectors, td.
  const auto rank = [&](VarId id) {
    switch (problem.variable(id).kind) {
      case VarKind::kKeyState: return 0;
      case VarKind::kFeatureXyz:
      case VarKind::kInvDepth: return 1;
      case VarKind::kVector: return 2;
      case VarKind::kTimeOffset: return 3;
    }
    return 4;
  };
  std::stable_sort(keep_ids.begin(), keep_ids.end(), [&](VarId a, VarId b) {
    return rank(a) != rank(b) ? rank(a) < rank(b) : a < b;
  });

  std::vector<VarId> order = keep_ids;
  for (VarId id : drop_ids) {
    if (problem.has_variable(id) && !problem.variable(id).fixed) order.push_back(id);
  }
  const VariableLayout layout = VariableLayout::from_ids(problem, order);
  const NormalEquations ne = build_normal_equations(problem, factors, layout);

  std::vector<int> drop_idx;
  for (VarId id : drop_ids) {
    const LayoutEntry* e = layout.find(id);
    if (e == nullptr) continue;
    for (int k = 0; k < e->dim; ++k) drop_idx.push_back(e->offset + k);
  }
  MarginalPrior prior = marginalize(ne.H, ne.b, drop_idx);
  for (VarId id : keep_ids) prior.linearization.emplace_back(id, problem.variable(id));
  return prior;
}

// ---------------------------------------------------------------- Factors

std::vector<VarId> MarginalPriorFactor::ids(const MarginalPrior& prior) {
  std::vector<VarId> out;
  for (const auto& [id, v] : prior.linearization) out.push_back(id);
  return out;
}

MarginalPriorFactor::MarginalPriorFactor(MarginalPrior prior)
    : Factor(FactorKind::kPrior, ids(prior), prior.rows()), prior_(std::move(prior)) {}

void MarginalPriorFactor::evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                                   Eigen::MatrixXd* J) const {
  const int m = static_cast<int>(prior_.J_p.cols());
  Eigen::VectorXd dx(m);
  int col = 0;
  for (const auto& [id, lin] : prior_.linearization) {
    const Variable& v = problem.variable(id);
    const int d = v.dim();
    dx.segment(col, d) = v.minus(lin);
    if (J != nullptr) {
      J->middleCols(col, d) = prior_.J_p.middleCols(col, d) * v.minus_jacobian(lin);
    }
    col += d;
  }
  r = prior_.r_p + prior_.J_p * dx;
}

LinearFactor::LinearFactor(std::vector<VarId> variables, Eigen::MatrixXd A, Eigen::VectorXd c)
    : Factor(FactorKind::kGeneric, std::move(variables), static_cast<int>(A.rows())),
      A_(std::move(A)),
      c_(std::move(c)) {
  if (c_.size() != A_.rows()) throw InvalidArgument("LinearFactor: A and c row mismatch");
}

void LinearFactor::evaluate(const Problem& problem, Eigen::Ref<Eigen::VectorXd> r,
                            Eigen::MatrixXd* J) const {
  Eigen::VectorXd x(A_.cols());
  int col = 0;
  for (VarId id : variables()) {
    const Variable& v = problem.variable(id);
    if (v.kind == VarKind::kKeyState) throw InvalidArgument("LinearFactor needs Euclidean variables");
    x.segment(col, v.vec.size()) = v.vec;
    col += static_cast<int>(v.vec.size());
  }
  if (col != A_.cols()) throw InvalidArgument("LinearFactor: variable dimensions do not match A");
  r = A_ * x - c_;
  if (J != nullptr) *J = A_;
}

}  // namespace tdvio
