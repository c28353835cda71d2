#include "fiekit/fie.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace fiekit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_spd(const Matrix& m, Eigen::Index dim, const char* name) {
  if (m.rows() != dim || m.cols() != dim) {
    throw InputError(std::string("FieConfig: ") + name + " must be " + std::to_string(dim) + "x" +
                     std::to_string(dim));
  }
  if (dim == 0) return;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InputError(std::string("FieConfig: ") + name + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw InputError(std::string("FieConfig: ") + name + " is not positive definite");
  }
}

void require_horizon(const PriorData& prior, TimeIndex t) {
  if (t < prior.t0) throw InputError("FIE: t must not precede t0");
  const auto n = static_cast<std::size_t>(t - prior.t0);
  if (prior.w_bar.size() != n || prior.y_bar.size() != n) {
    throw InputError("FIE: prior noise/output sequences must have length t - t0 = " +
                     std::to_string(n));
  }
}

// d/dv alpha(2|v|) = alpha'(2|v|) * 2 v / |v|
Vector kfunction_gradient(const KFunction& alpha, const Vector& v) {
  const double n = v.norm();
  if (n == 0.0) return Vector::Zero(v.size());
  return alpha.derivative(2.0 * n) * 2.0 / n * v;
}

double vector_inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

struct Rollout {
  VectorSequence x;
  VectorSequence y;
};

struct Evaluation {
  Rollout path;
  double objective = kInf;  // V_FIE without penalty
  double penalty = 0.0;
  double total() const { return objective + penalty; }
};

struct StageLinearization {
  StepJacobian dynamics;
  StepJacobian output;
  /// Second-order model terms weighted by the costate; empty for Gauss-Newton.
  Matrix curvature;
};

struct Gradient {
  Vector x0;
  VectorSequence w;
  /// p_k = dV/dx_k for k = 0..N, excluding the prior term at k = 0.
  VectorSequence costate;
};

// Step systems that are not positive definite; the caller raises the damping.
struct IndefiniteStep {};

// Single-shooting view of the FIE program at a fixed time t and penalty weight.
class ShootingProblem {
 public:
  ShootingProblem(const SystemModel& model, const FieConfig& config, const PriorData& prior,
                  TimeIndex t, double penalty_weight)
      : model_(model),
        prior_(prior),
        horizon_(static_cast<std::size_t>(t - prior.t0)),
        penalty_weight_(penalty_weight) {
    prior_weight_ = std::pow(config.eta, static_cast<double>(horizon_));
    stage_weight_.resize(horizon_);
    for (std::size_t k = 0; k < horizon_; ++k) {
      stage_weight_[k] = std::pow(config.eta, static_cast<double>(horizon_ - 1 - k));
    }
    if (const auto* q = std::get_if<QuadraticObjective>(&config.objective)) quadratic_ = q;
    if (const auto* g = std::get_if<GeneralObjective>(&config.objective)) general_ = g;
  }

  std::size_t horizon() const { return horizon_; }
  const SystemModel& model() const { return model_; }

  Rollout roll(const FieDecision& d) const {
    Rollout r;
    r.x.reserve(horizon_ + 1);
    r.y.reserve(horizon_);
    r.x.push_back(d.x0);
    for (std::size_t k = 0; k < horizon_; ++k) {
      const TimeIndex tk = prior_.t0 + static_cast<TimeIndex>(k);
      r.y.push_back(model_.h(r.x[k], d.w[k], tk));
      r.x.push_back(model_.f(r.x[k], d.w[k], tk));
    }
    return r;
  }

  Evaluation evaluate(const FieDecision& d) const {
    Evaluation e;
    e.path = roll(d);
    e.objective = objective(d, e.path);
    e.penalty = 0.0;
    if (penalty_weight_ > 0.0) {
      for (const Vector& x : e.path.x) {
        e.penalty += penalty_weight_ * model_.state_set().violation(x).squaredNorm();
      }
    }
    if (!std::isfinite(e.objective) || !std::isfinite(e.penalty)) e.objective = kInf;
    return e;
  }

  double objective(const FieDecision& d, const Rollout& path) const {
    const Vector ex = d.x0 - prior_.x_bar;
    double v = 0.0;
    if (quadratic_ != nullptr) {
      v += 2.0 * prior_weight_ * ex.dot(quadratic_->P * ex);
      for (std::size_t k = 0; k < horizon_; ++k) {
        const Vector ew = d.w[k] - prior_.w_bar[k];
        const Vector ey = path.y[k] - prior_.y_bar[k];
        v += 2.0 * stage_weight_[k] * (ew.dot(quadratic_->Q * ew) + ey.dot(quadratic_->R * ey));
      }
    } else {
      v += prior_weight_ * general_->alpha2(2.0 * ex.norm());
      for (std::size_t k = 0; k < horizon_; ++k) {
        v += stage_weight_[k] * (general_->sigma_w(2.0 * (d.w[k] - prior_.w_bar[k]).norm()) +
                                 general_->sigma_y(2.0 * (path.y[k] - prior_.y_bar[k]).norm()));
      }
    }
    return v;
  }

  std::vector<StageLinearization> linearize(const FieDecision& d, const Rollout& path) const {
    std::vector<StageLinearization> lin(horizon_);
    for (std::size_t k = 0; k < horizon_; ++k) {
      const TimeIndex tk = prior_.t0 + static_cast<TimeIndex>(k);
      lin[k].dynamics = model_.dynamics_jacobian(path.x[k], d.w[k], tk);
      lin[k].output = model_.output_jacobian(path.x[k], d.w[k], tk);
    }
    return lin;
  }

  // Signed distance of x outside X, and the mask of components outside.
  void penalty_terms(const Vector& x, Vector& signed_violation, Vector& active) const {
    const BoxSet& box = model_.state_set();
    signed_violation = x - box.project(x);
    active = (signed_violation.array() != 0.0).cast<double>();
  }

  // Local gradient contributions of stage k with respect to x_k and w_k.
  void stage_gradient(std::size_t k, const FieDecision& d, const Rollout& path,
                      const StageLinearization& lin, Vector& gx, Vector& gw) const {
    const Vector ew = d.w[k] - prior_.w_bar[k];
    const Vector ey = path.y[k] - prior_.y_bar[k];
    Vector dy;
    if (quadratic_ != nullptr) {
      dy = 4.0 * stage_weight_[k] * (quadratic_->R * ey);
      gw = 4.0 * stage_weight_[k] * (quadratic_->Q * ew);
    } else {
      dy = stage_weight_[k] * kfunction_gradient(general_->sigma_y, ey);
      gw = stage_weight_[k] * kfunction_gradient(general_->sigma_w, ew);
    }
    gx = lin.output.dx.transpose() * dy;
    gw += lin.output.dw.transpose() * dy;
    gx += penalty_gradient(path.x[k]);
  }

  Vector penalty_gradient(const Vector& x) const {
    if (penalty_weight_ <= 0.0) return Vector::Zero(x.size());
    Vector s, active;
    penalty_terms(x, s, active);
    return 2.0 * penalty_weight_ * s;
  }

  Vector prior_gradient(const Vector& x0) const {
    const Vector ex = x0 - prior_.x_bar;
    if (quadratic_ != nullptr) return 2.0 * 2.0 * prior_weight_ * (quadratic_->P * ex);
    return prior_weight_ * kfunction_gradient(general_->alpha2, ex);
  }

  // Adjoint pass: p_N = dV/dx_N, p_k = gx_k + A_k^T p_{k+1}, dV/dw_k = gw_k + B_k^T p_{k+1}.
  Gradient gradient(const FieDecision& d, const Rollout& path,
                    const std::vector<StageLinearization>& lin) const {
    Gradient g;
    g.w.resize(horizon_);
    g.costate.resize(horizon_ + 1);
    Vector costate = penalty_gradient(path.x[horizon_]);
    g.costate[horizon_] = costate;
    Vector gx, gw;
    for (std::size_t k = horizon_; k-- > 0;) {
      stage_gradient(k, d, path, lin[k], gx, gw);
      g.w[k] = gw + lin[k].dynamics.dw.transpose() * costate;
      costate = gx + lin[k].dynamics.dx.transpose() * costate;
      g.costate[k] = costate;
    }
    g.x0 = costate + prior_gradient(d.x0);
    return g;
  }

  const QuadraticObjective* quadratic() const { return quadratic_; }
  double prior_weight() const { return prior_weight_; }
  double stage_weight(std::size_t k) const { return stage_weight_[k]; }
  double penalty_weight() const { return penalty_weight_; }
  const PriorData& prior() const { return prior_; }

 private:
  const SystemModel& model_;
  const PriorData& prior_;
  std::size_t horizon_;
  double penalty_weight_;
  double prior_weight_ = 1.0;
  std::vector<double> stage_weight_;
  const QuadraticObjective* quadratic_ = nullptr;
  const GeneralObjective* general_ = nullptr;
};

FieDecision project(const SystemModel& model, FieDecision d) {
  d.x0 = model.state_set().project(d.x0);
  for (Vector& w : d.w) w = model.noise_set().project(w);
  return d;
}

// Largest component of theta - P(theta - g).
double projected_gradient_norm(const SystemModel& model, const FieDecision& d, const Gradient& g) {
  double n = vector_inf_norm(d.x0 - model.state_set().project(d.x0 - g.x0));
  for (std::size_t k = 0; k < d.w.size(); ++k) {
    n = std::max(n, vector_inf_norm(d.w[k] - model.noise_set().project(d.w[k] - g.w[k])));
  }
  return n;
}

double decision_inf_norm(const FieDecision& d) {
  double n = vector_inf_norm(d.x0);
  for (const Vector& w : d.w) n = std::max(n, vector_inf_norm(w));
  return n;
}

double step_inf_norm(const FieDecision& a, const FieDecision& b) {
  double n = vector_inf_norm(a.x0 - b.x0);
  for (std::size_t k = 0; k < a.w.size(); ++k) n = std::max(n, vector_inf_norm(a.w[k] - b.w[k]));
  return n;
}

// Components within `margin` of a bound whose gradient points out of the box
// are near-bound; components whose step crossed a bound are pinned to it.
constexpr double kFree = 0.0;
constexpr double kNearBound = 1.0;
constexpr double kPinned = 2.0;

struct ActiveSet {
  Vector mask;
  Vector offset;  // bound - v on active components
};

ActiveSet active_set(const BoxSet& box, const Vector& v, const Vector& g, double margin) {
  ActiveSet a{Vector::Zero(v.size()), Vector::Zero(v.size())};
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double lo = box.lower()[i];
    const double hi = box.upper()[i];
    const double eps = std::min(margin, 0.1 * (hi - lo));
    if (g[i] > 0.0 && v[i] <= lo + eps) {
      a.mask[i] = kNearBound;
      a.offset[i] = lo - v[i];
    } else if (g[i] < 0.0 && v[i] >= hi - eps) {
      a.mask[i] = kNearBound;
      a.offset[i] = hi - v[i];
    }
  }
  return a;
}

struct InnerResult {
  FieDecision decision;
  Evaluation evaluation;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  bool stalled = false;
  double damping = 0.0;
};

constexpr double kFrozenWeight = 1e12;

// Adds lambda * max(|diag(H)|, scale) damping plus a stiff spring on active
// components. Near-bound components take a damped diagonal Newton move clipped
// at the bound; pinned components are placed on it.
void damp(Matrix& h, Vector& g, double lambda, const Vector& scale, const ActiveSet& active) {
  const double floor = 1e-12 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double d = std::max({std::abs(h(i, i)), scale[i], floor});
    double target = active.offset[i];
    if (active.mask[i] == kNearBound) {
      const double move = -g[i] / ((1.0 + lambda) * d);
      target = target < 0.0 ? std::clamp(move, target, 0.0) : std::clamp(move, 0.0, target);
    }
    h(i, i) += lambda * d;
    if (active.mask[i] != kFree) {
      const double spring = kFrozenWeight * (1.0 + d);
      h(i, i) += spring;
      g[i] -= spring * target;
    }
  }
}

// Costate-weighted curvature of the dynamics and outputs, turning the
// Gauss-Newton model into the exact second-order model.
void attach_curvature(const ShootingProblem& prob, const FieDecision& d, const Rollout& path,
                      const Gradient& grad, std::vector<StageLinearization>& lin) {
  const SystemModel& model = prob.model();
  if (!model.has_curvature()) return;
  const QuadraticObjective& q = *prob.quadratic();
  for (std::size_t k = 0; k < lin.size(); ++k) {
    const TimeIndex tk = prob.prior().t0 + static_cast<TimeIndex>(k);
    const Vector dy = 4.0 * prob.stage_weight(k) * (q.R * (path.y[k] - prob.prior().y_bar[k]));
    lin[k].curvature = model.curvature(path.x[k], d.w[k], tk, grad.costate[k + 1], dy);
  }
}

// Gauss-Newton model value sum |r + J delta|^2 for the quadratic objective plus penalty.
double gauss_newton_model(const ShootingProblem& prob, const FieDecision& d, const Rollout& path,
                          const std::vector<StageLinearization>& lin, const FieDecision& step) {
  const QuadraticObjective& q = *prob.quadratic();
  const PriorData& prior = prob.prior();
  const double mu = prob.penalty_weight();
  const std::size_t n = prob.horizon();
  Vector dx = step.x0;
  const Vector ex = d.x0 + dx - prior.x_bar;
  double v = 2.0 * prob.prior_weight() * ex.dot(q.P * ex);
  Vector s, active;
  for (std::size_t k = 0; k <= n; ++k) {
    if (mu > 0.0 && k > 0) {
      prob.penalty_terms(path.x[k], s, active);
      v += mu * (s + active.cwiseProduct(dx)).squaredNorm();
    }
    if (k == n) break;
    const Vector ew = d.w[k] + step.w[k] - prior.w_bar[k];
    const Vector ey = path.y[k] - prior.y_bar[k] + lin[k].output.dx * dx + lin[k].output.dw * step.w[k];
    v += 2.0 * prob.stage_weight(k) * (ew.dot(q.Q * ew) + ey.dot(q.R * ey));
    if (lin[k].curvature.size() > 0) {
      Vector z(dx.size() + step.w[k].size());
      z << dx, step.w[k];
      v += 0.5 * z.dot(lin[k].curvature * z);
    }
    dx = lin[k].dynamics.dx * dx + lin[k].dynamics.dw * step.w[k];
  }
  return v;
}

// Levenberg-Marquardt step by backward Riccati recursion over the linearized rollout.
FieDecision riccati_step(const ShootingProblem& prob, const FieDecision& d, const Rollout& path,
                         const std::vector<StageLinearization>& lin, double lambda,
                         const std::vector<ActiveSet>& w_active, const ActiveSet& x_active) {
  const SystemModel& model = prob.model();
  const QuadraticObjective& q = *prob.quadratic();
  const PriorData& prior = prob.prior();
  const double mu = prob.penalty_weight();
  const std::size_t n = prob.horizon();
  const Eigen::Index nx = model.n_x();

  Vector s_vec, active;
  Matrix S = Matrix::Zero(nx, nx);
  Vector s = Vector::Zero(nx);
  if (mu > 0.0) {
    prob.penalty_terms(path.x[n], s_vec, active);
    S.diagonal() = 2.0 * mu * active;
    s = 2.0 * mu * s_vec;
  }

  std::vector<Matrix> feedback(n);
  std::vector<Vector> feedforward(n);
  Vector gx, gw;
  for (std::size_t k = n; k-- > 0;) {
    const Matrix& A = lin[k].dynamics.dx;
    const Matrix& B = lin[k].dynamics.dw;
    const Matrix& Hx = lin[k].output.dx;
    const Matrix& Hw = lin[k].output.dw;
    const double c = 4.0 * prob.stage_weight(k);
    const Matrix RHx = q.R * Hx;
    const Matrix RHw = q.R * Hw;
    const Matrix SA = S * A;
    const Matrix SB = S * B;

    Matrix Qxx = c * Hx.transpose() * RHx + A.transpose() * SA;
    Matrix Qux = c * Hw.transpose() * RHx + B.transpose() * SA;
    Matrix Quu = c * (q.Q + Hw.transpose() * RHw) + B.transpose() * SB;
    if (mu > 0.0 && k > 0) {
      prob.penalty_terms(path.x[k], s_vec, active);
      Qxx.diagonal() += 2.0 * mu * active;
    }
    if (lin[k].curvature.size() > 0) {
      const Matrix& C = lin[k].curvature;
      const Eigen::Index nw = Quu.rows();
      Qxx += C.topLeftCorner(nx, nx);
      Qux += C.bottomLeftCorner(nw, nx);
      Quu += C.bottomRightCorner(nw, nw);
    }
    prob.stage_gradient(k, d, path, lin[k], gx, gw);
    const Vector qx = gx + A.transpose() * s;
    Vector qu = gw + B.transpose() * s;

    // damping scale is the undiscounted stage curvature
    const Vector scale = (4.0 * (q.Q + Hw.transpose() * RHw)).diagonal().cwiseAbs();
    damp(Quu, qu, lambda, scale, w_active[k]);
    Eigen::LLT<Matrix> llt(Quu);
    if (llt.info() != Eigen::Success) throw IndefiniteStep{};
    feedback[k] = -llt.solve(Qux);
    feedforward[k] = -llt.solve(qu);
    S = Qxx + Qux.transpose() * feedback[k];
    S = 0.5 * (S + S.transpose()).eval();
    s = qx + Qux.transpose() * feedforward[k];
  }

  const Vector ex = d.x0 - prior.x_bar;
  Matrix H0 = S + 4.0 * prob.prior_weight() * q.P;
  Vector g0 = s + 4.0 * prob.prior_weight() * (q.P * ex);
  damp(H0, g0, lambda, (4.0 * q.P).diagonal().cwiseAbs(), x_active);

  Eigen::LLT<Matrix> llt(H0);
  if (llt.info() != Eigen::Success) throw IndefiniteStep{};
  FieDecision step;
  step.x0 = -llt.solve(g0);
  step.w.resize(n);
  Vector dx = step.x0;
  for (std::size_t k = 0; k < n; ++k) {
    step.w[k] = feedforward[k] + feedback[k] * dx;
    dx = lin[k].dynamics.dx * dx + lin[k].dynamics.dw * step.w[k];
  }
  return step;
}

// Pins a component to the bound its step would cross and recomputes the step.
bool pin_crossings(const BoxSet& box, const Vector& v, const Vector& step, ActiveSet& active) {
  bool changed = false;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (active.mask[i] == kPinned) continue;
    const double target = v[i] + step[i];
    if (target < box.lower()[i]) {
      active.mask[i] = kPinned;
      active.offset[i] = box.lower()[i] - v[i];
      changed = true;
    } else if (target > box.upper()[i]) {
      active.mask[i] = kPinned;
      active.offset[i] = box.upper()[i] - v[i];
      changed = true;
    }
  }
  return changed;
}

// Damped Gauss-Newton step restricted to the boxes by active-set refinement.
FieDecision constrained_step(const ShootingProblem& prob, const FieDecision& d,
                             const Rollout& path, const std::vector<StageLinearization>& lin,
                             const Gradient& grad, double lambda, double margin) {
  constexpr int kMaxPasses = 3;
  const SystemModel& model = prob.model();
  std::vector<ActiveSet> w_active;
  w_active.reserve(d.w.size());
  for (std::size_t k = 0; k < d.w.size(); ++k) {
    w_active.push_back(active_set(model.noise_set(), d.w[k], grad.w[k], margin));
  }
  ActiveSet x_active = active_set(model.state_set(), d.x0, grad.x0, margin);
  FieDecision step;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    step = riccati_step(prob, d, path, lin, lambda, w_active, x_active);
    bool changed = pin_crossings(model.state_set(), d.x0, step.x0, x_active);
    for (std::size_t k = 0; k < d.w.size(); ++k) {
      changed = pin_crossings(model.noise_set(), d.w[k], step.w[k], w_active[k]) || changed;
    }
    if (!changed) break;
  }
  return step;
}

FieDecision add(const FieDecision& a, const FieDecision& b, double scale = 1.0) {
  FieDecision out;
  out.x0 = a.x0 + scale * b.x0;
  out.w.resize(a.w.size());
  for (std::size_t k = 0; k < a.w.size(); ++k) out.w[k] = a.w[k] + scale * b.w[k];
  return out;
}

FieDecision difference(const FieDecision& a, const FieDecision& b) { return add(a, b, -1.0); }

double dot(const FieDecision& a, const Gradient& g) {
  double v = a.x0.dot(g.x0);
  for (std::size_t k = 0; k < a.w.size(); ++k) v += a.w[k].dot(g.w[k]);
  return v;
}

InnerResult levenberg_marquardt(const ShootingProblem& prob, FieDecision d,
                                const SolverOptions& opt) {
  const SystemModel& model = prob.model();
  InnerResult res;
  Evaluation eval = prob.evaluate(d);
  if (!std::isfinite(eval.total())) throw SolverError("FIE: objective is not finite at the start");

  double lambda = opt.damping_init;
  double nu = 2.0;
  int stalled = 0;
  bool relinearize = true;
  std::vector<StageLinearization> lin;
  Gradient grad;
  for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
    if (relinearize) {
      lin = prob.linearize(d, eval.path);
      grad = prob.gradient(d, eval.path, lin);
      attach_curvature(prob, d, eval.path, grad, lin);
      res.grad_norm = projected_gradient_norm(model, d, grad);
      relinearize = false;
    }
    const double cost = eval.total();
    if (cost == 0.0 || res.grad_norm <= opt.grad_tol * (1.0 + cost)) {
      res.converged = true;
      break;
    }
    FieDecision raw;
    try {
      raw = constrained_step(prob, d, eval.path, lin, grad, lambda, res.grad_norm);
    } catch (const IndefiniteStep&) {
      lambda = std::max(lambda, 1e-8) * nu;
      nu *= 2.0;
      if (lambda > 1e16) break;
      continue;
    }
    FieDecision trial = project(model, add(d, raw));
    const FieDecision step = difference(trial, d);
    const double predicted = cost - gauss_newton_model(prob, d, eval.path, lin, step);
    Evaluation trial_eval = prob.evaluate(trial);
    const double actual = cost - trial_eval.total();

    if (std::isfinite(actual) && actual > 0.0) {
      const double ratio = predicted > 0.0 ? actual / predicted : 1.0;
      const double step_norm = step_inf_norm(trial, d);
      d = std::move(trial);
      eval = std::move(trial_eval);
      relinearize = true;
      lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * ratio - 1.0, 3));
      lambda = std::max(lambda, 1e-15);
      nu = 2.0;
      stalled = actual <= opt.stall_tol * (1.0 + eval.total()) ? stalled + 1 : 0;
      if (opt.stall_iter > 0 && stalled >= opt.stall_iter) {
        res.converged = true;
        res.stalled = true;
        ++res.iterations;
        break;
      }
      if (step_norm <= opt.step_tol * (1.0 + decision_inf_norm(d)) ||
          actual <= 1e-15 * (1.0 + eval.total())) {
        lin = prob.linearize(d, eval.path);
        grad = prob.gradient(d, eval.path, lin);
        res.grad_norm = projected_gradient_norm(model, d, grad);
        res.converged = true;
        ++res.iterations;
        break;
      }
    } else {
      lambda *= nu;
      nu *= 2.0;
      if (lambda > 1e16) {
        // no descent possible along the damped model: stationary to working precision
        res.converged = res.grad_norm <= std::sqrt(opt.grad_tol) * (1.0 + cost);
        break;
      }
    }
  }
  res.damping = lambda;
  res.decision = std::move(d);
  res.evaluation = std::move(eval);
  return res;
}

InnerResult projected_gradient(const ShootingProblem& prob, FieDecision d,
                               const SolverOptions& opt) {
  const SystemModel& model = prob.model();
  InnerResult res;
  Evaluation eval = prob.evaluate(d);
  if (!std::isfinite(eval.total())) throw SolverError("FIE: objective is not finite at the start");
  auto lin = prob.linearize(d, eval.path);
  Gradient grad = prob.gradient(d, eval.path, lin);
  double alpha = 0.0;
  {
    double gmax = std::max(vector_inf_norm(grad.x0), 0.0);
    for (const Vector& g : grad.w) gmax = std::max(gmax, vector_inf_norm(g));
    alpha = gmax > 0.0 ? 1e-2 / gmax : 1.0;
  }
  const int max_iter = opt.max_iter * 25;
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    const double cost = eval.total();
    res.grad_norm = projected_gradient_norm(model, d, grad);
    if (cost == 0.0 || res.grad_norm <= opt.grad_tol * (1.0 + cost)) {
      res.converged = true;
      break;
    }
    Gradient neg;
    neg.x0 = -grad.x0;
    for (const Vector& g : grad.w) neg.w.push_back(-g);
    bool accepted = false;
    FieDecision trial;
    Evaluation trial_eval;
    for (int bt = 0; bt < 60; ++bt) {
      FieDecision direction{neg.x0, neg.w};
      trial = project(model, add(d, direction, alpha));
      trial_eval = prob.evaluate(trial);
      const FieDecision step = difference(trial, d);
      const double decrease = -dot(step, grad);
      if (std::isfinite(trial_eval.total()) && trial_eval.total() <= cost - 1e-4 * decrease &&
          decrease > 0.0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      res.converged = res.grad_norm <= std::sqrt(opt.grad_tol) * (1.0 + cost);
      break;
    }
    const FieDecision s = difference(trial, d);
    auto trial_lin = prob.linearize(trial, trial_eval.path);
    Gradient trial_grad = prob.gradient(trial, trial_eval.path, trial_lin);
    // Barzilai-Borwein step length for the next iteration
    Gradient dg;
    dg.x0 = trial_grad.x0 - grad.x0;
    for (std::size_t k = 0; k < grad.w.size(); ++k) dg.w.push_back(trial_grad.w[k] - grad.w[k]);
    const double sy = dot(s, dg);
    const double ss = s.x0.squaredNorm() + [&] {
      double v = 0.0;
      for (const Vector& w : s.w) v += w.squaredNorm();
      return v;
    }();
    alpha = sy > 0.0 ? ss / sy : alpha * 2.0;
    const double step_norm = step_inf_norm(trial, d);
    d = std::move(trial);
    eval = std::move(trial_eval);
    grad = std::move(trial_grad);
    if (step_norm <= opt.step_tol * (1.0 + decision_inf_norm(d))) {
      res.grad_norm = projected_gradient_norm(model, d, grad);
      res.converged = true;
      break;
    }
  }
  res.decision = std::move(d);
  res.evaluation = std::move(eval);
  return res;
}

double max_state_violation(const SystemModel& model, const VectorSequence& xs) {
  double v = 0.0;
  for (const Vector& x : xs) v = std::max(v, vector_inf_norm(model.state_set().violation(x)));
  return v;
}

FieDecision default_start(const SystemModel& model, const PriorData& prior) {
  FieDecision d;
  d.x0 = prior.x_bar;
  d.w = prior.w_bar;
  return project(model, std::move(d));
}

void require_decision(const SystemModel& model, const FieDecision& d, std::size_t horizon) {
  detail::require_dim(d.x0.size(), model.n_x(), "FIE decision: x0");
  if (d.w.size() != horizon) throw InputError("FIE decision: noise sequence length mismatch");
  for (const Vector& w : d.w) detail::require_dim(w.size(), model.n_w(), "FIE decision: noise");
}

void require_prior(const SystemModel& model, const PriorData& prior, TimeIndex t) {
  require_horizon(prior, t);
  detail::require_dim(prior.x_bar.size(), model.n_x(), "FIE prior: x_bar");
  for (const Vector& w : prior.w_bar) detail::require_dim(w.size(), model.n_w(), "FIE prior: w_bar");
  for (const Vector& y : prior.y_bar) detail::require_dim(y.size(), model.n_y(), "FIE prior: y_bar");
}

}  // namespace

void FieConfig::validate(const SystemModel& model) const {
  if (!(eta >= 0.0 && eta < 1.0)) throw InputError("FieConfig: eta must lie in [0, 1)");
  if (const auto* q = std::get_if<QuadraticObjective>(&objective)) {
    require_spd(q->P, model.n_x(), "P");
    require_spd(q->Q, model.n_w(), "Q");
    require_spd(q->R, model.n_y(), "R");
  }
  if (solver.max_iter <= 0) throw InputError("FieConfig: max_iter must be positive");
  if (solver.stall_iter < 0) throw InputError("FieConfig: stall_iter must be non-negative");
  if (!(solver.stall_tol >= 0.0)) throw InputError("FieConfig: stall_tol must be non-negative");
  if (!(solver.damping_init > 0.0)) throw InputError("FieConfig: damping_init must be positive");
  if (solver.max_penalty_rounds <= 0) throw InputError("FieConfig: max_penalty_rounds must be positive");
  if (!(solver.penalty_growth > 1.0)) throw InputError("FieConfig: penalty_growth must exceed 1");
  if (!(solver.penalty_weight_init > 0.0)) {
    throw InputError("FieConfig: penalty_weight_init must be positive");
  }
}

double eval_objective(const FieConfig& config, const Vector& x_hat_t0,
                      const VectorSequence& w_hat_seq, const VectorSequence& y_hat_seq,
                      const PriorData& prior, TimeIndex t) {
  require_horizon(prior, t);
  const auto n = static_cast<std::size_t>(t - prior.t0);
  if (w_hat_seq.size() != n || y_hat_seq.size() != n) {
    throw InputError("eval_objective: estimate sequences must have length t - t0");
  }
  detail::require_dim(x_hat_t0.size(), prior.x_bar.size(), "eval_objective: x_hat_t0");
  if (!(config.eta >= 0.0 && config.eta < 1.0)) throw InputError("FieConfig: eta must lie in [0, 1)");
  const Vector ex = x_hat_t0 - prior.x_bar;
  const double prior_weight = std::pow(config.eta, static_cast<double>(n));
  double v = 0.0;
  if (const auto* q = std::get_if<QuadraticObjective>(&config.objective)) {
    v += 2.0 * prior_weight * ex.dot(q->P * ex);
    for (std::size_t j = 1; j <= n; ++j) {
      const Vector ew = w_hat_seq[n - j] - prior.w_bar[n - j];
      const Vector ey = y_hat_seq[n - j] - prior.y_bar[n - j];
      v += 2.0 * std::pow(config.eta, static_cast<double>(j - 1)) *
           (ew.dot(q->Q * ew) + ey.dot(q->R * ey));
    }
  } else {
    const auto& g = std::get<GeneralObjective>(config.objective);
    v += prior_weight * g.alpha2(2.0 * ex.norm());
    for (std::size_t j = 1; j <= n; ++j) {
      v += std::pow(config.eta, static_cast<double>(j - 1)) *
           (g.sigma_w(2.0 * (w_hat_seq[n - j] - prior.w_bar[n - j]).norm()) +
            g.sigma_y(2.0 * (y_hat_seq[n - j] - prior.y_bar[n - j]).norm()));
    }
  }
  return v;
}

double eval_decision(const SystemModel& model, const FieConfig& config, const PriorData& prior,
                     TimeIndex t, const FieDecision& decision) {
  require_prior(model, prior, t);
  require_decision(model, decision, static_cast<std::size_t>(t - prior.t0));
  const ShootingProblem prob(model, config, prior, t, 0.0);
  return prob.evaluate(decision).objective;
}

FieDecision objective_gradient(const SystemModel& model, const FieConfig& config,
                               const PriorData& prior, TimeIndex t, const FieDecision& decision) {
  require_prior(model, prior, t);
  require_decision(model, decision, static_cast<std::size_t>(t - prior.t0));
  const ShootingProblem prob(model, config, prior, t, 0.0);
  const Rollout path = prob.roll(decision);
  const Gradient g = prob.gradient(decision, path, prob.linearize(decision, path));
  return FieDecision{g.x0, g.w};
}

EstimateRecord solve_fie(const SystemModel& model, const FieConfig& config, const PriorData& prior,
                         TimeIndex t, const std::optional<FieDecision>& warm_start) {
  const auto started = std::chrono::steady_clock::now();
  config.validate(model);
  require_prior(model, prior, t);
  const auto horizon = static_cast<std::size_t>(t - prior.t0);

  FieDecision d;
  if (warm_start) {
    require_decision(model, *warm_start, horizon);
    d = project(model, *warm_start);
  } else {
    d = default_start(model, prior);
  }

  const bool needs_penalty = !model.state_set().is_unbounded();
  const int rounds = needs_penalty ? config.solver.max_penalty_rounds : 1;
  double mu = needs_penalty ? config.solver.penalty_weight_init : 0.0;

  EstimateRecord rec;
  rec.t = t;
  InnerResult inner;
  double violation = 0.0;
  int total_iterations = 0;
  for (int round = 0; round < rounds; ++round) {
    const ShootingProblem prob(model, config, prior, t, mu);
    inner = config.is_quadratic() ? levenberg_marquardt(prob, std::move(d), config.solver)
                                  : projected_gradient(prob, std::move(d), config.solver);
    total_iterations += inner.iterations;
    rec.stats.penalty_rounds = round + 1;
    d = inner.decision;
    violation = needs_penalty ? max_state_violation(model, inner.evaluation.path.x) : 0.0;
    if (violation <= config.solver.feasibility_tol) break;
    mu *= config.solver.penalty_growth;
  }

  const bool feasible = violation <= config.solver.feasibility_tol;
  rec.x_hat_seq = inner.evaluation.path.x;
  rec.w_hat_seq = d.w;
  rec.z_hat = model.phi(rec.x_hat_seq.back());
  rec.objective_value = inner.evaluation.objective;
  rec.stats.iterations = total_iterations;
  rec.stats.final_grad_norm = inner.grad_norm;
  rec.stats.final_damping = inner.damping;
  rec.stats.converged = inner.converged && feasible;
  rec.stats.note = "local solution";
  if (!inner.converged) rec.stats.note += "; iteration limit or stalled line search";
  if (inner.stalled) rec.stats.note += "; stopped on small relative decrease";
  if (!feasible) rec.stats.note += "; state box violated by " + format_double(violation);
  rec.stats.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return rec;
}

std::vector<EstimateRecord> run_fie_sequence(const SystemModel& model, const FieConfig& config,
                                             const Vector& x_bar_t0,
                                             const VectorSequence& measurements, TimeIndex t0) {
  if (measurements.empty()) throw InputError("run_fie_sequence: no measurements");
  config.validate(model);
  detail::require_dim(x_bar_t0.size(), model.n_x(), "run_fie_sequence: x_bar_t0");

  PriorData prior;
  prior.t0 = t0;
  prior.x_bar = x_bar_t0;
  FieDecision warm;
  warm.x0 = model.state_set().project(x_bar_t0);
  const Vector zero_noise = model.noise_set().project(Vector::Zero(model.n_w()));

  // the damping is carried over between solves like the decision
  FieConfig step_config = config;
  std::vector<EstimateRecord> records;
  records.reserve(measurements.size());
  for (std::size_t k = 0; k < measurements.size(); ++k) {
    const TimeIndex t = t0 + static_cast<TimeIndex>(k) + 1;
    prior.w_bar.push_back(Vector::Zero(model.n_w()));
    prior.y_bar.push_back(measurements[k]);
    warm.w.push_back(zero_noise);
    try {
      EstimateRecord rec = solve_fie(model, step_config, prior, t, warm);
      warm.x0 = rec.x_hat_seq.front();
      warm.w = rec.w_hat_seq;
      if (rec.stats.final_damping > 0.0) {
        step_config.solver.damping_init = std::clamp(rec.stats.final_damping, config.solver.damping_init, 1.0);
      }
      records.push_back(std::move(rec));
    } catch (const SolverError& e) {
      EstimateRecord rec;
      rec.t = t;
      rec.failed = true;
      rec.z_hat = Vector::Constant(model.n_z(), std::numeric_limits<double>::quiet_NaN());
      rec.objective_value = std::numeric_limits<double>::quiet_NaN();
      rec.stats.note = e.what();
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace fiekit
