#include "fiekit/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

namespace fiekit {

BoxSet::BoxSet(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  detail::require_dim(upper_.size(), lower_.size(), "BoxSet upper bound");
  for (Eigen::Index i = 0; i < lower_.size(); ++i) {
    if (std::isnan(lower_[i]) || std::isnan(upper_[i]) || lower_[i] > upper_[i]) {
      throw InputError("BoxSet: empty box, lower > upper at component " + std::to_string(i));
    }
  }
}

BoxSet BoxSet::unbounded(Eigen::Index dim) {
  const double inf = std::numeric_limits<double>::infinity();
  return BoxSet(Vector::Constant(dim, -inf), Vector::Constant(dim, inf));
}

BoxSet BoxSet::symmetric(Eigen::Index dim, double radius) {
  if (!(radius >= 0.0)) throw InputError("BoxSet: radius must be non-negative");
  return BoxSet(Vector::Constant(dim, -radius), Vector::Constant(dim, radius));
}

BoxSet BoxSet::concatenate(const BoxSet& head, const BoxSet& tail) {
  Vector lo(head.dim() + tail.dim());
  Vector hi(lo.size());
  lo << head.lower(), tail.lower();
  hi << head.upper(), tail.upper();
  return BoxSet(std::move(lo), std::move(hi));
}

bool BoxSet::contains(const Vector& v, double tol) const {
  if (v.size() != dim()) return false;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= lower_[i] - tol && v[i] <= upper_[i] + tol)) return false;
  }
  return true;
}

bool BoxSet::is_unbounded() const {
  return (lower_.array() == -std::numeric_limits<double>::infinity()).all() &&
         (upper_.array() == std::numeric_limits<double>::infinity()).all();
}

bool BoxSet::is_bounded() const { return lower_.allFinite() && upper_.allFinite(); }

Vector BoxSet::project(const Vector& v) const {
  detail::require_dim(v.size(), dim(), "BoxSet::project");
  return v.cwiseMax(lower_).cwiseMin(upper_);
}

Vector BoxSet::violation(const Vector& v) const {
  detail::require_dim(v.size(), dim(), "BoxSet::violation");
  return (lower_ - v).cwiseMax(0.0) + (v - upper_).cwiseMax(0.0);
}

SystemModel::SystemModel(ModelDimensions dims, StepMap f, StepMap h, FunctionalMap phi,
                         BoxSet state_set, BoxSet noise_set, ModelJacobians jacobians)
    : dims_(dims),
      f_(std::move(f)),
      h_(std::move(h)),
      phi_(std::move(phi)),
      state_set_(std::move(state_set)),
      noise_set_(std::move(noise_set)),
      jacobians_(std::move(jacobians)) {
  if (dims_.n_x <= 0 || dims_.n_w < 0 || dims_.n_y < 0 || dims_.n_z <= 0) {
    throw InputError("SystemModel: dimensions must be positive");
  }
  if (!f_ || !h_ || !phi_) throw InputError("SystemModel: f, h and phi are required");
  detail::require_dim(state_set_.dim(), dims_.n_x, "SystemModel state set");
  detail::require_dim(noise_set_.dim(), dims_.n_w, "SystemModel noise set");
}

Vector SystemModel::f(const Vector& x, const Vector& w, TimeIndex t) const {
  detail::require_dim(x.size(), n_x(), "f: state");
  detail::require_dim(w.size(), n_w(), "f: noise");
  Vector out = f_(x, w, t);
  detail::require_dim(out.size(), n_x(), "f: result");
  return out;
}

Vector SystemModel::h(const Vector& x, const Vector& w, TimeIndex t) const {
  detail::require_dim(x.size(), n_x(), "h: state");
  detail::require_dim(w.size(), n_w(), "h: noise");
  Vector out = h_(x, w, t);
  detail::require_dim(out.size(), n_y(), "h: result");
  return out;
}

Vector SystemModel::phi(const Vector& x) const {
  detail::require_dim(x.size(), n_x(), "phi: state");
  Vector out = phi_(x);
  detail::require_dim(out.size(), n_z(), "phi: result");
  return out;
}

StepJacobian SystemModel::finite_difference(const StepMap& map, Eigen::Index rows,
                                            const Vector& x, const Vector& w,
                                            TimeIndex t) const {
  const double root_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  const Vector base = map(x, w, t);
  StepJacobian jac{Matrix(rows, x.size()), Matrix(rows, w.size())};
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = root_eps * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + step;
    jac.dx.col(i) = (map(xp, w, t) - base) / (xp[i] - x[i]);
    xp[i] = x[i];
  }
  Vector wp = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double step = root_eps * (1.0 + std::abs(w[i]));
    wp[i] = w[i] + step;
    jac.dw.col(i) = (map(x, wp, t) - base) / (wp[i] - w[i]);
    wp[i] = w[i];
  }
  return jac;
}

Matrix SystemModel::curvature(const Vector& x, const Vector& w, TimeIndex t, const Vector& p_f,
                              const Vector& p_h) const {
  const Eigen::Index n = n_x() + n_w();
  Matrix c = Matrix::Zero(n, n);
  if (jacobians_.dynamics_curvature) c += jacobians_.dynamics_curvature(x, w, t, p_f);
  if (jacobians_.output_curvature) c += jacobians_.output_curvature(x, w, t, p_h);
  return c;
}

StepJacobian SystemModel::dynamics_jacobian(const Vector& x, const Vector& w, TimeIndex t) const {
  if (jacobians_.dynamics) return jacobians_.dynamics(x, w, t);
  return finite_difference(f_, n_x(), x, w, t);
}

StepJacobian SystemModel::output_jacobian(const Vector& x, const Vector& w, TimeIndex t) const {
  if (jacobians_.output) return jacobians_.output(x, w, t);
  return finite_difference(h_, n_y(), x, w, t);
}

Matrix SystemModel::functional_jacobian(const Vector& x) const {
  if (jacobians_.functional) return jacobians_.functional(x);
  const StepMap as_step = [this](const Vector& s, const Vector&, TimeIndex) { return phi_(s); };
  return finite_difference(as_step, n_z(), x, Vector(0), 0).dx;
}

Trajectory rollout(const SystemModel& model, const Vector& x0, const VectorSequence& w_seq,
                   TimeIndex t0) {
  detail::require_dim(x0.size(), model.n_x(), "rollout: x0");
  Trajectory traj;
  traj.t0 = t0;
  traj.x.reserve(w_seq.size() + 1);
  traj.z.reserve(w_seq.size() + 1);
  traj.w = w_seq;
  traj.y.reserve(w_seq.size());
  traj.x.push_back(x0);
  traj.z.push_back(model.phi(x0));
  for (std::size_t k = 0; k < w_seq.size(); ++k) {
    detail::require_dim(w_seq[k].size(), model.n_w(), "rollout: noise");
    const TimeIndex t = t0 + static_cast<TimeIndex>(k);
    traj.y.push_back(model.h(traj.x[k], w_seq[k], t));
    traj.x.push_back(model.f(traj.x[k], w_seq[k], t));
    traj.z.push_back(model.phi(traj.x.back()));
  }
  return traj;
}

SolutionReport check_solution(const SystemModel& model, const Trajectory& traj, double tol) {
  const std::size_t T = traj.w.size();
  if (traj.x.size() != T + 1 || traj.y.size() != T || traj.z.size() != T + 1) {
    throw InputError("check_solution: sequence lengths must follow (T+1, T, T, T+1)");
  }
  SolutionReport report;
  auto defect = [&](const Vector& a, const Vector& b) {
    if (a.size() == 0) return;
    report.max_defect = std::max(report.max_defect, (a - b).cwiseAbs().maxCoeff());
  };
  for (std::size_t k = 0; k <= T; ++k) {
    detail::require_dim(traj.x[k].size(), model.n_x(), "check_solution: state");
    detail::require_dim(traj.z[k].size(), model.n_z(), "check_solution: virtual output");
    defect(traj.z[k], model.phi(traj.x[k]));
    const double state_viol = model.state_set().violation(traj.x[k]).maxCoeff();
    if (state_viol > 0.0) {
      report.constraint_violations.push_back({ConstraintViolation::Kind::State, k, state_viol});
    }
    if (k == T) break;
    detail::require_dim(traj.w[k].size(), model.n_w(), "check_solution: noise");
    detail::require_dim(traj.y[k].size(), model.n_y(), "check_solution: output");
    const TimeIndex t = traj.t0 + static_cast<TimeIndex>(k);
    defect(traj.x[k + 1], model.f(traj.x[k], traj.w[k], t));
    defect(traj.y[k], model.h(traj.x[k], traj.w[k], t));
    if (model.n_w() > 0) {
      const double noise_viol = model.noise_set().violation(traj.w[k]).maxCoeff();
      if (noise_viol > 0.0) {
        report.constraint_violations.push_back({ConstraintViolation::Kind::Noise, k, noise_viol});
      }
    }
  }
  report.is_solution = report.max_defect <= tol && report.constraint_violations.empty();
  return report;
}

NoiseSampler::NoiseSampler(BoxSet box, std::uint64_t seed) : box_(std::move(box)), seed_(seed) {
  if (!box_.is_bounded()) throw InputError("NoiseSampler: uniform sampling needs a bounded box");
}

VectorSequence NoiseSampler::draw(std::size_t count) const {
  std::mt19937_64 engine(seed_);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VectorSequence out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Vector v(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) {
      const double lo = box_.lower()[i];
      const double hi = box_.upper()[i];
      // clamp guards the rounding of lo + u * (hi - lo) at u close to 1
      v[i] = lo == hi ? lo : std::clamp(lo + unit(engine) * (hi - lo), lo, hi);
    }
    out.push_back(std::move(v));
  }
  return out;
}

Trajectory simulate(const SystemModel& model, const Vector& x0, const NoiseSampler& sampler_x,
                    const NoiseSampler& sampler_y, std::size_t horizon, TimeIndex t0) {
  detail::require_dim(sampler_x.dim() + sampler_y.dim(), model.n_w(), "simulate: sampler dims");
  const VectorSequence wx = sampler_x.draw(horizon);
  const VectorSequence wy = sampler_y.draw(horizon);
  VectorSequence w(horizon);
  for (std::size_t k = 0; k < horizon; ++k) {
    w[k].resize(model.n_w());
    w[k] << wx[k], wy[k];
  }
  return rollout(model, x0, w, t0);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

namespace {

void write_block(std::ostream& os, const char* prefix, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) os << ',' << prefix << i;
}

void write_values(std::ostream& os, const Vector* v, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    os << ',';
    if (v != nullptr) os << format_double((*v)[i]);
  }
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index nx = traj.x.empty() ? 0 : traj.x.front().size();
  const Eigen::Index nw = traj.w.empty() ? 0 : traj.w.front().size();
  const Eigen::Index ny = traj.y.empty() ? 0 : traj.y.front().size();
  const Eigen::Index nz = traj.z.empty() ? 0 : traj.z.front().size();
  os << 't';
  write_block(os, "x_", nx);
  write_block(os, "w_", nw);
  write_block(os, "y_", ny);
  write_block(os, "z_", nz);
  os << '\n';
  for (std::size_t k = 0; k < traj.x.size(); ++k) {
    const bool last = k == traj.w.size();
    os << traj.t0 + static_cast<TimeIndex>(k);
    write_values(os, &traj.x[k], nx);
    write_values(os, last ? nullptr : &traj.w[k], nw);
    write_values(os, last ? nullptr : &traj.y[k], ny);
    write_values(os, &traj.z[k], nz);
    os << '\n';
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace fiekit
