#pragma once

// Shared generators and reference computations for the unit and acceptance tests.

#include <cmath>
#include <random>
#include <utility>

#include "fiekit/fie.hpp"
#include "fiekit/lyapunov.hpp"

namespace fiekit::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                            double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  return random_matrix(rng, n, 1, scale);
}

/// G G^T + n I, well conditioned.
inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n) {
  const Matrix g = random_matrix(rng, n, n);
  return g * g.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

/// Random system with A scaled to the requested spectral radius.
inline LinearSystem random_linear_system(std::mt19937_64& rng, Eigen::Index nx, Eigen::Index nw,
                                         Eigen::Index ny, Eigen::Index nz, double radius) {
  LinearSystem sys;
  sys.A = random_matrix(rng, nx, nx);
  const double r = spectral_radius(sys.A);
  if (r > 0.0) sys.A *= radius / r;
  sys.B = random_matrix(rng, nx, nw);
  sys.C = random_matrix(rng, ny, nx);
  sys.D = random_matrix(rng, ny, nw, 0.3);
  sys.L = random_matrix(rng, nz, nx);
  return sys;
}

/// Dense least squares over the stacked decision [x0; w_0; ...; w_{T-1}] with
/// cost 2 eta^T |x0 - xbar|_P^2 + 2 sum_k eta^(T-k-1) (|w_k - wbar_k|_Q^2 + |y_k - ybar_k|_R^2).
/// Returns L x_T at the minimizer.
inline Vector dense_wls_functional(const LinearSystem& sys, const QuadraticObjective& q, double eta,
                                   const Vector& x_bar, const VectorSequence& w_bar,
                                   const VectorSequence& y_bar) {
  const Eigen::Index nx = sys.n_x();
  const Eigen::Index nw = sys.n_w();
  const Eigen::Index ny = sys.n_y();
  const auto T = static_cast<Eigen::Index>(y_bar.size());
  const Eigen::Index nv = nx + T * nw;

  const Matrix p_half = Eigen::LLT<Matrix>(q.P).matrixU();
  const Matrix q_half = Eigen::LLT<Matrix>(q.Q).matrixU();
  const Matrix r_half = Eigen::LLT<Matrix>(q.R).matrixU();

  const Eigen::Index rows = nx + T * (nw + ny);
  Matrix J = Matrix::Zero(rows, nv);
  Vector b = Vector::Zero(rows);

  // state map x_k = X v
  Matrix X = Matrix::Zero(nx, nv);
  X.leftCols(nx).setIdentity();

  double s = std::sqrt(2.0 * std::pow(eta, static_cast<double>(T)));
  J.block(0, 0, nx, nx) = s * p_half;
  b.head(nx) = s * p_half * x_bar;
  Eigen::Index row = nx;
  for (Eigen::Index k = 0; k < T; ++k) {
    s = std::sqrt(2.0 * std::pow(eta, static_cast<double>(T - k - 1)));
    Matrix Wsel = Matrix::Zero(nw, nv);
    Wsel.block(0, nx + k * nw, nw, nw).setIdentity();
    J.block(row, 0, nw, nv) = s * q_half * Wsel;
    b.segment(row, nw) = s * q_half * w_bar[k];
    row += nw;
    J.block(row, 0, ny, nv) = s * r_half * (sys.C * X + sys.D * Wsel);
    b.segment(row, ny) = s * r_half * y_bar[k];
    row += ny;
    X = (sys.A * X + sys.B * Wsel).eval();
  }
  const Vector v = J.colPivHouseholderQr().solve(b);
  return sys.L * X * v;
}

struct LineFit {
  double slope = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (i, values[i]).
inline LineFit fit_line(const std::vector<double>& values) {
  const auto n = static_cast<double>(values.size());
  double sx = 0.0;
  double sy = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sx += static_cast<double>(i);
    sy += values[i];
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dx = static_cast<double>(i) - mx;
    const double dy = values[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.r_squared = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return fit;
}

/// Smooth nonlinear model with analytic Jacobians:
///   f = A x + B w + a .* sin(x),  h = C tanh(x) + D w,  phi = L x + 0.5 |x|^2.
inline SystemModel random_nonlinear_model(std::mt19937_64& rng, Eigen::Index nx, Eigen::Index nw,
                                          Eigen::Index ny) {
  const Matrix A = 0.5 * random_matrix(rng, nx, nx) / std::sqrt(static_cast<double>(nx));
  const Matrix B = random_matrix(rng, nx, nw);
  const Vector a = random_vector(rng, nx, 0.5);
  const Matrix C = random_matrix(rng, ny, nx);
  const Matrix D = random_matrix(rng, ny, nw, 0.3);
  const RowVector L = random_matrix(rng, 1, nx);
  ModelJacobians jac;
  jac.dynamics = [=](const Vector& x, const Vector&, TimeIndex) {
    Matrix dx = A;
    dx.diagonal() += a.cwiseProduct(x.array().cos().matrix());
    return StepJacobian{dx, B};
  };
  jac.output = [=](const Vector& x, const Vector&, TimeIndex) {
    const Vector th = x.array().tanh();
    const Vector dth = (1.0 - th.array().square()).matrix();
    return StepJacobian{C * dth.asDiagonal(), D};
  };
  jac.functional = [=](const Vector& x) { return Matrix(L + x.transpose()); };
  return SystemModel(
      ModelDimensions{nx, nw, ny, 1},
      [=](const Vector& x, const Vector& w, TimeIndex) -> Vector {
        return A * x + B * w + a.cwiseProduct(x.array().sin().matrix());
      },
      [=](const Vector& x, const Vector& w, TimeIndex) -> Vector {
        return C * Vector(x.array().tanh()) + D * w;
      },
      [=](const Vector& x) -> Vector { return Vector::Constant(1, L.dot(x) + 0.5 * x.squaredNorm()); },
      BoxSet::unbounded(nx), BoxSet::unbounded(nw), std::move(jac));
}

/// Stacks a decision into one vector.
inline Vector flatten(const FieDecision& d) {
  Eigen::Index n = d.x0.size();
  for (const Vector& w : d.w) n += w.size();
  Vector v(n);
  Eigen::Index pos = 0;
  v.segment(pos, d.x0.size()) = d.x0;
  pos += d.x0.size();
  for (const Vector& w : d.w) {
    v.segment(pos, w.size()) = w;
    pos += w.size();
  }
  return v;
}

inline FieDecision unflatten(const Vector& v, Eigen::Index nx, Eigen::Index nw, std::size_t T) {
  FieDecision d;
  d.x0 = v.head(nx);
  for (std::size_t k = 0; k < T; ++k) d.w.push_back(v.segment(nx + static_cast<Eigen::Index>(k) * nw, nw));
  return d;
}

/// Central differences of eval_decision.
inline Vector central_difference_gradient(const SystemModel& model, const FieConfig& config,
                                          const PriorData& prior, TimeIndex t,
                                          const FieDecision& d) {
  const Vector v = flatten(d);
  const std::size_t T = d.w.size();
  Vector g(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(v[i]));
    Vector vp = v;
    Vector vm = v;
    vp[i] += h;
    vm[i] -= h;
    const double fp = eval_decision(model, config, prior, t, unflatten(vp, model.n_x(), model.n_w(), T));
    const double fm = eval_decision(model, config, prior, t, unflatten(vm, model.n_x(), model.n_w(), T));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace fiekit::testing
