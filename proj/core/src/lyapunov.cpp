#include "fiekit/lyapunov.hpp"

#include <complex>
#include <limits>

#include <cmath>
#include <random>
#include <string>

#include "fiekit/model.hpp"

namespace fiekit {

namespace {

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw InputError(std::string(name) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

double lambda_max_sym(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return std::max(0.0, eig.eigenvalues().maxCoeff());
}

double lambda_min_sym(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

Eigen::Index numerical_rank(const Eigen::MatrixXcd& m, double tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  const auto& sv = svd.singularValues();
  const double threshold = tol * std::max(1.0, sv.maxCoeff());
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv[i] > threshold ? 1 : 0;
  return rank;
}

Matrix observability_matrix(const Matrix& A, const Matrix& C) {
  const Eigen::Index n = A.rows();
  Matrix O(C.rows() * n, n);
  Matrix block = C;
  for (Eigen::Index k = 0; k < n; ++k) {
    O.middleRows(k * C.rows(), C.rows()) = block;
    block = block * A;
  }
  return O;
}

}  // namespace

void LinearSystem::validate() const {
  const Eigen::Index n = A.rows();
  if (n == 0) throw InputError("LinearSystem: A must be non-empty");
  require_shape(A, n, n, "LinearSystem A");
  require_shape(B, n, B.cols(), "LinearSystem B");
  require_shape(C, C.rows(), n, "LinearSystem C");
  require_shape(D, C.rows(), B.cols(), "LinearSystem D");
  require_shape(L, L.rows(), n, "LinearSystem L");
  if (L.rows() == 0) throw InputError("LinearSystem: L must have at least one row");
}

void LinearFunctionalObserver::validate(const LinearSystem& sys) const {
  const Eigen::Index nxi = N.rows();
  require_shape(N, nxi, nxi, "observer N");
  require_shape(J, nxi, sys.n_y(), "observer J");
  require_shape(P_xi, sys.n_z(), nxi, "observer P_xi");
  require_shape(T, nxi, sys.n_x(), "observer T");
  detail::require_dim(xi0.size(), nxi, "observer xi0");
  if (has_feedthrough()) require_shape(J1, sys.n_z(), sys.n_y(), "observer J1");
  if (nxi < sys.n_z() || nxi > sys.n_x()) {
    throw InputError("observer order must lie in [n_z, n_x]");
  }
}

SystemModel linear_model(const LinearSystem& sys, BoxSet state_set, BoxSet noise_set) {
  sys.validate();
  if (state_set.dim() == 0) state_set = BoxSet::unbounded(sys.n_x());
  if (noise_set.dim() == 0) noise_set = BoxSet::unbounded(sys.n_w());
  const ModelDimensions dims{sys.n_x(), sys.n_w(), sys.n_y(), sys.n_z()};
  ModelJacobians jac;
  jac.dynamics = [sys](const Vector&, const Vector&, TimeIndex) {
    return StepJacobian{sys.A, sys.B};
  };
  jac.output = [sys](const Vector&, const Vector&, TimeIndex) {
    return StepJacobian{sys.C, sys.D};
  };
  jac.functional = [sys](const Vector&) { return sys.L; };
  return SystemModel(
      dims, [sys](const Vector& x, const Vector& w, TimeIndex) -> Vector { return sys.A * x + sys.B * w; },
      [sys](const Vector& x, const Vector& w, TimeIndex) -> Vector { return sys.C * x + sys.D * w; },
      [sys](const Vector& x) -> Vector { return sys.L * x; }, std::move(state_set),
      std::move(noise_set), std::move(jac));
}

double spectral_radius(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> eig(m, false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

ObserverConditionReport verify_observer_conditions(const LinearSystem& sys,
                                                   const LinearFunctionalObserver& obs,
                                                   double tol) {
  sys.validate();
  obs.validate(sys);
  ObserverConditionReport r;
  r.sylvester_residual = (obs.N * obs.T - obs.T * sys.A + obs.J * sys.C).norm();
  Matrix functional = obs.P_xi * obs.T - sys.L;
  if (obs.has_feedthrough()) functional += obs.J1 * sys.C;
  r.functional_residual = functional.norm();
  r.spectral_radius = spectral_radius(obs.N);
  r.passes = r.sylvester_residual <= tol && r.functional_residual <= tol && r.spectral_radius < 1.0;
  return r;
}

Matrix solve_discounted_lyapunov(const Matrix& N, double rho) {
  require_shape(N, N.rows(), N.rows(), "solve_discounted_lyapunov N");
  if (!(rho < 1.0)) throw InputError("solve_discounted_lyapunov: rho must be below 1");
  const double radius = spectral_radius(N);
  if (!(rho > radius * radius)) {
    throw InfeasibleError("solve_discounted_lyapunov: rho must exceed spectral_radius(N)^2 = " +
                          std::to_string(radius * radius));
  }
  const Matrix M = N / std::sqrt(rho);
  const Eigen::Index n = N.rows();
  Matrix P = Matrix::Identity(n, n);
  Matrix power = Matrix::Identity(n, n);  // M^k
  constexpr int kMaxTerms = 10'000'000;
  for (int k = 1; k <= kMaxTerms; ++k) {
    power = power * M;
    const Matrix term = power.transpose() * power;
    P += term;
    if (term.norm() < 1e-14) return 0.5 * (P + P.transpose());
  }
  throw InfeasibleError("solve_discounted_lyapunov: series did not converge");
}

double LyapunovCertificate::storage(const Vector& dx) const {
  const Vector tdx = T * dx;
  double w = tdx.dot(P * tdx);
  if (output_term) w += (C * dx).squaredNorm();
  return w;
}

LyapunovCertificate build_certificate(const LinearSystem& sys, const LinearFunctionalObserver& obs,
                                      const CertificateOptions& options) {
  const ObserverConditionReport report = verify_observer_conditions(sys, obs, options.condition_tol);
  if (!report.passes) {
    throw InfeasibleError("build_certificate: observer conditions fail (sylvester " +
                          format_double(report.sylvester_residual) + ", functional " +
                          format_double(report.functional_residual) + ", spectral radius " +
                          format_double(report.spectral_radius) + ")");
  }
  const double r2 = report.spectral_radius * report.spectral_radius;
  const double rho = r2 + std::max(1e-6, 0.01 * (1.0 - r2));
  if (!(rho < 1.0)) throw InfeasibleError("build_certificate: no contraction rate below 1");

  LyapunovCertificate cert;
  cert.T = obs.T;
  cert.C = sys.C;
  cert.rho = rho;
  cert.output_term = options.output_term;
  cert.P = solve_discounted_lyapunov(obs.N, rho);

  const Matrix noise_map = obs.T * sys.B - obs.J * sys.D;  // TB - JD
  double contraction = rho;
  double extra_y = 0.0;
  double extra_w = 0.0;
  double extra_w_young = 0.0;
  if (options.output_term) {
    // C A = G1 T + G2 C must hold for |C dx+|^2 to be bounded by the storage.
    Matrix stacked(obs.T.rows() + sys.C.rows(), sys.n_x());
    stacked << obs.T, sys.C;
    const Matrix CA = sys.C * sys.A;
    const Matrix G = stacked.transpose()
                         .completeOrthogonalDecomposition()
                         .solve(CA.transpose())
                         .transpose();
    if ((G * stacked - CA).norm() > 1e-9 * (1.0 + CA.norm())) {
      throw InfeasibleError("build_certificate: C A is not in the row space of [T; C]");
    }
    const Matrix G1 = G.leftCols(obs.T.rows());
    const Matrix G2 = G.rightCols(sys.C.rows());
    const double g1 = lambda_max_sym(G1.transpose() * G1);
    const double g2 = lambda_max_sym(G2.transpose() * G2);
    // P is homogeneous: scale it until the cross term costs at most (1 - rho)/4.
    const double scale = std::max(1.0, 8.0 * g1 / (lambda_min_sym(cert.P) * (1.0 - rho)));
    cert.P *= scale;
    contraction = rho + 2.0 * g1 / lambda_min_sym(cert.P);
    extra_y = 4.0 * g2;
    extra_w = 4.0 * g2 * lambda_max_sym(sys.D.transpose() * sys.D);
    extra_w_young = lambda_max_sym((sys.C * sys.B).transpose() * (sys.C * sys.B));
  }

  const double eps = options.epsilon.value_or((1.0 / contraction - 1.0) / 2.0);
  if (!(eps > 0.0)) throw InputError("build_certificate: epsilon must be positive");
  cert.epsilon = eps;
  cert.eta = (1.0 + eps) * contraction;
  if (!(cert.eta < 1.0)) {
    throw InfeasibleError("build_certificate: (1 + epsilon) rho = " + format_double(cert.eta) +
                          " is not below 1");
  }
  const double young = 2.0 * (1.0 + eps) / eps;
  cert.sigma_y_gain = young * lambda_max_sym(obs.J.transpose() * cert.P * obs.J) +
                      (1.0 + eps) * extra_y;
  cert.sigma_w_gain = young * lambda_max_sym(noise_map.transpose() * cert.P * noise_map) +
                      (1.0 + eps) * extra_w + (1.0 + 1.0 / eps) * extra_w_young;

  const double pmin = lambda_min_sym(cert.P);
  const double pxi = lambda_max_sym(obs.P_xi.transpose() * obs.P_xi);
  if (options.output_term && obs.has_feedthrough()) {
    cert.alpha1_gain = std::max(2.0 * pxi / pmin, 2.0 * lambda_max_sym(obs.J1.transpose() * obs.J1));
  } else {
    cert.alpha1_gain = pxi / pmin;
  }
  Matrix upper = obs.T.transpose() * cert.P * obs.T;
  if (options.output_term) upper += sys.C.transpose() * sys.C;
  cert.alpha2_gain = lambda_max_sym(upper);
  return cert;
}

DecreaseMargins certificate_margins(const LyapunovCertificate& cert, const LinearSystem& sys,
                                    const Vector& x, const Vector& x_tilde, const Vector& w,
                                    const Vector& w_tilde) {
  const Vector dx = x - x_tilde;
  const Vector dw = w - w_tilde;
  const Vector dy = sys.C * dx + sys.D * dw;
  const Vector dx_next = sys.A * dx + sys.B * dw;
  const double storage = cert.storage(dx);
  DecreaseMargins m;
  m.decrease = cert.eta * storage + cert.sigma_w_gain * dw.squaredNorm() +
               cert.sigma_y_gain * dy.squaredNorm() - cert.storage(dx_next);
  m.lower_bound = cert.alpha1_gain * storage - (sys.L * dx).squaredNorm();
  return m;
}

SampledVerificationReport verify_decrease_sampled(const LyapunovCertificate& cert,
                                                  const LinearSystem& sys,
                                                  const LinearFunctionalObserver& obs,
                                                  int n_samples, std::uint64_t seed, double tol) {
  sys.validate();
  obs.validate(sys);
  require_shape(cert.T, obs.T.rows(), obs.T.cols(), "certificate T");
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  auto draw = [&](Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(engine);
    return v;
  };
  SampledVerificationReport report;
  report.worst_margin = std::numeric_limits<double>::infinity();
  for (int s = 0; s < n_samples; ++s) {
    const Vector x = draw(sys.n_x());
    const Vector xt = draw(sys.n_x());
    const Vector w = draw(sys.n_w());
    const Vector wt = draw(sys.n_w());
    const DecreaseMargins m = certificate_margins(cert, sys, x, xt, w, wt);
    const double worst = std::min(m.decrease, m.lower_bound);
    report.worst_margin = std::min(report.worst_margin, worst);
    if (worst < -tol) ++report.violations;
  }
  if (n_samples <= 0) report.worst_margin = 0.0;
  return report;
}

bool is_detectable(const Matrix& A, const Matrix& C, double tol) {
  const Eigen::Index n = A.rows();
  Eigen::EigenSolver<Matrix> eig(A, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lambda = eig.eigenvalues()[i];
    if (std::abs(lambda) < 1.0) continue;
    Eigen::MatrixXcd pbh(n + C.rows(), n);
    pbh.topRows(n) = lambda * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    pbh.bottomRows(C.rows()) = C.cast<std::complex<double>>();
    if (numerical_rank(pbh, tol) < n) return false;
  }
  return true;
}

bool is_observable(const Matrix& A, const Matrix& C, double tol) {
  return numerical_rank(observability_matrix(A, C).cast<std::complex<double>>(), tol) == A.rows();
}

LinearFunctionalObserver design_full_order_observer(const LinearSystem& sys,
                                                    const ObserverDesignMode& mode) {
  sys.validate();
  const Eigen::Index n = sys.n_x();
  Matrix J;
  if (std::holds_alternative<DeadbeatDesign>(mode)) {
    if (sys.n_y() != 1) throw UnsupportedError("deadbeat design supports a single output only");
    if (!is_observable(sys.A, sys.C)) throw DesignError("deadbeat design: (A, C) is not observable");
    // Ackermann: J = A^n O^{-1} e_n places every observer pole at the origin.
    const Matrix O = observability_matrix(sys.A, sys.C);
    Vector e_n = Vector::Zero(n);
    e_n[n - 1] = 1.0;
    Matrix An = Matrix::Identity(n, n);
    for (Eigen::Index k = 0; k < n; ++k) An = An * sys.A;
    J = An * O.fullPivLu().solve(e_n);
  } else {
    const auto& riccati = std::get<RiccatiDesign>(mode);
    require_shape(riccati.Qn, n, n, "riccati Qn");
    require_shape(riccati.Rn, sys.n_y(), sys.n_y(), "riccati Rn");
    if (!is_detectable(sys.A, sys.C)) throw DesignError("riccati design: (A, C) is not detectable");
    // structured doubling on the dual pair (A^T, C^T)
    Matrix a = sys.A.transpose();
    Matrix g = sys.C.transpose() * riccati.Rn.llt().solve(sys.C);
    Matrix sigma = riccati.Qn;
    const Matrix eye = Matrix::Identity(n, n);
    bool settled = false;
    for (int it = 0; it < 100; ++it) {
      const Eigen::PartialPivLU<Matrix> w(eye + g * sigma);
      const Matrix wa = w.solve(a);
      const Matrix wg = w.solve(g);
      Matrix next = sigma + a.transpose() * sigma * wa;
      next = 0.5 * (next + next.transpose()).eval();
      g = g + a * wg * a.transpose();
      g = 0.5 * (g + g.transpose()).eval();
      a = (a * wa).eval();
      const double change = (next - sigma).norm();
      sigma = std::move(next);
      if (!sigma.allFinite()) break;
      if (change <= 1e-13 * (1.0 + sigma.norm())) {
        settled = true;
        break;
      }
    }
    if (!settled) throw DesignError("riccati design: recursion did not reach a fixed point");
    const Matrix innovation = sys.C * sigma * sys.C.transpose() + riccati.Rn;
    J = sys.A * sigma * sys.C.transpose() * innovation.inverse();
  }

  LinearFunctionalObserver obs;
  obs.J = J;
  obs.N = sys.A - J * sys.C;
  obs.T = Matrix::Identity(n, n);
  obs.P_xi = sys.L;
  obs.xi0 = Vector::Zero(n);
  const ObserverConditionReport report = verify_observer_conditions(sys, obs, 1e-8);
  if (!report.passes) {
    throw DesignError("observer design: result fails the observer conditions (spectral radius " +
                      std::to_string(report.spectral_radius) + ")");
  }
  return obs;
}

}  // namespace fiekit
