#pragma once

#include <cstdint>
#include <optional>
#include <variant>

#include "fiekit/model.hpp"
#include "fiekit/types.hpp"

namespace fiekit {

/// x+ = A x + B w, y = C x + D w, z = L x.
struct LinearSystem {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix D;
  Matrix L;

  Eigen::Index n_x() const { return A.rows(); }
  Eigen::Index n_w() const { return B.cols(); }
  Eigen::Index n_y() const { return C.rows(); }
  Eigen::Index n_z() const { return L.rows(); }

  void validate() const;
};

/// SystemModel view of a linear system with analytic Jacobians. Empty sets
/// mean unconstrained.
SystemModel linear_model(const LinearSystem& sys, BoxSet state_set = {}, BoxSet noise_set = {});

/// xi+ = N xi + J y, z_hat = P_xi xi (+ J1 y when the current-measurement
/// variant is used).
struct LinearFunctionalObserver {
  Matrix N;
  Matrix J;
  Matrix P_xi;
  Matrix T;
  Vector xi0;
  /// Direct feedthrough of the current measurement. Empty means strictly causal.
  Matrix J1;

  Eigen::Index order() const { return N.rows(); }
  bool has_feedthrough() const { return J1.size() > 0; }

  void validate(const LinearSystem& sys) const;
};

struct ObserverConditionReport {
  double sylvester_residual = 0.0;   ///< |N T - T A + J C|_F
  double functional_residual = 0.0;  ///< |P_xi T (+ J1 C) - L|_F
  double spectral_radius = 0.0;      ///< rho(N)
  bool passes = false;
};

ObserverConditionReport verify_observer_conditions(const LinearSystem& sys,
                                                   const LinearFunctionalObserver& obs, double tol);

double spectral_radius(const Matrix& m);

/// P solving (N/sqrt(rho))^T P (N/sqrt(rho)) - P = -I, so N^T P N = rho (P - I) < rho P.
///
/// Requires spectral_radius(N)^2 < rho < 1.
Matrix solve_discounted_lyapunov(const Matrix& N, double rho);

/// Quadratic incremental Lyapunov function W(x, x~) = |T (x - x~)|_P^2, plus
/// |C (x - x~)|^2 when `output_term` is set, with
///   |z - z~|^2 <= alpha1_gain W,                W <= alpha2_gain |x - x~|^2,
///   W(x+, x~+) <= eta W + sigma_w_gain |w - w~|^2 + sigma_y_gain |y - y~|^2.
struct LyapunovCertificate {
  Matrix T;
  Matrix P;
  Matrix C;  ///< output map, used only when output_term is set
  double rho = 0.0;
  double eta = 0.0;
  double epsilon = 0.0;
  double sigma_w_gain = 0.0;
  double sigma_y_gain = 0.0;
  double alpha1_gain = 0.0;
  double alpha2_gain = 0.0;
  bool output_term = false;

  double storage(const Vector& dx) const;
};

struct CertificateOptions {
  /// Young's-inequality split; defaults to (1/rho - 1)/2.
  std::optional<double> epsilon;
  /// Certify the current-measurement variant W = |T dx|_P^2 + |C dx|^2.
  bool output_term = false;
  double condition_tol = 1e-8;
};

/// Builds the certificate for an observer satisfying the Sylvester and
/// functional conditions with N Schur. Throws InfeasibleError when the
/// conditions fail or no epsilon yields eta < 1.
LyapunovCertificate build_certificate(const LinearSystem& sys, const LinearFunctionalObserver& obs,
                                      const CertificateOptions& options = {});

struct DecreaseMargins {
  double decrease = 0.0;     ///< eta W + sigma terms - W(x+, x~+)
  double lower_bound = 0.0;  ///< alpha1 W - |z - z~|^2
};

DecreaseMargins certificate_margins(const LyapunovCertificate& cert, const LinearSystem& sys,
                                    const Vector& x, const Vector& x_tilde, const Vector& w,
                                    const Vector& w_tilde);

struct SampledVerificationReport {
  int violations = 0;
  double worst_margin = 0.0;
};

/// Checks both certificate inequalities at `n_samples` standard-normal
/// (x, x~, w, w~) draws. A sample counts as a violation when either margin is
/// below -tol.
SampledVerificationReport verify_decrease_sampled(const LyapunovCertificate& cert,
                                                  const LinearSystem& sys,
                                                  const LinearFunctionalObserver& obs,
                                                  int n_samples, std::uint64_t seed, double tol);

struct DeadbeatDesign {};
struct RiccatiDesign {
  Matrix Qn;
  Matrix Rn;
};
using ObserverDesignMode = std::variant<DeadbeatDesign, RiccatiDesign>;

/// Full-order observer T = I, N = A - J C, P_xi = L.
///
/// Riccati mode iterates the predictor-form Riccati recursion to its fixed
/// point and requires (A, C) detectable. Deadbeat mode places all observer
/// poles at the origin (Ackermann) and requires a single observable output.
LinearFunctionalObserver design_full_order_observer(const LinearSystem& sys,
                                                    const ObserverDesignMode& mode);

bool is_detectable(const Matrix& A, const Matrix& C, double tol = 1e-9);
bool is_observable(const Matrix& A, const Matrix& C, double tol = 1e-9);

}  // namespace fiekit
