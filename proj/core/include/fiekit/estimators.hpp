#pragma once

#include <optional>
#include <vector>

#include "fiekit/kfunction.hpp"
#include "fiekit/lyapunov.hpp"
#include "fiekit/powersys.hpp"

namespace fiekit {

/// Internal states xi_0..xi_T of xi+ = N xi + J y started at obs.xi0.
VectorSequence observer_states(const LinearFunctionalObserver& obs, const VectorSequence& y_seq);

/// z_hat_t = P_xi xi_t for t = 0..T. With feedthrough J1 the current output
/// is added and the sequence stops at T - 1.
VectorSequence run_linear_observer(const LinearFunctionalObserver& obs,
                                   const VectorSequence& y_seq);

/// z+ = epsilon z + rho1(|y|) + rho2(|w|).
struct StateNormEstimatorConfig {
  double epsilon = 0.5;
  KFunction rho1 = KFunction::identity();
  KFunction rho2 = KFunction::identity();

  void validate() const;
};

double state_norm_step(const StateNormEstimatorConfig& config, double z_hat, const Vector& y_bar,
                       const Vector& w_bar);

/// Estimates for t = 0..T given z_hat_0 and outputs y_0..y_{T-1}. Missing noise
/// estimates are taken as zero.
std::vector<double> run_state_norm(const StateNormEstimatorConfig& config, double z0,
                                   const VectorSequence& y_seq,
                                   const VectorSequence& w_seq = {});

/// z_t = C_y [y_{t-1}; y_{t-2}] + C_w [w_{t-1}; w_{t-2}] for the power system.
struct DeadbeatMatrices {
  RowVector C_y;
  RowVector C_w;
};

DeadbeatMatrices build_deadbeat_matrices(const PowerSystemParams& params);

/// C_y [y_prev; y_prev2].
double deadbeat_estimate(const DeadbeatMatrices& mats, const Vector& y_prev, const Vector& y_prev2);

/// C_y [y_prev; y_prev2] + C_w [w_prev; w_prev2].
double deadbeat_reconstruction(const DeadbeatMatrices& mats, const Vector& y_prev,
                               const Vector& y_prev2, const Vector& w_prev, const Vector& w_prev2);

/// Entry t holds the estimate of z_t for t = 0..T; the first two are empty.
std::vector<std::optional<double>> run_deadbeat(const DeadbeatMatrices& mats,
                                                const VectorSequence& y_seq);

}  // namespace fiekit
