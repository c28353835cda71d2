#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fiekit/kfunction.hpp"
#include "fiekit/model.hpp"

namespace fiekit {

/// eta^(t-t0) alpha2(2|x - xbar|) + sum_j eta^(j-1) [sigma_w(2|w - wbar|) + sigma_y(2|y - ybar|)]
struct GeneralObjective {
  KFunction alpha2 = KFunction::quadratic(1.0);
  KFunction sigma_w = KFunction::quadratic(1.0);
  KFunction sigma_y = KFunction::quadratic(1.0);
};

/// 2 eta^(t-t0) |x - xbar|_P^2 + 2 sum_j eta^(j-1) (|w - wbar|_Q^2 + |y - ybar|_R^2)
struct QuadraticObjective {
  Matrix P;
  Matrix Q;
  Matrix R;
};

struct SolverOptions {
  int max_iter = 200;
  /// Projected-gradient tolerance, relative to 1 + objective.
  double grad_tol = 1e-10;
  /// Step tolerance, relative to 1 + |decision|_inf.
  double step_tol = 1e-13;
  /// Stop once this many consecutive accepted steps each lower the objective
  /// by less than stall_tol (1 + objective). Zero disables the test.
  int stall_iter = 3;
  double stall_tol = 1e-6;
  /// Initial Levenberg-Marquardt damping, relative to the stage curvature.
  double damping_init = 1e-6;
  double penalty_weight_init = 1e4;
  double penalty_growth = 100.0;
  int max_penalty_rounds = 6;
  /// Admissible violation of the derived-state box.
  double feasibility_tol = 1e-8;
};

struct FieConfig {
  double eta = 0.9;
  std::variant<QuadraticObjective, GeneralObjective> objective;
  SolverOptions solver;

  bool is_quadratic() const { return std::holds_alternative<QuadraticObjective>(objective); }
  /// Throws InputError on eta outside [0, 1) or weights that are not SPD or do
  /// not match the model dimensions.
  void validate(const SystemModel& model) const;
};

/// Quantities available to the estimator at time t: prior state at t0 and
/// estimates of the noise and outputs on [t0, t-1].
struct PriorData {
  TimeIndex t0 = 0;
  Vector x_bar;
  VectorSequence w_bar;
  VectorSequence y_bar;
};

/// Single-shooting decision variables: initial state and noise sequence.
struct FieDecision {
  Vector x0;
  VectorSequence w;
};

struct SolverStats {
  int iterations = 0;
  double final_grad_norm = 0.0;
  /// Levenberg-Marquardt damping at exit; zero for the gradient method.
  double final_damping = 0.0;
  int penalty_rounds = 0;
  bool converged = false;
  double wall_time_ms = 0.0;
  /// Free-form diagnostics: local-optimum caveat, failure reason.
  std::string note;
};

struct EstimateRecord {
  TimeIndex t = 0;
  Vector z_hat;
  VectorSequence x_hat_seq;
  VectorSequence w_hat_seq;
  double objective_value = 0.0;
  SolverStats stats;
  /// True when the solve threw; z_hat is NaN and the decision is empty.
  bool failed = false;
};

double eval_objective(const FieConfig& config, const Vector& x_hat_t0,
                      const VectorSequence& w_hat_seq, const VectorSequence& y_hat_seq,
                      const PriorData& prior, TimeIndex t);

/// Objective value of a decision with states and outputs derived by rollout.
double eval_decision(const SystemModel& model, const FieConfig& config, const PriorData& prior,
                     TimeIndex t, const FieDecision& decision);

/// Gradient of eval_decision computed by an adjoint pass through the rollout.
FieDecision objective_gradient(const SystemModel& model, const FieConfig& config,
                               const PriorData& prior, TimeIndex t, const FieDecision& decision);

/// Solves the full information estimation problem at time t.
///
/// Single shooting eliminates the dynamics; the decision variables are kept
/// in X and W by projection while derived states are pushed into X with a
/// quadratic exterior penalty. Quadratic objectives use Levenberg-Marquardt
/// with a Riccati-structured step (linear cost in t - t0); general objectives
/// use projected gradient descent with backtracking. The result is a local
/// minimizer.
EstimateRecord solve_fie(const SystemModel& model, const FieConfig& config, const PriorData& prior,
                         TimeIndex t, const std::optional<FieDecision>& warm_start = std::nullopt);

/// Solves at every t in [t0 + 1, t0 + len(measurements)] with zero noise
/// estimates, warm-starting each solve from the previous optimizer extended by
/// one zero-noise step and from the previous final damping.
std::vector<EstimateRecord> run_fie_sequence(const SystemModel& model, const FieConfig& config,
                                             const Vector& x_bar_t0,
                                             const VectorSequence& measurements, TimeIndex t0);

}  // namespace fiekit
