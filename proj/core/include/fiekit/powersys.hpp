#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fiekit/fie.hpp"
#include "fiekit/model.hpp"

namespace fiekit {

/// Networked swing-equation model with state x = [theta; omega; P_L; P_M].
///
/// Edges are stored with 0-based bus indices.
struct PowerSystemParams {
  int n_buses = 0;
  std::vector<std::pair<int, int>> edges;
  Vector M;
  Vector D;
  Vector V;
  Vector x_line;  ///< per-edge reactance
  double dt = 0.01;
  double wx_bound = 5e-3;
  double wy_bound = 5e-2;

  Eigen::Index n_x() const { return 4 * n_buses; }
  Eigen::Index n_y() const { return 2 * n_buses; }
  Eigen::Index n_w() const { return n_x() + n_y(); }

  /// Throws InputError naming the offending field.
  void validate() const;
};

/// Four-bus ring with unit inertia, damping, voltage and reactance.
PowerSystemParams default_power_params();

/// P_ij = 3 |V_i| |V_j| / x_ij sin(theta_i - theta_j), in edge order.
Vector branch_flow(const PowerSystemParams& params, const Vector& theta);

/// [dP]_i = sum of flows leaving bus i minus sum of flows entering it.
Vector power_outflow(const PowerSystemParams& params, const Vector& theta);

Vector continuous_rhs(const PowerSystemParams& params, const Vector& x);

/// Euler step x+ = x + dt rhs(x) + w_x, output y = [omega; P_M] + w_y,
/// functional z = sum(P_L). Noise is w = [w_x; w_y]; X is unbounded and W the
/// infinity-norm box given by the bounds.
SystemModel build_discrete_model(const PowerSystemParams& params);

/// Quadratic estimator weights for the model: P = prior_weight I, Q and R the
/// inverse variances of uniform noise on the boxes, eta = 0.9, and a relative
/// stall tolerance of 1e-4.
FieConfig default_fie_config(const PowerSystemParams& params, double prior_weight = 1e-3);

/// Steady state with omega = 0 and P_M = P_L + dP(theta).
Vector steady_state(const PowerSystemParams& params, const Vector& theta, const Vector& loads);

struct DemoInitialization {
  double load_min = 0.5;
  double load_max = 1.5;
  double theta_scale = 0.1;
  double prior_perturbation = 0.5;
};

struct DemoState {
  Vector x0;
  Vector x_bar;
};

/// Random steady state (loads uniform in [load_min, load_max], angles uniform
/// in [-theta_scale, theta_scale]) and a prior that perturbs each load entry
/// by a uniform draw in [-prior_perturbation, prior_perturbation].
DemoState demo_state(const PowerSystemParams& params, std::uint64_t seed,
                     const DemoInitialization& init = {});

struct DetectabilityReport {
  bool constructed = false;
  std::string diagnostic;
  double output_gap = 0.0;      ///< max_t |y_t - y~_t|
  double functional_gap = 0.0;  ///< max_t |z_t - z~_t|
  double load_gap = 0.0;        ///< max_t |P_L - P_L~|_inf
  double deadbeat_error = 0.0;  ///< worst deadbeat error over both runs, t >= 2
  Vector x_a;
  Vector x_b;
};

/// Noise-free comparison of two initial states over `steps` steps.
DetectabilityReport compare_trajectories(const PowerSystemParams& params, const Vector& x_a,
                                         const Vector& x_b, std::size_t steps);

/// Builds two steady states that share omega and P_M but differ in angles and
/// per-bus loads, then compares their noise-free trajectories.
DetectabilityReport detectability_probe(const PowerSystemParams& params, std::uint64_t seed,
                                        std::size_t steps = 50);

}  // namespace fiekit
