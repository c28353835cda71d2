#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fiekit/types.hpp"

namespace fiekit {

/// Axis-aligned box {v : lower <= v <= upper}. Infinite bounds are allowed, so
/// the unconstrained set is representable.
class BoxSet {
 public:
  BoxSet() = default;
  BoxSet(Vector lower, Vector upper);

  static BoxSet unbounded(Eigen::Index dim);
  /// Infinity-norm ball of the given radius around the origin.
  static BoxSet symmetric(Eigen::Index dim, double radius);
  static BoxSet concatenate(const BoxSet& head, const BoxSet& tail);

  Eigen::Index dim() const { return lower_.size(); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }

  bool contains(const Vector& v, double tol = 0.0) const;
  bool is_unbounded() const;
  bool is_bounded() const;
  Vector project(const Vector& v) const;
  /// Componentwise distance to the box (zero inside).
  Vector violation(const Vector& v) const;

 private:
  Vector lower_;
  Vector upper_;
};

struct StepJacobian {
  Matrix dx;  ///< derivative with respect to the state
  Matrix dw;  ///< derivative with respect to the noise
};

using StepMap = std::function<Vector(const Vector& x, const Vector& w, TimeIndex t)>;
using StepJacobianMap = std::function<StepJacobian(const Vector& x, const Vector& w, TimeIndex t)>;
/// Weighted curvature sum_i p_i d^2 map_i / d(x, w)^2, size (n_x + n_w) square.
using StepCurvatureMap =
    std::function<Matrix(const Vector& x, const Vector& w, TimeIndex t, const Vector& p)>;
using FunctionalMap = std::function<Vector(const Vector& x)>;
using FunctionalJacobianMap = std::function<Matrix(const Vector& x)>;

struct ModelDimensions {
  Eigen::Index n_x = 0;
  Eigen::Index n_w = 0;
  Eigen::Index n_y = 0;
  Eigen::Index n_z = 0;
};

/// Optional analytic derivatives. Missing Jacobians fall back to forward finite
/// differences with step sqrt(eps) * (1 + |v_i|). Missing curvature maps are
/// treated as zero, which makes the estimator step Gauss-Newton.
struct ModelJacobians {
  StepJacobianMap dynamics;
  StepJacobianMap output;
  FunctionalJacobianMap functional;
  StepCurvatureMap dynamics_curvature;
  StepCurvatureMap output_curvature;
};

/// x+ = f(x, w, t), y = h(x, w, t), z = phi(x), with x in X and w in W.
///
/// The callbacks must be pure and reentrant; the estimator evaluates them
/// repeatedly while computing sensitivities.
class SystemModel {
 public:
  SystemModel(ModelDimensions dims, StepMap f, StepMap h, FunctionalMap phi, BoxSet state_set,
              BoxSet noise_set, ModelJacobians jacobians = {});

  const ModelDimensions& dims() const { return dims_; }
  Eigen::Index n_x() const { return dims_.n_x; }
  Eigen::Index n_w() const { return dims_.n_w; }
  Eigen::Index n_y() const { return dims_.n_y; }
  Eigen::Index n_z() const { return dims_.n_z; }
  const BoxSet& state_set() const { return state_set_; }
  const BoxSet& noise_set() const { return noise_set_; }

  Vector f(const Vector& x, const Vector& w, TimeIndex t) const;
  Vector h(const Vector& x, const Vector& w, TimeIndex t) const;
  Vector phi(const Vector& x) const;

  StepJacobian dynamics_jacobian(const Vector& x, const Vector& w, TimeIndex t) const;
  StepJacobian output_jacobian(const Vector& x, const Vector& w, TimeIndex t) const;
  Matrix functional_jacobian(const Vector& x) const;

  bool has_analytic_dynamics_jacobian() const { return static_cast<bool>(jacobians_.dynamics); }
  bool has_curvature() const {
    return static_cast<bool>(jacobians_.dynamics_curvature) ||
           static_cast<bool>(jacobians_.output_curvature);
  }
  /// Sum of the supplied dynamics and output curvatures weighted by p_f and
  /// p_h; zero when neither map is supplied.
  Matrix curvature(const Vector& x, const Vector& w, TimeIndex t, const Vector& p_f,
                   const Vector& p_h) const;

 private:
  StepJacobian finite_difference(const StepMap& map, Eigen::Index rows, const Vector& x,
                                 const Vector& w, TimeIndex t) const;

  ModelDimensions dims_;
  StepMap f_;
  StepMap h_;
  FunctionalMap phi_;
  BoxSet state_set_;
  BoxSet noise_set_;
  ModelJacobians jacobians_;
};

/// States x_0..x_T, noises w_0..w_{T-1}, outputs y_0..y_{T-1}, virtual outputs
/// z_0..z_T, all starting at time index t0.
struct Trajectory {
  TimeIndex t0 = 0;
  VectorSequence x;
  VectorSequence w;
  VectorSequence y;
  VectorSequence z;

  std::size_t horizon() const { return w.size(); }
};

Trajectory rollout(const SystemModel& model, const Vector& x0, const VectorSequence& w_seq,
                   TimeIndex t0);

struct ConstraintViolation {
  enum class Kind { State, Noise };
  Kind kind;
  std::size_t index;
  double amount;
};

struct SolutionReport {
  bool is_solution = false;
  double max_defect = 0.0;
  std::vector<ConstraintViolation> constraint_violations;
};

SolutionReport check_solution(const SystemModel& model, const Trajectory& traj, double tol);

/// Uniform sampler on a bounded box. The sample stream is a pure function of
/// the seed.
class NoiseSampler {
 public:
  NoiseSampler(BoxSet box, std::uint64_t seed);

  Eigen::Index dim() const { return box_.dim(); }
  const BoxSet& box() const { return box_; }
  std::uint64_t seed() const { return seed_; }

  /// The first `count` samples of the stream.
  VectorSequence draw(std::size_t count) const;

 private:
  BoxSet box_;
  std::uint64_t seed_;
};

/// Rolls out with w_k = [sampler_x draw; sampler_y draw]. Pass a zero-dimension
/// sampler_y for models whose noise is not split.
Trajectory simulate(const SystemModel& model, const Vector& x0, const NoiseSampler& sampler_x,
                    const NoiseSampler& sampler_y, std::size_t horizon, TimeIndex t0);

/// Header `t,x_0..,w_0..,y_0..,z_0..`; w and y are empty on the final row.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

/// Shortest round-trip representation of a double.
std::string format_double(double v);

/// Derive independent sub-seeds from one run seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fiekit
