#include "fiekit/powersys.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fiekit/estimators.hpp"

namespace fiekit {

namespace {

void require_positive(const Vector& v, Eigen::Index n, const char* field, bool allow_zero) {
  if (v.size() != n) {
    throw InputError(std::string(field) + ": expected " + std::to_string(n) + " entries, got " +
                     std::to_string(v.size()));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool ok = allow_zero ? v[i] >= 0.0 : v[i] > 0.0;
    if (!ok || !std::isfinite(v[i])) {
      throw InputError(std::string(field) + "[" + std::to_string(i) + "] must be " +
                       (allow_zero ? "non-negative" : "positive"));
    }
  }
}

double edge_gain(const PowerSystemParams& p, std::size_t e) {
  const auto [i, j] = p.edges[e];
  return 3.0 * p.V[i] * p.V[j] / p.x_line[static_cast<Eigen::Index>(e)];
}

/// d(dP)/d(theta).
Matrix outflow_jacobian(const PowerSystemParams& p, const Vector& theta) {
  Matrix J = Matrix::Zero(p.n_buses, p.n_buses);
  for (std::size_t e = 0; e < p.edges.size(); ++e) {
    const auto [i, j] = p.edges[e];
    const double d = edge_gain(p, e) * std::cos(theta[i] - theta[j]);
    J(i, i) += d;
    J(i, j) -= d;
    J(j, i) -= d;
    J(j, j) += d;
  }
  return J;
}

}  // namespace

void PowerSystemParams::validate() const {
  if (n_buses < 1) throw InputError("n_buses must be at least 1");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    if (i < 0 || i >= n_buses || j < 0 || j >= n_buses) {
      throw InputError("edges[" + std::to_string(e) + "]: bus index out of range");
    }
    if (i == j) throw InputError("edges[" + std::to_string(e) + "]: self loop");
  }
  require_positive(M, n_buses, "M", false);
  require_positive(D, n_buses, "D", true);
  require_positive(V, n_buses, "V", false);
  require_positive(x_line, static_cast<Eigen::Index>(edges.size()), "x_line", false);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("dt must be positive");
  if (!(wx_bound >= 0.0)) throw InputError("wx_bound must be non-negative");
  if (!(wy_bound >= 0.0)) throw InputError("wy_bound must be non-negative");
}

PowerSystemParams default_power_params() {
  PowerSystemParams p;
  p.n_buses = 4;
  p.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  p.M = Vector::Ones(4);
  p.D = Vector::Ones(4);
  p.V = Vector::Ones(4);
  p.x_line = Vector::Ones(4);
  return p;
}

Vector branch_flow(const PowerSystemParams& params, const Vector& theta) {
  detail::require_dim(theta.size(), params.n_buses, "branch_flow theta");
  Vector flows(static_cast<Eigen::Index>(params.edges.size()));
  for (std::size_t e = 0; e < params.edges.size(); ++e) {
    const auto [i, j] = params.edges[e];
    flows[static_cast<Eigen::Index>(e)] = edge_gain(params, e) * std::sin(theta[i] - theta[j]);
  }
  return flows;
}

Vector power_outflow(const PowerSystemParams& params, const Vector& theta) {
  const Vector flows = branch_flow(params, theta);
  Vector out = Vector::Zero(params.n_buses);
  for (std::size_t e = 0; e < params.edges.size(); ++e) {
    const auto [i, j] = params.edges[e];
    out[i] += flows[static_cast<Eigen::Index>(e)];
    out[j] -= flows[static_cast<Eigen::Index>(e)];
  }
  return out;
}

Vector continuous_rhs(const PowerSystemParams& params, const Vector& x) {
  const Eigen::Index n = params.n_buses;
  detail::require_dim(x.size(), params.n_x(), "continuous_rhs x");
  const Vector theta = x.segment(0, n);
  const Vector omega = x.segment(n, n);
  const Vector load = x.segment(2 * n, n);
  const Vector mech = x.segment(3 * n, n);
  const Vector dp = power_outflow(params, theta);
  Vector dx = Vector::Zero(4 * n);
  dx.segment(0, n) = omega;
  for (Eigen::Index i = 0; i < n; ++i) {
    dx[n + i] = -(params.D[i] * omega[i] - mech[i] + load[i] + dp[i]) / params.M[i];
  }
  return dx;
}

SystemModel build_discrete_model(const PowerSystemParams& params) {
  params.validate();
  const Eigen::Index n = params.n_buses;
  const Eigen::Index nx = params.n_x();
  const Eigen::Index ny = params.n_y();
  const Eigen::Index nw = params.n_w();
  const PowerSystemParams p = params;

  StepMap f = [p, nx](const Vector& x, const Vector& w, TimeIndex) -> Vector {
    return x + p.dt * continuous_rhs(p, x) + w.head(nx);
  };
  StepMap h = [n, nx, ny](const Vector& x, const Vector& w, TimeIndex) -> Vector {
    Vector y(ny);
    y << x.segment(n, n), x.segment(3 * n, n);
    return y + w.segment(nx, ny);
  };
  FunctionalMap phi = [n](const Vector& x) -> Vector {
    return Vector::Constant(1, x.segment(2 * n, n).sum());
  };

  ModelJacobians jac;
  jac.dynamics = [p, n, nx, nw](const Vector& x, const Vector&, TimeIndex) {
    StepJacobian J;
    J.dx = Matrix::Identity(nx, nx);
    J.dx.block(0, n, n, n) += p.dt * Matrix::Identity(n, n);
    const Matrix dtheta = outflow_jacobian(p, x.head(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = p.dt / p.M[i];
      J.dx.block(n + i, 0, 1, n) -= s * dtheta.row(i);
      J.dx(n + i, n + i) -= s * p.D[i];
      J.dx(n + i, 2 * n + i) -= s;
      J.dx(n + i, 3 * n + i) += s;
    }
    J.dw = Matrix::Zero(nx, nw);
    J.dw.leftCols(nx).setIdentity();
    return J;
  };
  jac.dynamics_curvature = [p, n, nx, nw](const Vector& x, const Vector&, TimeIndex,
                                          const Vector& costate) {
    Matrix H = Matrix::Zero(nx + nw, nx + nw);
    for (std::size_t e = 0; e < p.edges.size(); ++e) {
      const auto [i, j] = p.edges[e];
      // flow enters omega_i with -dt/M_i and omega_j with +dt/M_j
      const double weight = -costate[n + i] * p.dt / p.M[i] + costate[n + j] * p.dt / p.M[j];
      const double c = weight * edge_gain(p, e) * std::sin(x[i] - x[j]);
      H(i, i) -= c;
      H(j, j) -= c;
      H(i, j) += c;
      H(j, i) += c;
    }
    return H;
  };
  jac.output = [n, nx, ny, nw](const Vector&, const Vector&, TimeIndex) {
    StepJacobian J;
    J.dx = Matrix::Zero(ny, nx);
    J.dx.block(0, n, n, n).setIdentity();
    J.dx.block(n, 3 * n, n, n).setIdentity();
    J.dw = Matrix::Zero(ny, nw);
    J.dw.rightCols(ny).setIdentity();
    return J;
  };
  jac.functional = [n, nx](const Vector&) {
    Matrix J = Matrix::Zero(1, nx);
    J.block(0, 2 * n, 1, n).setOnes();
    return J;
  };

  const BoxSet noise = BoxSet::concatenate(BoxSet::symmetric(nx, p.wx_bound),
                                           BoxSet::symmetric(ny, p.wy_bound));
  return SystemModel({nx, nw, ny, 1}, std::move(f), std::move(h), std::move(phi),
                     BoxSet::unbounded(nx), noise, std::move(jac));
}

FieConfig default_fie_config(const PowerSystemParams& params, double prior_weight) {
  params.validate();
  if (!(prior_weight > 0.0)) throw InputError("prior_weight must be positive");
  if (!(params.wx_bound > 0.0 && params.wy_bound > 0.0)) {
    throw InputError("default weights need positive noise bounds");
  }
  const Eigen::Index nx = params.n_x();
  const Eigen::Index ny = params.n_y();
  const double qx = 3.0 / (params.wx_bound * params.wx_bound);
  const double qy = 3.0 / (params.wy_bound * params.wy_bound);
  Vector q(params.n_w());
  q.head(nx).setConstant(qx);
  q.tail(ny).setConstant(qy);
  FieConfig config;
  config.eta = 0.9;
  config.objective = QuadraticObjective{prior_weight * Matrix::Identity(nx, nx), q.asDiagonal(),
                                        qy * Matrix::Identity(ny, ny)};
  config.solver.stall_tol = 1e-4;
  return config;
}

Vector steady_state(const PowerSystemParams& params, const Vector& theta, const Vector& loads) {
  const Eigen::Index n = params.n_buses;
  detail::require_dim(theta.size(), n, "steady_state theta");
  detail::require_dim(loads.size(), n, "steady_state loads");
  Vector x = Vector::Zero(4 * n);
  x.segment(0, n) = theta;
  x.segment(2 * n, n) = loads;
  x.segment(3 * n, n) = loads + power_outflow(params, theta);
  return x;
}

DemoState demo_state(const PowerSystemParams& params, std::uint64_t seed,
                     const DemoInitialization& init) {
  params.validate();
  if (!(init.load_min <= init.load_max)) throw InputError("load range is empty");
  if (!(init.theta_scale >= 0.0)) throw InputError("theta_scale must be non-negative");
  if (!(init.prior_perturbation >= 0.0)) {
    throw InputError("prior_perturbation must be non-negative");
  }
  const Eigen::Index n = params.n_buses;
  std::mt19937_64 engine(derive_seed(seed, 0xd3));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector theta(n);
  Vector loads(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    loads[i] = init.load_min + (init.load_max - init.load_min) * unit(engine);
    theta[i] = init.theta_scale * (2.0 * unit(engine) - 1.0);
  }
  DemoState s;
  s.x0 = steady_state(params, theta, loads);
  s.x_bar = s.x0;
  for (Eigen::Index i = 0; i < n; ++i) {
    s.x_bar[2 * n + i] += init.prior_perturbation * (2.0 * unit(engine) - 1.0);
  }
  return s;
}

DetectabilityReport compare_trajectories(const PowerSystemParams& params, const Vector& x_a,
                                         const Vector& x_b, std::size_t steps) {
  const SystemModel model = build_discrete_model(params);
  const VectorSequence zero_noise(steps, Vector::Zero(params.n_w()));
  const Trajectory a = rollout(model, x_a, zero_noise, 0);
  const Trajectory b = rollout(model, x_b, zero_noise, 0);
  const DeadbeatMatrices mats = build_deadbeat_matrices(params);
  const auto db_a = run_deadbeat(mats, a.y);
  const auto db_b = run_deadbeat(mats, b.y);
  const Eigen::Index n = params.n_buses;

  DetectabilityReport r;
  r.constructed = true;
  r.x_a = x_a;
  r.x_b = x_b;
  for (std::size_t k = 0; k < a.y.size(); ++k) {
    r.output_gap = std::max(r.output_gap, (a.y[k] - b.y[k]).norm());
  }
  for (std::size_t k = 0; k < a.x.size(); ++k) {
    r.functional_gap = std::max(r.functional_gap, (a.z[k] - b.z[k]).norm());
    r.load_gap = std::max(
        r.load_gap, (a.x[k].segment(2 * n, n) - b.x[k].segment(2 * n, n)).cwiseAbs().maxCoeff());
    if (db_a[k]) r.deadbeat_error = std::max(r.deadbeat_error, std::abs(*db_a[k] - a.z[k][0]));
    if (db_b[k]) r.deadbeat_error = std::max(r.deadbeat_error, std::abs(*db_b[k] - b.z[k][0]));
  }
  return r;
}

DetectabilityReport detectability_probe(const PowerSystemParams& params, std::uint64_t seed,
                                        std::size_t steps) {
  params.validate();
  const Eigen::Index n = params.n_buses;
  std::mt19937_64 engine(derive_seed(seed, 0x9b));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector theta_a(n);
  Vector loads_a(n);
  Vector shift(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    theta_a[i] = 0.1 * unit(engine);
    loads_a[i] = 1.0 + 0.5 * unit(engine);
    shift[i] = unit(engine);
  }
  const Vector x_a = steady_state(params, theta_a, loads_a);
  const Vector mech = x_a.segment(3 * n, n);

  // Same P_M with different angles: the loads absorb the change in dP.
  for (double scale : {0.2, 0.4, 0.8}) {
    const Vector theta_b = theta_a + scale * shift;
    const Vector loads_b = mech - power_outflow(params, theta_b);
    if ((loads_b - loads_a).cwiseAbs().maxCoeff() < 0.1) continue;
    Vector x_b = Vector::Zero(4 * n);
    x_b.segment(0, n) = theta_b;
    x_b.segment(2 * n, n) = loads_b;
    x_b.segment(3 * n, n) = mech;
    return compare_trajectories(params, x_a, x_b, steps);
  }
  DetectabilityReport r;
  r.diagnostic = "angle changes do not move the power outflow (no connecting edges)";
  r.x_a = x_a;
  return r;
}

}  // namespace fiekit
