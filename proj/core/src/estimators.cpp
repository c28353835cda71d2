#include "fiekit/estimators.hpp"

#include <cmath>

namespace fiekit {

VectorSequence observer_states(const LinearFunctionalObserver& obs, const VectorSequence& y_seq) {
  const Eigen::Index nxi = obs.N.rows();
  if (obs.N.cols() != nxi || obs.J.rows() != nxi || obs.xi0.size() != nxi) {
    throw InputError("observer: N, J and xi0 disagree on the internal dimension");
  }
  VectorSequence xi;
  xi.reserve(y_seq.size() + 1);
  xi.push_back(obs.xi0);
  for (const Vector& y : y_seq) {
    detail::require_dim(y.size(), obs.J.cols(), "observer output");
    xi.push_back(obs.N * xi.back() + obs.J * y);
  }
  return xi;
}

VectorSequence run_linear_observer(const LinearFunctionalObserver& obs,
                                   const VectorSequence& y_seq) {
  if (obs.P_xi.cols() != obs.N.rows()) {
    throw InputError("observer: P_xi columns must match the internal dimension");
  }
  const VectorSequence xi = observer_states(obs, y_seq);
  VectorSequence z;
  if (obs.has_feedthrough()) {
    if (obs.J1.rows() != obs.P_xi.rows() || obs.J1.cols() != obs.J.cols()) {
      throw InputError("observer: J1 has the wrong shape");
    }
    for (std::size_t t = 0; t < y_seq.size(); ++t) z.push_back(obs.P_xi * xi[t] + obs.J1 * y_seq[t]);
    return z;
  }
  z.reserve(xi.size());
  for (const Vector& s : xi) z.push_back(obs.P_xi * s);
  return z;
}

void StateNormEstimatorConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw InputError("statenorm epsilon must lie in [0, 1)");
  if (!is_class_k_sampled(rho1)) throw InputError("statenorm rho1 is not class K");
  if (!is_class_k_sampled(rho2)) throw InputError("statenorm rho2 is not class K");
}

double state_norm_step(const StateNormEstimatorConfig& config, double z_hat, const Vector& y_bar,
                       const Vector& w_bar) {
  if (!(z_hat >= 0.0)) throw InputError("state_norm_step: z_hat must be non-negative");
  return config.epsilon * z_hat + config.rho1(y_bar.norm()) + config.rho2(w_bar.norm());
}

std::vector<double> run_state_norm(const StateNormEstimatorConfig& config, double z0,
                                   const VectorSequence& y_seq, const VectorSequence& w_seq) {
  config.validate();
  if (!w_seq.empty() && w_seq.size() != y_seq.size()) {
    throw InputError("run_state_norm: noise and output sequences differ in length");
  }
  std::vector<double> z{z0};
  z.reserve(y_seq.size() + 1);
  for (std::size_t t = 0; t < y_seq.size(); ++t) {
    const Vector w = w_seq.empty() ? Vector() : w_seq[t];
    z.push_back(state_norm_step(config, z.back(), y_seq[t], w));
  }
  return z;
}

DeadbeatMatrices build_deadbeat_matrices(const PowerSystemParams& params) {
  params.validate();
  const Eigen::Index n = params.n_buses;
  const Eigen::Index ny = params.n_y();
  const Eigen::Index nw = params.n_w();
  DeadbeatMatrices m;
  m.C_y = RowVector::Zero(2 * ny);
  m.C_w = RowVector::Zero(2 * nw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double inertia = params.M[i] / params.dt;
    // y_{t-1}
    m.C_y[i] = -inertia;
    // y_{t-2}
    m.C_y[ny + i] = inertia - params.D[i];
    m.C_y[ny + n + i] = 1.0;
    // w_{t-1}
    m.C_w[2 * n + i] = 1.0;
    m.C_w[4 * n + i] = inertia;
    // w_{t-2}
    m.C_w[nw + n + i] = inertia;
    m.C_w[nw + 2 * n + i] = 1.0;
    m.C_w[nw + 4 * n + i] = params.D[i] - inertia;
    m.C_w[nw + 5 * n + i] = -1.0;
  }
  return m;
}

double deadbeat_estimate(const DeadbeatMatrices& mats, const Vector& y_prev,
                         const Vector& y_prev2) {
  const Eigen::Index ny = mats.C_y.size() / 2;
  detail::require_dim(y_prev.size(), ny, "deadbeat y_{t-1}");
  detail::require_dim(y_prev2.size(), ny, "deadbeat y_{t-2}");
  return mats.C_y.head(ny).dot(y_prev) + mats.C_y.tail(ny).dot(y_prev2);
}

double deadbeat_reconstruction(const DeadbeatMatrices& mats, const Vector& y_prev,
                               const Vector& y_prev2, const Vector& w_prev, const Vector& w_prev2) {
  const Eigen::Index nw = mats.C_w.size() / 2;
  detail::require_dim(w_prev.size(), nw, "deadbeat w_{t-1}");
  detail::require_dim(w_prev2.size(), nw, "deadbeat w_{t-2}");
  return deadbeat_estimate(mats, y_prev, y_prev2) + mats.C_w.head(nw).dot(w_prev) +
         mats.C_w.tail(nw).dot(w_prev2);
}

std::vector<std::optional<double>> run_deadbeat(const DeadbeatMatrices& mats,
                                                const VectorSequence& y_seq) {
  std::vector<std::optional<double>> z(y_seq.size() + 1);
  for (std::size_t t = 2; t <= y_seq.size(); ++t) {
    z[t] = deadbeat_estimate(mats, y_seq[t - 1], y_seq[t - 2]);
  }
  return z;
}

}  // namespace fiekit
