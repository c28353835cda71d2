// Acceptance suite: one PASS/FAIL line per criterion.
//   fiekit_acceptance [--only NN]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fiekit/estimators.hpp"
#include "fiekit/powersys.hpp"
#include "support.hpp"

using namespace fiekit;
using namespace fiekit::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Trajectory noisy_run(const SystemModel& m, const PowerSystemParams& p, const Vector& x0,
                     std::uint64_t seed, std::size_t horizon) {
  const NoiseSampler sx(BoxSet::symmetric(p.n_x(), p.wx_bound), derive_seed(seed, 1));
  const NoiseSampler sy(BoxSet::symmetric(p.n_y(), p.wy_bound), derive_seed(seed, 2));
  return simulate(m, x0, sx, sy, horizon, 0);
}

Outcome deadbeat_exact() {
  const auto start = std::chrono::steady_clock::now();
  const PowerSystemParams p = default_power_params();
  const SystemModel m = build_discrete_model(p);
  const DeadbeatMatrices mats = build_deadbeat_matrices(p);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const DemoState s = demo_state(p, seed);
    const Trajectory traj = rollout(m, s.x0, VectorSequence(50, Vector::Zero(p.n_w())), 0);
    const auto z = run_deadbeat(mats, traj.y);
    for (std::size_t t = 2; t <= 50; ++t) worst = std::max(worst, std::abs(*z[t] - traj.z[t][0]));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && secs < 5.0, fmt("max error %.3e over 100 runs, %.2f s", worst, secs)};
}

Outcome deadbeat_identity() {
  const auto start = std::chrono::steady_clock::now();
  const PowerSystemParams p = default_power_params();
  const SystemModel m = build_discrete_model(p);
  const DeadbeatMatrices mats = build_deadbeat_matrices(p);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const DemoState s = demo_state(p, seed);
    const Trajectory traj = noisy_run(m, p, s.x0, seed, 50);
    for (std::size_t t = 2; t <= 50; ++t) {
      const double z = deadbeat_reconstruction(mats, traj.y[t - 1], traj.y[t - 2], traj.w[t - 1],
                                               traj.w[t - 2]);
      worst = std::max(worst, std::abs(z - traj.z[t][0]));
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && secs < 10.0, fmt("max residual %.3e over 1000 runs, %.2f s", worst, secs)};
}

Outcome oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  const double etas[] = {0.5, 0.9, 0.99};
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Eigen::Index nx = 1 + k % 6;
    const Eigen::Index nw = 1 + k % 3;
    const Eigen::Index ny = 1 + (k / 3) % 3;
    const std::size_t T = 1 + static_cast<std::size_t>(k % 20);
    const LinearSystem sys = random_linear_system(rng, nx, nw, ny, 1, 0.6 + 0.02 * k);
    FieConfig cfg;
    cfg.eta = etas[k % 3];
    const QuadraticObjective q{random_spd(rng, nx), random_spd(rng, nw), random_spd(rng, ny)};
    cfg.objective = q;
    PriorData prior;
    prior.x_bar = random_vector(rng, nx);
    for (std::size_t j = 0; j < T; ++j) {
      prior.w_bar.push_back(random_vector(rng, nw, 0.1));
      prior.y_bar.push_back(random_vector(rng, ny));
    }
    const EstimateRecord rec = solve_fie(linear_model(sys), cfg, prior, static_cast<TimeIndex>(T));
    const Vector ref = dense_wls_functional(sys, q, cfg.eta, prior.x_bar, prior.w_bar, prior.y_bar);
    const double rel = (rec.z_hat - ref).norm() / std::max(ref.norm(), 1e-12);
    worst = std::max(worst, rel);
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-6 && secs < 30.0, fmt("max relative error %.3e over 50 systems, %.2f s", worst, secs)};
}

Outcome noise_free_convergence() {
  const PowerSystemParams p = default_power_params();
  const SystemModel m = build_discrete_model(p);
  const DemoState s = demo_state(p, 1);
  const Trajectory traj = rollout(m, s.x0, VectorSequence(150, Vector::Zero(p.n_w())), 0);
  const auto recs = run_fie_sequence(m, default_fie_config(p), s.x_bar, traj.y, 0);
  double worst = 0.0;
  double first = std::abs(recs.front().z_hat[0] - traj.z[1][0]);
  for (const EstimateRecord& r : recs) {
    if (r.t < 20) continue;
    const double e = std::abs(r.z_hat[0] - traj.z[static_cast<std::size_t>(r.t)][0]);
    worst = std::max(worst, std::isnan(e) ? std::numeric_limits<double>::infinity() : e);
  }
  return {worst <= 1e-4, fmt("error at t=1 %.3e, max error for t>=20 %.3e", first, worst)};
}

struct NoisyRun {
  double rmse_fie = 0.0;
  double rmse_deadbeat = 0.0;
  double ms_75 = 0.0;
  double ms_150 = 0.0;
};

std::vector<NoisyRun> noisy_runs() {
  const PowerSystemParams p = default_power_params();
  const SystemModel m = build_discrete_model(p);
  const DeadbeatMatrices mats = build_deadbeat_matrices(p);
  const FieConfig cfg = default_fie_config(p);
  std::vector<NoisyRun> out;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DemoState s = demo_state(p, seed);
    const Trajectory traj = noisy_run(m, p, s.x0, seed, 150);
    const auto recs = run_fie_sequence(m, cfg, s.x_bar, traj.y, 0);
    const auto db = run_deadbeat(mats, traj.y);
    NoisyRun r;
    double sf = 0.0;
    double sd = 0.0;
    int n = 0;
    for (const EstimateRecord& rec : recs) {
      const auto t = static_cast<std::size_t>(rec.t);
      if (rec.t == 75) r.ms_75 = rec.stats.wall_time_ms;
      if (rec.t == 150) r.ms_150 = rec.stats.wall_time_ms;
      if (t < 20) continue;
      sf += std::pow(rec.z_hat[0] - traj.z[t][0], 2);
      sd += std::pow(*db[t] - traj.z[t][0], 2);
      ++n;
    }
    r.rmse_fie = std::sqrt(sf / n);
    r.rmse_deadbeat = std::sqrt(sd / n);
    out.push_back(r);
  }
  return out;
}

Outcome noisy_comparison() {
  const auto runs = noisy_runs();
  int wins = 0;
  std::vector<double> ratios;
  for (const NoisyRun& r : runs) {
    if (r.rmse_fie < r.rmse_deadbeat) ++wins;
    ratios.push_back(r.rmse_fie / r.rmse_deadbeat);
  }
  return {wins >= 9, fmt("fie better in %d/10 seeds, median rmse ratio %.3f", wins, median(ratios))};
}

Outcome runtime_growth() {
  const auto runs = noisy_runs();
  std::vector<double> a;
  std::vector<double> b;
  for (const NoisyRun& r : runs) {
    a.push_back(r.ms_75);
    b.push_back(r.ms_150);
  }
  const double ratio = median(b) / median(a);
  return {ratio >= 1.3 && ratio <= 3.5,
          fmt("median %.2f ms at t=75, %.2f ms at t=150, ratio %.2f", median(a), median(b), ratio)};
}

LinearSystem detectable_system(std::mt19937_64& rng, int k) {
  for (;;) {
    const Eigen::Index nx = 2 + k % 5;
    const Eigen::Index ny = 1 + k % 2;
    LinearSystem sys = random_linear_system(rng, nx, 2, ny, 1, 0.8 + 0.03 * k);
    if (is_detectable(sys.A, sys.C)) return sys;
  }
}

Outcome certificate_soundness() {
  std::mt19937_64 rng(606);
  double max_eta = 0.0;
  int violations = 0;
  int failures = 0;
  for (int k = 0; k < 20; ++k) {
    const LinearSystem sys = detectable_system(rng, k);
    const auto obs = design_full_order_observer(
        sys, RiccatiDesign{Matrix::Identity(sys.n_x(), sys.n_x()), Matrix::Identity(sys.n_y(), sys.n_y())});
    try {
      const LyapunovCertificate cert = build_certificate(sys, obs);
      max_eta = std::max(max_eta, cert.eta);
      violations += verify_decrease_sampled(cert, sys, obs, 10000, derive_seed(606, k), 1e-8).violations;
    } catch (const InfeasibleError&) {
      ++failures;
    }
  }
  return {failures == 0 && max_eta < 1.0 && violations == 0,
          fmt("%d build failures, max eta %.4f, %d violations", failures, max_eta, violations)};
}

Outcome observer_tracking() {
  std::mt19937_64 rng(707);
  double worst_track = 0.0;
  double worst_slope = -std::numeric_limits<double>::infinity();
  double worst_r2 = 1.0;
  for (int k = 0; k < 5; ++k) {
    const LinearSystem sys = detectable_system(rng, k);
    LinearFunctionalObserver obs = design_full_order_observer(
        sys, RiccatiDesign{Matrix::Identity(sys.n_x(), sys.n_x()),
                           100.0 * Matrix::Identity(sys.n_y(), sys.n_y())});
    build_certificate(sys, obs);
    const Vector x0 = random_vector(rng, sys.n_x());
    const Trajectory traj = rollout(linear_model(sys), x0, VectorSequence(60, Vector::Zero(sys.n_w())), 0);

    obs.xi0 = obs.T * x0;
    const VectorSequence exact = run_linear_observer(obs, traj.y);
    for (std::size_t t = 0; t <= 60; ++t) {
      worst_track = std::max(worst_track, (exact[t] - traj.z[t]).norm() / (1.0 + traj.z[t].norm()));
    }

    obs.xi0 = obs.T * x0 + random_vector(rng, sys.n_x());
    const VectorSequence z = run_linear_observer(obs, traj.y);
    std::vector<double> logs;
    for (std::size_t t = 0; t < 60; ++t) logs.push_back(std::log((z[t] - traj.z[t]).norm()));
    const LineFit fit = fit_line(logs);
    worst_slope = std::max(worst_slope, fit.slope);
    worst_r2 = std::min(worst_r2, fit.r_squared);
  }
  return {worst_track <= 1e-10 && worst_slope < 0.0 && worst_r2 >= 0.9,
          fmt("tracking error %.3e, worst log slope %.4f, worst R^2 %.4f", worst_track, worst_slope, worst_r2)};
}

Outcome detectability() {
  const DetectabilityReport r = detectability_probe(default_power_params(), 1);
  if (!r.constructed) return {false, "probe not constructed: " + r.diagnostic};
  return {r.output_gap <= 1e-10 && r.functional_gap >= 0.1 && r.deadbeat_error <= 1e-9,
          fmt("output gap %.3e, functional gap %.3e, load gap %.3e, deadbeat error %.3e", r.output_gap,
              r.functional_gap, r.load_gap, r.deadbeat_error)};
}

Outcome gradient_check() {
  std::mt19937_64 rng(1010);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index nx = 2 + k % 4;
    const Eigen::Index nw = 1 + k % 3;
    const Eigen::Index ny = 1 + k % 2;
    const SystemModel m = random_nonlinear_model(rng, nx, nw, ny);
    const std::size_t T = 3 + static_cast<std::size_t>(k % 8);
    FieConfig cfg;
    cfg.eta = 0.8;
    cfg.objective = QuadraticObjective{random_spd(rng, nx), random_spd(rng, nw), random_spd(rng, ny)};
    PriorData prior;
    prior.x_bar = random_vector(rng, nx);
    FieDecision d;
    d.x0 = random_vector(rng, nx);
    for (std::size_t j = 0; j < T; ++j) {
      prior.w_bar.push_back(random_vector(rng, nw, 0.1));
      prior.y_bar.push_back(random_vector(rng, ny));
      d.w.push_back(random_vector(rng, nw, 0.5));
    }
    const auto t = static_cast<TimeIndex>(T);
    const Vector g = flatten(objective_gradient(m, cfg, prior, t, d));
    const Vector fd = central_difference_gradient(m, cfg, prior, t, d);
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  return {worst <= 1e-5, fmt("max relative difference %.3e over 20 models", worst)};
}

Outcome power_balance() {
  const PowerSystemParams p = default_power_params();
  std::mt19937_64 rng(1111);
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    Vector theta(p.n_buses);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = u(rng);
    worst = std::max(worst, std::abs(power_outflow(p, theta).sum()));
  }
  return {worst <= 1e-12, fmt("max |sum| %.3e over 1000 angle vectors", worst)};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "deadbeat exact", deadbeat_exact},
      {2, "deadbeat identity", deadbeat_identity},
      {3, "oracle equivalence", oracle_equivalence},
      {4, "noise-free convergence", noise_free_convergence},
      {5, "noisy comparison", noisy_comparison},
      {6, "certificate soundness", certificate_soundness},
      {7, "observer tracking", observer_tracking},
      {8, "detectability probe", detectability},
      {9, "runtime growth", runtime_growth},
      {10, "gradient check", gradient_check},
      {11, "power balance", power_balance},
  };

  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--only NN]...\n", argv[0]);
      return 2;
    }
  }

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && only.count(c.number) == 0) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %02d %s: %s\n", o.pass ? "PASS" : "FAIL", c.number, c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
