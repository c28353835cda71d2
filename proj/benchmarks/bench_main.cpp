#include <benchmark/benchmark.h>

#include <random>

#include "fiekit/estimators.hpp"
#include "fiekit/powersys.hpp"

namespace {

using namespace fiekit;

struct PowerCase {
  PowerSystemParams params = default_power_params();
  SystemModel model = build_discrete_model(params);
  FieConfig config = default_fie_config(params);
  DemoState state = demo_state(params, 0);
  Trajectory traj;

  explicit PowerCase(std::size_t horizon) {
    const NoiseSampler sx(BoxSet::symmetric(params.n_x(), params.wx_bound), derive_seed(0, 1));
    const NoiseSampler sy(BoxSet::symmetric(params.n_y(), params.wy_bound), derive_seed(0, 2));
    traj = simulate(model, state.x0, sx, sy, horizon, 0);
  }
};

// Single FIE solve at time t, warm-started from the solution at t - 1.
void BM_FieSolve(benchmark::State& st) {
  const auto t = static_cast<std::size_t>(st.range(0));
  const PowerCase c(t);
  const VectorSequence head(c.traj.y.begin(), c.traj.y.end() - 1);
  const auto recs = run_fie_sequence(c.model, c.config, c.state.x_bar, head, 0);
  FieDecision warm;
  warm.x0 = recs.back().x_hat_seq.front();
  warm.w = recs.back().w_hat_seq;
  warm.w.push_back(Vector::Zero(c.params.n_w()));
  PriorData prior;
  prior.x_bar = c.state.x_bar;
  prior.y_bar = c.traj.y;
  prior.w_bar.assign(t, Vector::Zero(c.params.n_w()));
  FieConfig cfg = c.config;
  cfg.solver.damping_init = std::max(recs.back().stats.final_damping, cfg.solver.damping_init);
  for (auto _ : st) {
    benchmark::DoNotOptimize(solve_fie(c.model, cfg, prior, static_cast<TimeIndex>(t), warm));
  }
  st.SetComplexityN(static_cast<benchmark::IterationCount>(t));
}
BENCHMARK(BM_FieSolve)->Arg(25)->Arg(50)->Arg(75)->Arg(100)->Arg(150)->Unit(benchmark::kMillisecond)->Complexity();

void BM_ObjectiveGradient(benchmark::State& st) {
  const auto t = static_cast<std::size_t>(st.range(0));
  const PowerCase c(t);
  PriorData prior;
  prior.x_bar = c.state.x_bar;
  prior.y_bar = c.traj.y;
  prior.w_bar.assign(t, Vector::Zero(c.params.n_w()));
  FieDecision d{c.state.x_bar, prior.w_bar};
  for (auto _ : st) {
    benchmark::DoNotOptimize(objective_gradient(c.model, c.config, prior, static_cast<TimeIndex>(t), d));
  }
  st.SetComplexityN(static_cast<benchmark::IterationCount>(t));
}
BENCHMARK(BM_ObjectiveGradient)->RangeMultiplier(2)->Range(16, 256)->Complexity();

void BM_Deadbeat(benchmark::State& st) {
  const PowerCase c(static_cast<std::size_t>(st.range(0)));
  const DeadbeatMatrices mats = build_deadbeat_matrices(c.params);
  for (auto _ : st) benchmark::DoNotOptimize(run_deadbeat(mats, c.traj.y));
}
BENCHMARK(BM_Deadbeat)->Arg(150)->Arg(1000);

void BM_Certificate(benchmark::State& st) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  const auto n = static_cast<Eigen::Index>(st.range(0));
  LinearSystem sys;
  sys.A = Matrix::NullaryExpr(n, n, [&] { return normal(rng); });
  sys.A *= 0.95 / spectral_radius(sys.A);
  sys.B = Matrix::NullaryExpr(n, 2, [&] { return normal(rng); });
  sys.C = Matrix::NullaryExpr(2, n, [&] { return normal(rng); });
  sys.D = Matrix::Zero(2, 2);
  sys.L = Matrix::NullaryExpr(1, n, [&] { return normal(rng); });
  const auto obs = design_full_order_observer(sys, RiccatiDesign{Matrix::Identity(n, n), Matrix::Identity(2, 2)});
  for (auto _ : st) benchmark::DoNotOptimize(build_certificate(sys, obs));
}
BENCHMARK(BM_Certificate)->Arg(4)->Arg(8)->Arg(16);

}  // namespace
BENCHMARK_MAIN();
