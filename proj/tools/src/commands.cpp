#include "commands.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>
#include <vector>

namespace fiekit::cli {

namespace {

using nlohmann::json;

struct RunData {
  std::uint64_t seed = 0;
  Trajectory traj;
  std::optional<Vector> x_bar;
};

std::uint64_t run_seed(const RunConfig& cfg, int run) {
  return cfg.experiment.seed + static_cast<std::uint64_t>(run);
}

SystemModel model_of(const RunConfig& cfg) {
  if (cfg.is_power()) return build_discrete_model(cfg.power().params);
  return linear_model(cfg.linear().sys);
}

void require_noise_bound(const RunConfig& cfg) {
  if (!cfg.is_power() && !cfg.experiment.noise_free && !cfg.linear().noise_bound) {
    throw ConfigError("model.noise_bound", "required unless experiment.noise_free is set");
  }
}

RunData simulate_run(const RunConfig& cfg, const SystemModel& model, int run) {
  RunData d;
  d.seed = run_seed(cfg, run);
  const std::size_t T = cfg.experiment.horizon;
  Vector x0;
  BoxSet box_x;
  BoxSet box_y;
  if (cfg.is_power()) {
    const PowerModelConfig& pm = cfg.power();
    const DemoState s = demo_state(pm.params, d.seed, pm.initial);
    x0 = s.x0;
    d.x_bar = s.x_bar;
    box_x = BoxSet::symmetric(pm.params.n_x(), pm.params.wx_bound);
    box_y = BoxSet::symmetric(pm.params.n_y(), pm.params.wy_bound);
  } else {
    const LinearModelConfig& lm = cfg.linear();
    x0 = lm.x0;
    d.x_bar = lm.x_bar;
    box_x = BoxSet::symmetric(model.n_w(), lm.noise_bound.value_or(0.0));
    box_y = BoxSet::symmetric(0, 0.0);
  }
  if (cfg.experiment.noise_free) {
    d.traj = rollout(model, x0, VectorSequence(T, Vector::Zero(model.n_w())), 0);
  } else {
    const NoiseSampler sx(box_x, derive_seed(d.seed, 1));
    const NoiseSampler sy(box_y, derive_seed(d.seed, 2));
    d.traj = simulate(model, x0, sx, sy, T, 0);
  }
  return d;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

void prepare_directory(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.outputs.directory, ec);
  if (ec || !std::filesystem::is_directory(cfg.outputs.directory)) {
    throw ConfigError("outputs.directory", "cannot create " + cfg.outputs.directory.string());
  }
}

std::filesystem::path output_path(const RunConfig& cfg, const std::string& stem, std::uint64_t seed) {
  return cfg.outputs.directory / (stem + "_" + std::to_string(seed) + ".csv");
}

void write_trajectory(const RunConfig& cfg, const RunData& d) {
  std::ofstream os = open_output(output_path(cfg, "trajectory", d.seed));
  write_trajectory_csv(os, d.traj);
}

/// One estimate row; missing fields are left empty.
struct EstimateRow {
  TimeIndex t = 0;
  Vector z_hat;
  std::optional<double> objective;
  int iterations = 0;
  bool converged = true;
  double wall_time_ms = 0.0;
  Vector z;
};

void write_estimates(std::ostream& os, const char* source, const std::vector<EstimateRow>& rows,
                     Eigen::Index nz) {
  os << "source,t";
  for (Eigen::Index i = 0; i < nz; ++i) os << ",z_hat_" << i;
  os << ",objective,iterations,converged,wall_time_ms";
  for (Eigen::Index i = 0; i < nz; ++i) os << ",z_" << i;
  os << ",abs_error\n";
  for (const EstimateRow& r : rows) {
    os << source << ',' << r.t;
    for (Eigen::Index i = 0; i < nz; ++i) os << ',' << format_double(r.z_hat[i]);
    os << ',' << (r.objective ? format_double(*r.objective) : std::string());
    os << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << format_double(r.wall_time_ms);
    for (Eigen::Index i = 0; i < nz; ++i) os << ',' << format_double(r.z[i]);
    os << ',' << format_double((r.z_hat - r.z).norm()) << '\n';
  }
}

std::vector<EstimateRow> fie_rows(const RunConfig& cfg, const SystemModel& model, const RunData& d) {
  const Vector x_bar = d.x_bar.value_or(Vector::Zero(model.n_x()));
  const auto recs = run_fie_sequence(model, cfg.fie, x_bar, d.traj.y, 0);
  std::vector<EstimateRow> rows;
  for (const EstimateRecord& rec : recs) {
    EstimateRow r;
    r.t = rec.t;
    r.z_hat = rec.z_hat;
    r.objective = rec.objective_value;
    r.iterations = rec.stats.iterations;
    r.converged = rec.stats.converged && !rec.failed;
    r.wall_time_ms = cfg.outputs.emit_timing ? rec.stats.wall_time_ms : 0.0;
    r.z = d.traj.z[static_cast<std::size_t>(rec.t)];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<EstimateRow> deadbeat_rows(const RunConfig& cfg, const RunData& d) {
  const auto z = run_deadbeat(build_deadbeat_matrices(cfg.power().params), d.traj.y);
  std::vector<EstimateRow> rows;
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (!z[t]) continue;
    EstimateRow r;
    r.t = static_cast<TimeIndex>(t);
    r.z_hat = Vector::Constant(1, *z[t]);
    r.z = d.traj.z[t];
    rows.push_back(std::move(r));
  }
  return rows;
}

LinearFunctionalObserver build_observer(const RunConfig& cfg) {
  const LinearSystem& sys = cfg.linear().sys;
  return std::visit(
      [&](const auto& design) -> LinearFunctionalObserver {
        using D = std::decay_t<decltype(design)>;
        if constexpr (std::is_same_v<D, LinearFunctionalObserver>) {
          return design;
        } else {
          return design_full_order_observer(sys, design);
        }
      },
      cfg.observer.design);
}

std::vector<EstimateRow> observer_rows(const RunConfig& cfg, const RunData& d) {
  LinearFunctionalObserver obs = build_observer(cfg);
  if (cfg.observer.xi0) {
    if (cfg.observer.xi0->size() != obs.order()) {
      throw ConfigError("observer.xi0", "expected " + std::to_string(obs.order()) + " entries");
    }
    obs.xi0 = *cfg.observer.xi0;
  } else {
    obs.xi0 = d.x_bar ? Vector(obs.T * *d.x_bar) : Vector::Zero(obs.order());
  }
  const VectorSequence z = run_linear_observer(obs, d.traj.y);
  std::vector<EstimateRow> rows;
  for (std::size_t t = 0; t < z.size(); ++t) {
    EstimateRow r;
    r.t = static_cast<TimeIndex>(t);
    r.z_hat = z[t];
    r.z = d.traj.z[t];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<EstimateRow> statenorm_rows(const RunConfig& cfg, const RunData& d) {
  const double z0 = d.x_bar ? d.x_bar->norm() : 0.0;
  const std::vector<double> z = run_state_norm(cfg.statenorm, z0, d.traj.y);
  std::vector<EstimateRow> rows;
  for (std::size_t t = 0; t < z.size(); ++t) {
    EstimateRow r;
    r.t = static_cast<TimeIndex>(t);
    r.z_hat = Vector::Constant(1, z[t]);
    r.z = Vector::Constant(1, d.traj.x[t].norm());
    rows.push_back(std::move(r));
  }
  return rows;
}

double rmse(const std::vector<double>& errors) {
  if (errors.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double e : errors) s += e * e;
  return std::sqrt(s / static_cast<double>(errors.size()));
}

json residuals_json(const ObserverConditionReport& r) {
  return {{"sylvester", r.sylvester_residual},
          {"functional", r.functional_residual},
          {"spectral_radius", r.spectral_radius}};
}

}  // namespace

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.jobs < 1) throw ConfigError("--jobs", "must be at least 1");
  if (o.seed) cfg.experiment.seed = *o.seed;
  if (o.out) cfg.outputs.directory = *o.out;
}

void run_pool(int jobs, int count, const std::function<void(int)>& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min(jobs, count));
  std::vector<std::thread> threads;
  for (int k = 1; k < n; ++k) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void cmd_simulate(const RunConfig& cfg, int jobs, std::ostream& log) {
  require_noise_bound(cfg);
  prepare_directory(cfg);
  const SystemModel model = model_of(cfg);
  run_pool(jobs, cfg.experiment.monte_carlo_runs, [&](int run) {
    write_trajectory(cfg, simulate_run(cfg, model, run));
  });
  for (int run = 0; run < cfg.experiment.monte_carlo_runs; ++run) {
    log << output_path(cfg, "trajectory", run_seed(cfg, run)).string() << '\n';
  }
}

void cmd_estimate(const RunConfig& cfg, int jobs, std::ostream& log) {
  require_noise_bound(cfg);
  prepare_directory(cfg);
  const SystemModel model = model_of(cfg);
  const char* name = estimator_name(cfg.estimator);
  std::vector<int> unconverged(static_cast<std::size_t>(cfg.experiment.monte_carlo_runs), 0);
  run_pool(jobs, cfg.experiment.monte_carlo_runs, [&](int run) {
    const RunData d = simulate_run(cfg, model, run);
    if (cfg.outputs.emit_states) write_trajectory(cfg, d);
    std::vector<EstimateRow> rows;
    switch (cfg.estimator) {
      case EstimatorKind::Fie:
        rows = fie_rows(cfg, model, d);
        break;
      case EstimatorKind::Deadbeat:
        rows = deadbeat_rows(cfg, d);
        break;
      case EstimatorKind::Observer:
        rows = observer_rows(cfg, d);
        break;
      case EstimatorKind::StateNorm:
        rows = statenorm_rows(cfg, d);
        break;
    }
    for (const EstimateRow& r : rows) unconverged[static_cast<std::size_t>(run)] += r.converged ? 0 : 1;
    if (cfg.outputs.emit_estimates) {
      std::ofstream os = open_output(output_path(cfg, std::string("estimates_") + name, d.seed));
      write_estimates(os, name, rows, rows.empty() ? model.n_z() : rows.front().z_hat.size());
    }
    if (cfg.outputs.emit_timing && cfg.estimator == EstimatorKind::Fie) {
      std::ofstream os = open_output(output_path(cfg, "timing", d.seed));
      os << "t,wall_time_ms\n";
      for (const EstimateRow& r : rows) os << r.t << ',' << format_double(r.wall_time_ms) << '\n';
    }
  });
  for (int run = 0; run < cfg.experiment.monte_carlo_runs; ++run) {
    log << "run " << run_seed(cfg, run) << ": " << unconverged[static_cast<std::size_t>(run)]
        << " unconverged steps\n";
  }
}

bool cmd_certify(const RunConfig& cfg, std::ostream& log) {
  if (cfg.is_power()) throw ConfigError("model", "certify needs a linear model");
  prepare_directory(cfg);
  const LinearSystem& sys = cfg.linear().sys;
  json report;
  report["passes"] = false;
  const auto finish = [&](bool passes) {
    report["passes"] = passes;
    std::ofstream os = open_output(cfg.outputs.directory / "certificate.json");
    os << report.dump(2) << '\n';
    log << report.dump(2) << '\n';
    return passes;
  };

  LinearFunctionalObserver obs;
  try {
    obs = build_observer(cfg);
  } catch (const std::exception& e) {
    report["stage"] = "design";
    report["message"] = e.what();
    return finish(false);
  }
  const ObserverConditionReport cond =
      verify_observer_conditions(sys, obs, cfg.certify.options.condition_tol);
  report["residuals"] = residuals_json(cond);
  if (!cond.passes) {
    report["stage"] = "conditions";
    report["message"] = "observer conditions fail";
    return finish(false);
  }
  LyapunovCertificate cert;
  try {
    cert = build_certificate(sys, obs, cfg.certify.options);
  } catch (const std::exception& e) {
    report["stage"] = "certificate";
    report["message"] = e.what();
    return finish(false);
  }
  report["eta"] = cert.eta;
  report["rho"] = cert.rho;
  report["epsilon"] = cert.epsilon;
  report["output_term"] = cert.output_term;
  report["gains"] = {{"alpha1", cert.alpha1_gain},
                     {"alpha2", cert.alpha2_gain},
                     {"sigma_w", cert.sigma_w_gain},
                     {"sigma_y", cert.sigma_y_gain}};
  const SampledVerificationReport sampled = verify_decrease_sampled(
      cert, sys, obs, cfg.certify.samples, derive_seed(cfg.experiment.seed, 7), cfg.certify.tol);
  report["samples"] = cfg.certify.samples;
  report["violations"] = sampled.violations;
  report["worst_margin"] = sampled.worst_margin;
  report["stage"] = "sampling";
  return finish(sampled.violations == 0 && cert.eta < 1.0);
}

void cmd_compare(const RunConfig& cfg, int jobs, std::ostream& log) {
  if (!cfg.is_power()) throw ConfigError("model", "compare needs the powersys model");
  if (cfg.experiment.burn_in >= cfg.experiment.horizon) {
    throw ConfigError("experiment.burn_in", "must be below experiment.horizon");
  }
  prepare_directory(cfg);
  const SystemModel model = model_of(cfg);
  const int runs = cfg.experiment.monte_carlo_runs;
  std::vector<std::vector<double>> err_fie(static_cast<std::size_t>(runs));
  std::vector<std::vector<double>> err_db(static_cast<std::size_t>(runs));
  const auto burn_in = static_cast<TimeIndex>(cfg.experiment.burn_in);

  run_pool(jobs, runs, [&](int run) {
    const RunData d = simulate_run(cfg, model, run);
    if (cfg.outputs.emit_states) write_trajectory(cfg, d);
    const std::vector<EstimateRow> fie = fie_rows(cfg, model, d);
    const std::vector<EstimateRow> db = deadbeat_rows(cfg, d);
    const std::size_t T = d.traj.horizon();
    std::vector<std::optional<double>> zf(T + 1);
    std::vector<std::optional<double>> zd(T + 1);
    for (const EstimateRow& r : fie) zf[static_cast<std::size_t>(r.t)] = r.z_hat[0];
    for (const EstimateRow& r : db) zd[static_cast<std::size_t>(r.t)] = r.z_hat[0];
    auto& ef = err_fie[static_cast<std::size_t>(run)];
    auto& ed = err_db[static_cast<std::size_t>(run)];
    for (std::size_t t = 0; t <= T; ++t) {
      if (static_cast<TimeIndex>(t) < burn_in) continue;
      const double z = d.traj.z[t][0];
      if (zf[t]) ef.push_back(*zf[t] - z);
      if (zd[t]) ed.push_back(*zd[t] - z);
    }
    if (cfg.outputs.emit_estimates) {
      std::ofstream os = open_output(output_path(cfg, "compare", d.seed));
      os << "t,z_0,z_hat_fie,z_hat_deadbeat\n";
      for (std::size_t t = 0; t <= T; ++t) {
        os << t << ',' << format_double(d.traj.z[t][0]) << ',' << (zf[t] ? format_double(*zf[t]) : "")
           << ',' << (zd[t] ? format_double(*zd[t]) : "") << '\n';
      }
    }
  });

  json summary;
  summary["horizon"] = cfg.experiment.horizon;
  summary["burn_in"] = cfg.experiment.burn_in;
  json per_run = json::array();
  std::vector<double> all_f;
  std::vector<double> all_d;
  int fie_better = 0;
  for (int run = 0; run < runs; ++run) {
    const auto& ef = err_fie[static_cast<std::size_t>(run)];
    const auto& ed = err_db[static_cast<std::size_t>(run)];
    const double rf = rmse(ef);
    const double rd = rmse(ed);
    if (rf < rd) ++fie_better;
    per_run.push_back({{"seed", run_seed(cfg, run)}, {"rmse_fie", rf}, {"rmse_deadbeat", rd}});
    all_f.insert(all_f.end(), ef.begin(), ef.end());
    all_d.insert(all_d.end(), ed.begin(), ed.end());
  }
  summary["rmse_fie"] = rmse(all_f);
  summary["rmse_deadbeat"] = rmse(all_d);
  summary["fie_better_runs"] = fie_better;
  summary["runs"] = per_run;
  std::ofstream os = open_output(cfg.outputs.directory / "summary.json");
  os << summary.dump(2) << '\n';
  log << summary.dump(2) << '\n';
}

}  // namespace fiekit::cli
