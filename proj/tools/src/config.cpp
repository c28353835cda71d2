#include "config.hpp"

#include <fstream>

namespace fiekit::cli {

namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

double as_number(const json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(field, "expected a finite number");
  return v;
}

bool as_bool(const json& j, const std::string& field) {
  if (!j.is_boolean()) throw ConfigError(field, "expected true or false");
  return j.get<bool>();
}

std::int64_t as_integer(const json& j, const std::string& field) {
  if (!j.is_number_integer()) throw ConfigError(field, "expected an integer");
  return j.get<std::int64_t>();
}

std::string as_string(const json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "expected a string");
  return j.get<std::string>();
}

Vector as_vector(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = as_number(j[i], index(field, i));
  return v;
}

/// Row-major nested arrays. An empty array gives a matrix with zero rows.
Matrix as_matrix(const json& j, const std::string& field, Eigen::Index empty_cols = 0) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of rows");
  if (j.empty()) return Matrix(0, empty_cols);
  const json& first = j[0];
  if (!first.is_array()) throw ConfigError(index(field, 0), "expected an array of numbers");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(first.size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = as_vector(j[r], index(field, r));
    if (row.size() != m.cols()) throw ConfigError(index(field, r), "rows must have equal length");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

/// Weight matrix given as a scalar (times I), a vector (diagonal) or a matrix.
Matrix as_weight(const json& j, const std::string& field, Eigen::Index n) {
  Matrix w;
  if (j.is_number()) {
    w = as_number(j, field) * Matrix::Identity(n, n);
  } else if (j.is_array() && !j.empty() && j[0].is_number()) {
    const Vector d = as_vector(j, field);
    if (d.size() != n) throw ConfigError(field, "expected " + std::to_string(n) + " diagonal entries");
    w = d.asDiagonal();
  } else {
    w = as_matrix(j, field);
    if (w.rows() != n || w.cols() != n) {
      throw ConfigError(field, "expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
    }
  }
  return w;
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& require(const json& obj, const char* key, const std::string& path) {
  const json* v = find(obj, key);
  if (v == nullptr) throw ConfigError(join(path, key), "missing required field");
  return *v;
}

void require_object(const json& j, const std::string& field) {
  if (!j.is_object()) throw ConfigError(field, "expected an object");
}

KFunction parse_kfunction(const json& j, const std::string& field) {
  require_object(j, field);
  const std::string kind = as_string(require(j, "kind", field), join(field, "kind"));
  const double scale = find(j, "scale") ? as_number(j["scale"], join(field, "scale")) : 1.0;
  try {
    if (kind == "quadratic") return KFunction::quadratic(scale);
    if (kind == "power") {
      return KFunction::power(scale, as_number(require(j, "exponent", field), join(field, "exponent")));
    }
  } catch (const InputError& e) {
    throw ConfigError(field, e.what());
  }
  throw ConfigError(join(field, "kind"), "expected \"quadratic\" or \"power\"");
}

PowerModelConfig parse_power(const json& m) {
  PowerModelConfig out;
  PowerSystemParams& p = out.params;
  p = default_power_params();
  if (const json* params = find(m, "params")) {
    const std::string path = "model.params";
    require_object(*params, path);
    if (const json* v = find(*params, "n_buses")) {
      p.n_buses = static_cast<int>(as_integer(*v, join(path, "n_buses")));
      if (p.n_buses < 1) throw ConfigError(join(path, "n_buses"), "must be at least 1");
      p.M = p.D = p.V = Vector::Ones(p.n_buses);
    }
    if (const json* v = find(*params, "edges")) {
      const std::string field = join(path, "edges");
      if (!v->is_array()) throw ConfigError(field, "expected an array of [i, j] pairs");
      p.edges.clear();
      for (std::size_t e = 0; e < v->size(); ++e) {
        const json& pair = (*v)[e];
        const std::string ef = index(field, e);
        if (!pair.is_array() || pair.size() != 2) throw ConfigError(ef, "expected a pair [i, j]");
        const auto i = as_integer(pair[0], index(ef, 0));
        const auto k = as_integer(pair[1], index(ef, 1));
        if (i < 1 || i > p.n_buses || k < 1 || k > p.n_buses) {
          throw ConfigError(ef, "bus index out of range 1.." + std::to_string(p.n_buses));
        }
        p.edges.emplace_back(static_cast<int>(i - 1), static_cast<int>(k - 1));
      }
      p.x_line = Vector::Ones(static_cast<Eigen::Index>(p.edges.size()));
    }
    if (const json* v = find(*params, "M")) p.M = as_vector(*v, join(path, "M"));
    if (const json* v = find(*params, "D")) p.D = as_vector(*v, join(path, "D"));
    if (const json* v = find(*params, "V")) p.V = as_vector(*v, join(path, "V"));
    if (const json* v = find(*params, "x_line")) p.x_line = as_vector(*v, join(path, "x_line"));
    if (const json* v = find(*params, "dt")) p.dt = as_number(*v, join(path, "dt"));
    if (const json* v = find(*params, "wx_bound")) p.wx_bound = as_number(*v, join(path, "wx_bound"));
    if (const json* v = find(*params, "wy_bound")) p.wy_bound = as_number(*v, join(path, "wy_bound"));
    try {
      p.validate();
    } catch (const InputError& e) {
      throw ConfigError(path, e.what());
    }
  }
  if (const json* init = find(m, "initial")) {
    const std::string path = "model.initial";
    require_object(*init, path);
    DemoInitialization& d = out.initial;
    if (const json* v = find(*init, "load_min")) d.load_min = as_number(*v, join(path, "load_min"));
    if (const json* v = find(*init, "load_max")) d.load_max = as_number(*v, join(path, "load_max"));
    if (const json* v = find(*init, "theta_scale")) d.theta_scale = as_number(*v, join(path, "theta_scale"));
    if (const json* v = find(*init, "prior_perturbation")) {
      d.prior_perturbation = as_number(*v, join(path, "prior_perturbation"));
    }
    if (d.load_max < d.load_min) throw ConfigError(join(path, "load_max"), "must not be below load_min");
    if (d.theta_scale < 0.0) throw ConfigError(join(path, "theta_scale"), "must be non-negative");
    if (d.prior_perturbation < 0.0) {
      throw ConfigError(join(path, "prior_perturbation"), "must be non-negative");
    }
  }
  return out;
}

LinearModelConfig parse_linear(const json& m) {
  const std::string path = "model.linear";
  const json& lin = require(m, "linear", "model");
  require_object(lin, path);
  LinearModelConfig out;
  LinearSystem& s = out.sys;
  s.A = as_matrix(require(lin, "A", path), join(path, "A"));
  const Eigen::Index n = s.A.rows();
  s.B = as_matrix(require(lin, "B", path), join(path, "B"));
  s.C = as_matrix(require(lin, "C", path), join(path, "C"), n);
  s.D = find(lin, "D") ? as_matrix(lin["D"], join(path, "D"), s.B.cols())
                       : Matrix::Zero(s.C.rows(), s.B.cols());
  s.L = as_matrix(require(lin, "L", path), join(path, "L"), n);
  try {
    s.validate();
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
  out.x0 = find(m, "x0") ? as_vector(m["x0"], "model.x0") : Vector::Zero(n);
  if (out.x0.size() != n) throw ConfigError("model.x0", "expected " + std::to_string(n) + " entries");
  if (const json* v = find(m, "x_bar")) {
    out.x_bar = as_vector(*v, "model.x_bar");
    if (out.x_bar->size() != n) throw ConfigError("model.x_bar", "expected " + std::to_string(n) + " entries");
  }
  if (const json* v = find(m, "noise_bound")) {
    out.noise_bound = as_number(*v, "model.noise_bound");
    if (*out.noise_bound < 0.0) throw ConfigError("model.noise_bound", "must be non-negative");
  }
  return out;
}

ExperimentConfig parse_experiment(const json& j) {
  const std::string path = "experiment";
  require_object(j, path);
  ExperimentConfig e;
  if (const json* v = find(j, "horizon")) {
    const auto h = as_integer(*v, join(path, "horizon"));
    if (h < 1) throw ConfigError(join(path, "horizon"), "must be at least 1");
    e.horizon = static_cast<std::size_t>(h);
  }
  if (const json* v = find(j, "seed")) {
    const auto s = as_integer(*v, join(path, "seed"));
    if (s < 0) throw ConfigError(join(path, "seed"), "must be non-negative");
    e.seed = static_cast<std::uint64_t>(s);
  }
  if (const json* v = find(j, "monte_carlo_runs")) {
    const auto r = as_integer(*v, join(path, "monte_carlo_runs"));
    if (r < 1) throw ConfigError(join(path, "monte_carlo_runs"), "must be at least 1");
    e.monte_carlo_runs = static_cast<int>(r);
  }
  if (const json* v = find(j, "noise_free")) e.noise_free = as_bool(*v, join(path, "noise_free"));
  if (const json* v = find(j, "burn_in")) {
    const auto b = as_integer(*v, join(path, "burn_in"));
    if (b < 0) throw ConfigError(join(path, "burn_in"), "must be non-negative");
    e.burn_in = static_cast<std::size_t>(b);
  }
  return e;
}

void parse_solver(const json& j, SolverOptions& s) {
  const std::string path = "fie.solver";
  require_object(j, path);
  auto integer = [&](const char* key, int& dst) {
    if (const json* v = find(j, key)) dst = static_cast<int>(as_integer(*v, join(path, key)));
  };
  auto number = [&](const char* key, double& dst) {
    if (const json* v = find(j, key)) dst = as_number(*v, join(path, key));
  };
  integer("max_iter", s.max_iter);
  number("grad_tol", s.grad_tol);
  number("step_tol", s.step_tol);
  integer("stall_iter", s.stall_iter);
  number("stall_tol", s.stall_tol);
  number("penalty_weight_init", s.penalty_weight_init);
  number("penalty_growth", s.penalty_growth);
  integer("max_penalty_rounds", s.max_penalty_rounds);
  number("feasibility_tol", s.feasibility_tol);
}

FieConfig parse_fie(const json* j, const RunConfig& cfg, const SystemModel& model) {
  FieConfig fie;
  if (cfg.is_power()) {
    try {
      fie = default_fie_config(cfg.power().params);
    } catch (const InputError&) {
      // zero noise bounds: fall back to unit weights
      fie.objective = QuadraticObjective{Matrix::Identity(model.n_x(), model.n_x()),
                                         Matrix::Identity(model.n_w(), model.n_w()),
                                         Matrix::Identity(model.n_y(), model.n_y())};
    }
  } else {
    fie.objective = QuadraticObjective{Matrix::Identity(model.n_x(), model.n_x()),
                                       Matrix::Identity(model.n_w(), model.n_w()),
                                       Matrix::Identity(model.n_y(), model.n_y())};
  }
  if (j != nullptr) {
    const std::string path = "fie";
    require_object(*j, path);
    if (const json* v = find(*j, "eta")) fie.eta = as_number(*v, join(path, "eta"));
    const std::string kind = find(*j, "objective") ? as_string((*j)["objective"], join(path, "objective"))
                                                   : std::string("quadratic");
    if (kind == "quadratic") {
      if (!fie.is_quadratic()) fie.objective = QuadraticObjective{};
      auto& q = std::get<QuadraticObjective>(fie.objective);
      if (const json* v = find(*j, "P")) q.P = as_weight(*v, join(path, "P"), model.n_x());
      if (const json* v = find(*j, "Q")) q.Q = as_weight(*v, join(path, "Q"), model.n_w());
      if (const json* v = find(*j, "R")) q.R = as_weight(*v, join(path, "R"), model.n_y());
    } else if (kind == "general") {
      GeneralObjective g;
      if (const json* v = find(*j, "alpha2")) g.alpha2 = parse_kfunction(*v, join(path, "alpha2"));
      if (const json* v = find(*j, "sigma_w")) g.sigma_w = parse_kfunction(*v, join(path, "sigma_w"));
      if (const json* v = find(*j, "sigma_y")) g.sigma_y = parse_kfunction(*v, join(path, "sigma_y"));
      fie.objective = g;
    } else {
      throw ConfigError(join(path, "objective"), "expected \"quadratic\" or \"general\"");
    }
    if (const json* v = find(*j, "solver")) parse_solver(*v, fie.solver);
  }
  try {
    fie.validate(model);
  } catch (const InputError& e) {
    throw ConfigError("fie", e.what());
  }
  return fie;
}

ObserverConfig parse_observer(const json* j, const RunConfig& cfg) {
  ObserverConfig out;
  if (cfg.is_power()) {
    out.design = RiccatiDesign{};
    return out;
  }
  const LinearSystem& sys = cfg.linear().sys;
  const Eigen::Index n = sys.n_x();
  RiccatiDesign riccati{Matrix::Identity(n, n), Matrix::Identity(sys.n_y(), sys.n_y())};
  out.design = riccati;
  if (j == nullptr) return out;
  const std::string path = "observer";
  require_object(*j, path);
  const std::string design = find(*j, "design") ? as_string((*j)["design"], join(path, "design"))
                                                : std::string("riccati");
  if (design == "riccati") {
    if (const json* v = find(*j, "Qn")) riccati.Qn = as_weight(*v, join(path, "Qn"), n);
    if (const json* v = find(*j, "Rn")) riccati.Rn = as_weight(*v, join(path, "Rn"), sys.n_y());
    out.design = riccati;
  } else if (design == "deadbeat") {
    out.design = DeadbeatDesign{};
  } else if (design == "explicit") {
    LinearFunctionalObserver obs;
    obs.N = as_matrix(require(*j, "N", path), join(path, "N"));
    obs.J = as_matrix(require(*j, "J", path), join(path, "J"));
    obs.P_xi = as_matrix(require(*j, "P_xi", path), join(path, "P_xi"), obs.N.rows());
    obs.T = as_matrix(require(*j, "T", path), join(path, "T"), n);
    if (const json* v = find(*j, "J1")) obs.J1 = as_matrix(*v, join(path, "J1"), sys.n_y());
    obs.xi0 = Vector::Zero(obs.N.rows());
    try {
      obs.validate(sys);
    } catch (const InputError& e) {
      throw ConfigError(path, e.what());
    }
    out.design = obs;
  } else {
    throw ConfigError(join(path, "design"), "expected \"riccati\", \"deadbeat\" or \"explicit\"");
  }
  if (const json* v = find(*j, "xi0")) out.xi0 = as_vector(*v, join(path, "xi0"));
  return out;
}

StateNormEstimatorConfig parse_statenorm(const json* j) {
  StateNormEstimatorConfig s;
  if (j != nullptr) {
    const std::string path = "statenorm";
    require_object(*j, path);
    if (const json* v = find(*j, "epsilon")) s.epsilon = as_number(*v, join(path, "epsilon"));
    if (const json* v = find(*j, "rho1")) s.rho1 = parse_kfunction(*v, join(path, "rho1"));
    if (const json* v = find(*j, "rho2")) s.rho2 = parse_kfunction(*v, join(path, "rho2"));
  }
  try {
    s.validate();
  } catch (const InputError& e) {
    throw ConfigError("statenorm.epsilon", e.what());
  }
  return s;
}

CertifyConfig parse_certify(const json* j) {
  CertifyConfig c;
  if (j == nullptr) return c;
  const std::string path = "certify";
  require_object(*j, path);
  if (const json* v = find(*j, "epsilon")) {
    c.options.epsilon = as_number(*v, join(path, "epsilon"));
    if (!(*c.options.epsilon > 0.0)) throw ConfigError(join(path, "epsilon"), "must be positive");
  }
  if (const json* v = find(*j, "output_term")) c.options.output_term = as_bool(*v, join(path, "output_term"));
  if (const json* v = find(*j, "condition_tol")) {
    c.options.condition_tol = as_number(*v, join(path, "condition_tol"));
  }
  if (const json* v = find(*j, "samples")) {
    c.samples = static_cast<int>(as_integer(*v, join(path, "samples")));
    if (c.samples < 0) throw ConfigError(join(path, "samples"), "must be non-negative");
  }
  if (const json* v = find(*j, "tol")) {
    c.tol = as_number(*v, join(path, "tol"));
    if (c.tol < 0.0) throw ConfigError(join(path, "tol"), "must be non-negative");
  }
  return c;
}

OutputConfig parse_outputs(const json& j) {
  const std::string path = "outputs";
  require_object(j, path);
  OutputConfig o;
  if (const json* v = find(j, "directory")) o.directory = as_string(*v, join(path, "directory"));
  if (const json* v = find(j, "emit_states")) o.emit_states = as_bool(*v, join(path, "emit_states"));
  if (const json* v = find(j, "emit_estimates")) o.emit_estimates = as_bool(*v, join(path, "emit_estimates"));
  if (const json* v = find(j, "emit_timing")) o.emit_timing = as_bool(*v, join(path, "emit_timing"));
  return o;
}

SystemModel model_of(const RunConfig& cfg) {
  if (cfg.is_power()) return build_discrete_model(cfg.power().params);
  return linear_model(cfg.linear().sys);
}

}  // namespace

const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Fie:
      return "fie";
    case EstimatorKind::Deadbeat:
      return "deadbeat";
    case EstimatorKind::Observer:
      return "observer";
    case EstimatorKind::StateNorm:
      return "statenorm";
  }
  return "";
}

RunConfig parse_config(const json& doc) {
  require_object(doc, "");
  const json& schema = require(doc, "schema", "");
  if (!schema.is_number_integer() || schema.get<int>() != 1) throw ConfigError("schema", "expected 1");

  RunConfig cfg;
  const json& m = require(doc, "model", "");
  require_object(m, "model");
  if (const json* b = find(m, "builtin")) {
    if (as_string(*b, "model.builtin") != "powersys") {
      throw ConfigError("model.builtin", "the only builtin model is \"powersys\"");
    }
    cfg.model = parse_power(m);
  } else if (find(m, "linear") != nullptr) {
    cfg.model = parse_linear(m);
  } else {
    throw ConfigError("model", "expected \"builtin\" or \"linear\"");
  }

  if (const json* v = find(doc, "experiment")) cfg.experiment = parse_experiment(*v);
  if (const json* v = find(doc, "estimator")) {
    const std::string name = as_string(*v, "estimator");
    if (name == "fie") {
      cfg.estimator = EstimatorKind::Fie;
    } else if (name == "deadbeat") {
      cfg.estimator = EstimatorKind::Deadbeat;
    } else if (name == "observer") {
      cfg.estimator = EstimatorKind::Observer;
    } else if (name == "statenorm") {
      cfg.estimator = EstimatorKind::StateNorm;
    } else {
      throw ConfigError("estimator", "expected fie, deadbeat, observer or statenorm");
    }
  }
  if (cfg.estimator == EstimatorKind::Deadbeat && !cfg.is_power()) {
    throw ConfigError("estimator", "deadbeat needs the powersys model");
  }
  if (cfg.estimator == EstimatorKind::Observer && cfg.is_power()) {
    throw ConfigError("estimator", "observer needs a linear model");
  }

  const SystemModel model = model_of(cfg);
  cfg.fie = parse_fie(find(doc, "fie"), cfg, model);
  cfg.observer = parse_observer(find(doc, "observer"), cfg);
  cfg.statenorm = parse_statenorm(find(doc, "statenorm"));
  cfg.certify = parse_certify(find(doc, "certify"));
  if (const json* v = find(doc, "outputs")) cfg.outputs = parse_outputs(*v);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

}  // namespace fiekit::cli
