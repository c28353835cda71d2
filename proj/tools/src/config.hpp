#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "fiekit/estimators.hpp"
#include "fiekit/fie.hpp"
#include "fiekit/lyapunov.hpp"
#include "fiekit/powersys.hpp"

namespace fiekit::cli {

/// Invalid configuration; `field` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct PowerModelConfig {
  PowerSystemParams params;
  DemoInitialization initial;
};

struct LinearModelConfig {
  LinearSystem sys;
  Vector x0;
  std::optional<Vector> x_bar;
  std::optional<double> noise_bound;
};

struct ExperimentConfig {
  std::size_t horizon = 150;
  std::uint64_t seed = 0;
  int monte_carlo_runs = 1;
  bool noise_free = false;
  std::size_t burn_in = 20;
};

struct ObserverConfig {
  std::variant<DeadbeatDesign, RiccatiDesign, LinearFunctionalObserver> design;
  std::optional<Vector> xi0;
};

struct CertifyConfig {
  CertificateOptions options;
  int samples = 10000;
  double tol = 1e-8;
};

struct OutputConfig {
  std::filesystem::path directory = "out";
  bool emit_states = true;
  bool emit_estimates = true;
  bool emit_timing = true;
};

enum class EstimatorKind { Fie, Deadbeat, Observer, StateNorm };

struct RunConfig {
  std::variant<PowerModelConfig, LinearModelConfig> model;
  ExperimentConfig experiment;
  EstimatorKind estimator = EstimatorKind::Fie;
  FieConfig fie;
  ObserverConfig observer;
  StateNormEstimatorConfig statenorm;
  CertifyConfig certify;
  OutputConfig outputs;

  bool is_power() const { return std::holds_alternative<PowerModelConfig>(model); }
  const PowerModelConfig& power() const { return std::get<PowerModelConfig>(model); }
  const LinearModelConfig& linear() const { return std::get<LinearModelConfig>(model); }
};

/// Parses and validates a `schema: 1` configuration document.
RunConfig parse_config(const nlohmann::json& doc);

/// Reads and parses a file; unreadable or malformed files are config errors.
RunConfig load_config(const std::filesystem::path& path);

const char* estimator_name(EstimatorKind kind);

}  // namespace fiekit::cli
