#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using fiekit::cli::ConfigError;
using nlohmann::json;

int config_failure(const std::string& field, const std::string& message) {
  std::cerr << json{{"error", "config"}, {"field", field}, {"message", message}}.dump() << '\n';
  return 2;
}

int runtime_failure(const std::string& message) {
  std::cerr << json{{"error", "runtime"}, {"message", message}}.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Full information estimation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  fiekit::cli::Overrides overrides;
  std::uint64_t seed = 0;
  std::string out;
  for (const char* name : {"simulate", "estimate", "certify", "compare"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--jobs", overrides.jobs, "worker threads for Monte Carlo runs");
    sub->add_option("--seed", seed, "base seed, overrides experiment.seed");
    sub->add_option("--out", out, "output directory, overrides outputs.directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed") > 0) overrides.seed = seed;
  if (sub->count("--out") > 0) overrides.out = out;

  try {
    fiekit::cli::RunConfig cfg = fiekit::cli::load_config(config_path);
    fiekit::cli::apply_overrides(cfg, overrides);
    if (command == "simulate") {
      fiekit::cli::cmd_simulate(cfg, overrides.jobs, std::cout);
    } else if (command == "estimate") {
      fiekit::cli::cmd_estimate(cfg, overrides.jobs, std::cout);
    } else if (command == "certify") {
      if (!fiekit::cli::cmd_certify(cfg, std::cout)) return runtime_failure("certification failed");
    } else {
      fiekit::cli::cmd_compare(cfg, overrides.jobs, std::cout);
    }
  } catch (const ConfigError& e) {
    return config_failure(e.field(), e.what());
  } catch (const std::exception& e) {
    return runtime_failure(e.what());
  }
  return 0;
}
