#pragma once

#include <iosfwd>

#include "config.hpp"

namespace fiekit::cli {

/// Command-line overrides applied on top of the configuration file.
struct Overrides {
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

/// Each command writes its files under cfg.outputs.directory and a short
/// report on `log`. Configuration problems throw ConfigError; anything else
/// that stops a command throws std::runtime_error.
void cmd_simulate(const RunConfig& cfg, int jobs, std::ostream& log);
void cmd_estimate(const RunConfig& cfg, int jobs, std::ostream& log);
/// Returns false when the observer fails certification.
bool cmd_certify(const RunConfig& cfg, std::ostream& log);
void cmd_compare(const RunConfig& cfg, int jobs, std::ostream& log);

/// Runs fn(0..count-1) on a pool of `jobs` threads. The first exception, by
/// run index, is rethrown after all runs finish.
void run_pool(int jobs, int count, const std::function<void(int)>& fn);

}  // namespace fiekit::cli
