#pragma once

// Command-line overrides shared by every subcommand of the driver.

#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "metacd/config.hpp"

namespace metacd::cli {

struct Overrides {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<int> epochs;
  std::optional<int> d;
  std::optional<int> tasks;
  std::optional<int> simulations;
  std::optional<double> observational_fraction;
  bool force = false;
};

void add_common(CLI::App* cmd, Overrides& o);

/// Config file (or defaults) with flag overrides applied, validated as a whole.
config::ExperimentConfig resolve(const Overrides& o);

/// Every config key with its description and default.
std::string help_footer();

}  // namespace metacd::cli
