#include "cli_options.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace metacd::cli {

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "JSON config; unknown keys are rejected");
  cmd->add_option("--seed", o.seed, "base seed (overrides config)");
  cmd->add_option("--out", o.out, "output location (overrides config output_dir)");
  cmd->add_option("--mode", o.mode, "analytical | intv-maml | full-maml")
      ->check(CLI::IsMember({"analytical", "intv-maml", "full-maml"}));
  cmd->add_option("--epochs", o.epochs, "outer training epochs");
  cmd->add_option("--d", o.d, "number of variables");
  cmd->add_option("--tasks", o.tasks, "meta-training and meta-test task count");
  cmd->add_option("--simulations", o.simulations, "independent simulations for `run`");
  cmd->add_option("--observational-fraction", o.observational_fraction, "share of tasks without interventions");
  cmd->add_flag("--force", o.force, "write into a non-empty output directory");
}

config::ExperimentConfig resolve(const Overrides& o) {
  config::ExperimentConfig c = o.config_file.empty() ? config::from_json(nlohmann::json::object())
                                                     : config::load(o.config_file);
  nlohmann::json patch = config::to_json(c);
  if (o.seed) patch["seed"] = *o.seed;
  if (o.out) patch["output_dir"] = *o.out;
  if (o.mode) patch["train"]["mode"] = *o.mode;
  if (o.epochs) patch["train"]["epochs"] = *o.epochs;
  if (o.d) patch["data"]["d"] = *o.d;
  if (o.tasks) {
    patch["data"]["n_train"] = *o.tasks;
    patch["data"]["n_test"] = *o.tasks;
  }
  if (o.simulations) patch["n_simulations"] = *o.simulations;
  if (o.observational_fraction) patch["data"]["observational_fraction"] = *o.observational_fraction;
  return config::from_json(patch);
}

std::string help_footer() {
  std::ostringstream os;
  const nlohmann::json defaults = config::to_json(config::ExperimentConfig{});
  os << "\nConfig keys (defaults in brackets):\n";
  for (const auto& [key, doc] : config::knob_docs()) {
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const nlohmann::json& v = defaults.at(nlohmann::json::json_pointer(pointer));
    char line[256];
    std::snprintf(line, sizeof line, "  %-30s %s [%s]\n", key.c_str(), doc.c_str(), v.dump().c_str());
    os << line;
  }
  os << "\nExit codes: 0 success, 2 config/input error, 3 numerical failure.\n";
  return os.str();
}

}  // namespace metacd::cli
