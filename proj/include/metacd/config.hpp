#pragma once

// Experiment configuration as JSON. Files are merged over the defaults and
// rejected if they name a key the defaults do not have or change a value's type.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metacd/evaluation.hpp"
#include "metacd/scm/scm.hpp"
#include "metacd/trainer.hpp"

namespace metacd::config {

using nlohmann::json;

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int n_simulations = 1;
  std::string output_dir = "runs/default";
  std::optional<std::string> dataset_path;
  int checkpoint_every = 100;  // epochs between checkpoints; the final one is always written
  scm::CollectionOptions data;
  ModelDims model;
  train::TrainConfig train;
  eval::EvalOptions eval;

  void validate() const {
    if (n_simulations < 1) throw ConfigError("n_simulations must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (data.d < 2) throw ConfigError("data.d must be >= 2");
    if (data.n_train < 1) throw ConfigError("data.n_train must be >= 1");
    if (data.n_test < 0) throw ConfigError("data.n_test must be >= 0");
    if (data.n_support < 1 || data.test_support < 1) throw ConfigError("support sizes must be >= 1");
    if (data.n_query < 4) throw ConfigError("data.n_query must be >= 4");
    if (data.targets_per_task < 0 || data.targets_per_task > 3) throw ConfigError("data.targets_per_task must be in [0, 3]");
    if (data.observational_fraction < 0.0 || data.observational_fraction > 1.0) {
      throw ConfigError("data.observational_fraction must be in [0, 1]");
    }
    if (!(data.expected_edges_per_node >= 0.0)) throw ConfigError("data.expected_edges_per_node must be >= 0");
    if (data.mechanism.features < 1) throw ConfigError("data.rff_features must be >= 1");
    if (!(data.mechanism.length_scale > 0.0)) throw ConfigError("data.length_scale must be > 0");
    if (!(data.mechanism.noise_scale > 0.0)) throw ConfigError("data.noise_scale must be > 0");
    if (model.hidden < 1 || model.feature_dim < 1 || model.embed_dim < 1) throw ConfigError("model widths must be >= 1");
    train.validate();
    eval.validate();
  }
};

/// One line per knob: dotted key and meaning. Shown by --help.
inline const std::vector<std::pair<std::string, std::string>>& knob_docs() {
  static const std::vector<std::pair<std::string, std::string>> docs = {
      {"seed", "base seed; every random stream is derived from it"},
      {"n_simulations", "independent repetitions for `run` (seeds seed, seed+1, ...)"},
      {"output_dir", "where generate/train/evaluate/run write"},
      {"dataset_path", "existing dataset directory to use instead of generating (null: generate)"},
      {"checkpoint_every", "epochs between intermediate checkpoints"},
      {"data.d", "number of variables"},
      {"data.expected_edges_per_node", "Erdos-Renyi density of the true graph"},
      {"data.n_train", "meta-training tasks"},
      {"data.n_test", "meta-test tasks"},
      {"data.n_support", "support rows per training task"},
      {"data.n_query", "query rows per training task"},
      {"data.test_support", "rows per meta-test task"},
      {"data.targets_per_task", "intervened variables per interventional task (0..3)"},
      {"data.observational_fraction", "share of tasks without interventions"},
      {"data.intervention", "hard | soft"},
      {"data.rff_features", "random Fourier features per true mechanism"},
      {"data.length_scale", "kernel length scale of the true mechanisms"},
      {"data.amplitude", "output scale of the true mechanisms"},
      {"data.noise_scale", "additive noise standard deviation"},
      {"data.hard_mean", "mean of the value drawn for a hard-intervened variable"},
      {"data.hard_sd", "sd of the value drawn for a hard-intervened variable"},
      {"data.soft_shift", "additive shift of a soft-intervened mechanism"},
      {"model.hidden", "hidden width of every network"},
      {"model.feature_dim", "interventional feature width (ridge design columns)"},
      {"model.embed_dim", "set-pooling embedding width"},
      {"train.epochs", "outer epochs (one update per epoch)"},
      {"train.learning_rate", "Adam step size for shared parameters"},
      {"train.tau_start", "initial graph-sampler temperature"},
      {"train.tau_end", "final graph-sampler temperature (geometric schedule)"},
      {"train.tau_m", "target-sampler temperature"},
      {"train.ridge_lambda", "ridge penalty of the closed-form head fit"},
      {"train.mode", "analytical | intv-maml | full-maml"},
      {"train.maml_inner_steps", "inner gradient steps (MAML modes)"},
      {"train.maml_inner_lr", "inner step size (MAML modes)"},
      {"train.standardize", "z-score variables with pooled training statistics"},
      {"train.graph_prior_samples", "relaxed graph samples for the sparsity term"},
      {"train.straight_through", "hard forward samples with relaxed gradients"},
      {"loss.lambda_i", "weight of the target-sparsity term"},
      {"loss.lambda_h", "weight of the residual-independence term"},
      {"loss.lambda_g", "weight of the graph-sparsity term"},
      {"loss.hsic_bandwidth", "median | fixed"},
      {"loss.hsic_fixed_bandwidth", "kernel bandwidth when hsic_bandwidth is fixed"},
      {"loss.hsic_max_rows", "rows subsampled for the independence term"},
      {"loss.graph_prior_p", "prior edge probability"},
      {"eval.posterior_samples", "graph samples for E-SHD, E-SID and edge marginals"},
      {"eval.intv_samples", "graph samples averaged per target score"},
  };
  return docs;
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["n_simulations"] = c.n_simulations;
  j["output_dir"] = c.output_dir;
  j["dataset_path"] = c.dataset_path ? json(*c.dataset_path) : json(nullptr);
  j["checkpoint_every"] = c.checkpoint_every;
  const auto& d = c.data;
  j["data"] = {{"d", d.d},
               {"expected_edges_per_node", d.expected_edges_per_node},
               {"n_train", d.n_train},
               {"n_test", d.n_test},
               {"n_support", d.n_support},
               {"n_query", d.n_query},
               {"test_support", d.test_support},
               {"targets_per_task", d.targets_per_task},
               {"observational_fraction", d.observational_fraction},
               {"intervention", scm::to_string(d.kind)},
               {"rff_features", d.mechanism.features},
               {"length_scale", d.mechanism.length_scale},
               {"amplitude", d.mechanism.amplitude},
               {"noise_scale", d.mechanism.noise_scale},
               {"hard_mean", d.intervention.hard_mean},
               {"hard_sd", d.intervention.hard_sd},
               {"soft_shift", d.intervention.soft_shift}};
  j["model"] = {{"hidden", c.model.hidden}, {"feature_dim", c.model.feature_dim}, {"embed_dim", c.model.embed_dim}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"learning_rate", t.learning_rate},
                {"tau_start", t.tau_start},
                {"tau_end", t.tau_end},
                {"tau_m", t.tau_m},
                {"ridge_lambda", t.ridge_lambda},
                {"mode", to_string(t.mode)},
                {"maml_inner_steps", t.maml_inner_steps},
                {"maml_inner_lr", t.maml_inner_lr},
                {"standardize", t.standardize},
                {"graph_prior_samples", t.graph_prior_samples},
                {"straight_through", t.straight_through}};
  const auto& w = t.weights;
  j["loss"] = {{"lambda_i", w.lambda_i},
               {"lambda_h", w.lambda_h},
               {"lambda_g", w.lambda_g},
               {"hsic_bandwidth", w.hsic_bandwidth_mode == losses::BandwidthMode::kMedian ? "median" : "fixed"},
               {"hsic_fixed_bandwidth", w.hsic_fixed_bandwidth},
               {"hsic_max_rows", w.hsic_max_rows},
               {"graph_prior_p", w.graph_prior_p}};
  j["eval"] = {{"posterior_samples", c.eval.posterior_samples}, {"intv_samples", c.eval.intv_samples}};
  return j;
}

/// Config without filesystem locations, so artifacts written to different
/// places by the same experiment stay byte-identical.
inline json experiment_echo(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("dataset_path");
  return j;
}

namespace detail {

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers may not be replaced by fractions; floats accept integers.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

inline void check_keys(const json& defaults, const json& given, const std::string& path) {
  if (!given.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("config: unknown key '" + full + "'");
    const json& ref = defaults.at(key);
    if (ref.is_object()) {
      check_keys(ref, value, full);
    } else if (full == "dataset_path") {
      if (!value.is_null() && !value.is_string()) throw ConfigError("config: 'dataset_path' must be a string or null");
    } else if (!same_kind(ref, value)) {
      throw ConfigError("config: '" + full + "' has type " + value.type_name() + ", expected " + ref.type_name());
    }
  }
}

}  // namespace detail

inline ExperimentConfig from_json(const json& given) {
  const ExperimentConfig defaults;
  json j = to_json(defaults);
  detail::check_keys(j, given, "");
  j.merge_patch(given);
  ExperimentConfig c;
  try {
    if (j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() < 0) {
      throw ConfigError("config: 'seed' must be >= 0");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.n_simulations = j.at("n_simulations").get<int>();
    c.output_dir = j.at("output_dir").get<std::string>();
    // merge_patch deletes keys patched with null.
    if (j.contains("dataset_path") && !j.at("dataset_path").is_null()) c.dataset_path = j.at("dataset_path").get<std::string>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    const json& d = j.at("data");
    c.data.d = d.at("d").get<int>();
    c.data.expected_edges_per_node = d.at("expected_edges_per_node").get<double>();
    c.data.n_train = d.at("n_train").get<int>();
    c.data.n_test = d.at("n_test").get<int>();
    c.data.n_support = d.at("n_support").get<int>();
    c.data.n_query = d.at("n_query").get<int>();
    c.data.test_support = d.at("test_support").get<int>();
    c.data.targets_per_task = d.at("targets_per_task").get<int>();
    c.data.observational_fraction = d.at("observational_fraction").get<double>();
    c.data.kind = scm::parse_intervention_kind(d.at("intervention").get<std::string>());
    c.data.mechanism.features = d.at("rff_features").get<int>();
    c.data.mechanism.length_scale = d.at("length_scale").get<double>();
    c.data.mechanism.amplitude = d.at("amplitude").get<double>();
    c.data.mechanism.noise_scale = d.at("noise_scale").get<double>();
    c.data.intervention.hard_mean = d.at("hard_mean").get<double>();
    c.data.intervention.hard_sd = d.at("hard_sd").get<double>();
    c.data.intervention.soft_shift = d.at("soft_shift").get<double>();
    const json& m = j.at("model");
    c.model.hidden = m.at("hidden").get<int>();
    c.model.feature_dim = m.at("feature_dim").get<int>();
    c.model.embed_dim = m.at("embed_dim").get<int>();
    c.model.d = c.data.d;
    const json& t = j.at("train");
    c.train.epochs = t.at("epochs").get<int>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.tau_start = t.at("tau_start").get<double>();
    c.train.tau_end = t.at("tau_end").get<double>();
    c.train.tau_m = t.at("tau_m").get<double>();
    c.train.ridge_lambda = t.at("ridge_lambda").get<double>();
    c.train.mode = parse_ablation_mode(t.at("mode").get<std::string>());
    c.train.maml_inner_steps = t.at("maml_inner_steps").get<int>();
    c.train.maml_inner_lr = t.at("maml_inner_lr").get<double>();
    c.train.standardize = t.at("standardize").get<bool>();
    c.train.graph_prior_samples = t.at("graph_prior_samples").get<int>();
    c.train.straight_through = t.at("straight_through").get<bool>();
    const json& w = j.at("loss");
    c.train.weights.lambda_i = w.at("lambda_i").get<double>();
    c.train.weights.lambda_h = w.at("lambda_h").get<double>();
    c.train.weights.lambda_g = w.at("lambda_g").get<double>();
    const std::string bw = w.at("hsic_bandwidth").get<std::string>();
    if (bw != "median" && bw != "fixed") throw ConfigError("config: loss.hsic_bandwidth must be median or fixed");
    c.train.weights.hsic_bandwidth_mode = bw == "median" ? losses::BandwidthMode::kMedian : losses::BandwidthMode::kFixed;
    c.train.weights.hsic_fixed_bandwidth = w.at("hsic_fixed_bandwidth").get<double>();
    c.train.weights.hsic_max_rows = w.at("hsic_max_rows").get<int>();
    c.train.weights.graph_prior_p = w.at("graph_prior_p").get<double>();
    const json& e = j.at("eval");
    c.eval.posterior_samples = e.at("posterior_samples").get<int>();
    c.eval.intv_samples = e.at("intv_samples").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.eval.seed = c.seed;
  c.validate();
  return c;
}

inline ExperimentConfig load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace metacd::config
