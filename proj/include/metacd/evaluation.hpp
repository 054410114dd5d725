#pragma once

// Evaluation of a trained model against held-out ground truth. Truth enters
// only here; the scoring path reads TaskData alone.

#include <optional>
#include <string>
#include <vector>

#include "metacd/metrics.hpp"
#include "metacd/trainer.hpp"

namespace metacd::eval {

using diff::Matrix;

struct EvalOptions {
  int posterior_samples = 100;  // hard graph samples for E-SHD, E-SID and edge marginals
  int intv_samples = 10;        // graph samples averaged into each target score
  std::uint64_t seed = 0;

  void validate() const {
    if (posterior_samples < 1) throw ConfigError("posterior_samples must be >= 1");
    if (intv_samples < 1) throw ConfigError("intv_samples must be >= 1");
  }
};

struct TaskScores {
  int task_id = 0;
  std::vector<double> scores;  // sigmoid(logit) per variable
  std::vector<int> labels;     // true targets (empty until matched with truth)
};

struct EvalReport {
  int d = 0;
  metrics::MeanSe e_shd;
  std::optional<metrics::MeanSe> e_sid;  // absent when d exceeds the SID guard
  std::optional<double> graph_auroc;
  std::optional<double> graph_auprc;
  std::optional<double> intv_auroc;
  std::optional<double> intv_auprc;
  int n_posterior_samples = 0;
  int intv_samples = 0;
  std::uint64_t seed = 0;
  Matrix edge_probabilities;
  std::vector<TaskScores> tasks;
};

/// Mean sigmoid(logit) over `samples` graph draws for one task. Shared
/// parameters are not modified.
inline std::vector<double> target_scores(const train::ModelState& state, const scm::TaskData& raw,
                                         const train::TrainConfig& config, int samples, std::uint64_t seed) {
  if (samples < 1) throw ConfigError("target_scores: samples must be >= 1");
  const scm::TaskData task = state.standardizer.apply(raw);
  std::vector<double> acc(static_cast<std::size_t>(task.d()), 0.0);
  for (int s = 0; s < samples; ++s) {
    const train::TaskSeeds seeds = train::task_seeds(seed, s, task.task_id);
    const train::MetaTestResult r = train::adapt_meta_test(state, task, config, seeds);
    for (int j = 0; j < task.d(); ++j) acc[static_cast<std::size_t>(j)] += diff::sigmoid_value(r.logits(0, j));
  }
  for (double& v : acc) v /= static_cast<double>(samples);
  return acc;
}

/// Metrics from precomputed posterior samples and per-task target scores.
inline EvalReport summarize(const std::vector<Adjacency>& samples, const Adjacency& truth,
                            std::vector<TaskScores> tasks) {
  if (samples.empty()) throw ConfigError("summarize: no posterior samples");
  EvalReport r;
  r.d = static_cast<int>(truth.rows());
  r.n_posterior_samples = static_cast<int>(samples.size());
  r.e_shd = metrics::e_shd(samples, truth);
  if (r.d <= metrics::kMaxSidNodes) r.e_sid = metrics::e_sid(samples, truth);
  r.edge_probabilities = Matrix::Zero(r.d, r.d);
  for (const auto& s : samples) r.edge_probabilities += s.cast<double>();
  r.edge_probabilities /= static_cast<double>(samples.size());
  const auto [edge_scores, edge_labels] = metrics::edge_scores(r.edge_probabilities, truth);
  r.graph_auroc = metrics::auroc(edge_scores, edge_labels);
  r.graph_auprc = metrics::auprc(edge_scores, edge_labels);
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (const auto& t : tasks) {
    if (t.scores.size() != t.labels.size()) throw ShapeError("summarize: task " + std::to_string(t.task_id) +
                                                             " has mismatched scores and labels");
    pooled_scores.insert(pooled_scores.end(), t.scores.begin(), t.scores.end());
    pooled_labels.insert(pooled_labels.end(), t.labels.begin(), t.labels.end());
  }
  r.intv_auroc = metrics::auroc(pooled_scores, pooled_labels);
  r.intv_auprc = metrics::auprc(pooled_scores, pooled_labels);
  r.tasks = std::move(tasks);
  return r;
}

inline std::vector<Adjacency> posterior_samples(const train::ModelState& state, const train::TrainConfig& config,
                                                int n, std::uint64_t seed) {
  const train::Temperatures temps = train::temperatures_at(config, std::max(0, state.epoch - 1));
  const dag::DagPosteriorParams params = state.dag_params(temps);
  Rng rng(derive_seed(seed, 0xE5D));
  std::vector<Adjacency> out;
  for (int k = 0; k < n; ++k) out.push_back(dag::sample_hard_adjacency(params, rng));
  return out;
}

/// Full evaluation over meta-test tasks. Throws listing every missing truth field.
inline EvalReport evaluate(const train::ModelState& state, const std::vector<scm::TaskDataset>& test_tasks,
                           const std::optional<Adjacency>& truth, const train::TrainConfig& config,
                           const EvalOptions& opt) {
  opt.validate();
  if (test_tasks.empty()) throw ConfigError("evaluate: no meta-test tasks");
  std::vector<std::string> missing;
  if (!truth) missing.push_back("true_adjacency");
  for (const auto& t : test_tasks)
    if (!t.true_targets) missing.push_back("true_targets[task " + std::to_string(t.data.task_id) + "]");
  if (!missing.empty()) {
    std::string msg = "evaluate: missing ground truth:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }
  if (truth->rows() != state.dims.d) {
    throw ShapeError("evaluate: truth has d=" + std::to_string(truth->rows()) + ", model has d=" +
                     std::to_string(state.dims.d));
  }
  std::vector<TaskScores> scores;
  for (const auto& t : test_tasks) {
    TaskScores s;
    s.task_id = t.data.task_id;
    s.scores = target_scores(state, t.data, config, opt.intv_samples, opt.seed);
    for (Eigen::Index j = 0; j < t.true_targets->size(); ++j) s.labels.push_back((*t.true_targets)(j) != 0 ? 1 : 0);
    scores.push_back(std::move(s));
  }
  EvalReport r = summarize(posterior_samples(state, config, opt.posterior_samples, opt.seed), *truth, std::move(scores));
  r.intv_samples = opt.intv_samples;
  r.seed = opt.seed;
  return r;
}

}  // namespace metacd::eval
