#pragma once

// Bi-level meta-training. Inner level: task-specific interventional heads,
// fitted in closed form on each support set (or by gradient steps in the MAML
// ablations). Outer level: one Adam step on all task-shared parameters per
// epoch, using the query-set objective of every training task.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "metacd/dag_sampler.hpp"
#include "metacd/diff/ops.hpp"
#include "metacd/diff/params.hpp"
#include "metacd/intv_model.hpp"
#include "metacd/likelihood.hpp"
#include "metacd/losses.hpp"
#include "metacd/model.hpp"
#include "metacd/random.hpp"
#include "metacd/scm/scm.hpp"

namespace metacd::train {

using diff::Matrix;
using diff::ParamSet;
using diff::Var;
using scm::TaskData;

struct Temperatures {
  double u = 1.0;
  double pi = 1.0;
  double m = 0.5;
};

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-3;
  losses::LossWeights weights;
  double tau_start = 1.0;
  double tau_end = 0.2;
  double tau_m = 0.5;
  double ridge_lambda = 0.1;
  AblationMode mode = AblationMode::kAnalytical;
  int maml_inner_steps = 10;
  double maml_inner_lr = 1e-2;
  bool standardize = true;
  int graph_prior_samples = 16;
  bool straight_through = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(tau_start > 0.0 && tau_end > 0.0 && tau_m > 0.0)) throw ConfigError("temperatures must be > 0");
    if (!(ridge_lambda > 0.0)) throw ConfigError("ridge_lambda must be > 0");
    if (maml_inner_steps < 0) throw ConfigError("maml_inner_steps must be >= 0");
    if (!(maml_inner_lr > 0.0)) throw ConfigError("maml_inner_lr must be > 0");
    if (graph_prior_samples < 1) throw ConfigError("graph_prior_samples must be >= 1");
    weights.validate();
  }
};

/// Geometric annealing from tau_start to tau_end over the configured epochs;
/// held at tau_end afterwards. The target temperature is fixed.
inline Temperatures temperatures_at(const TrainConfig& c, int epoch) {
  const double frac = c.epochs <= 1 ? 1.0 : std::clamp(static_cast<double>(epoch) / (c.epochs - 1), 0.0, 1.0);
  const double tau = c.tau_start * std::pow(c.tau_end / c.tau_start, frac);
  return {tau, tau, c.tau_m};
}

// ---------------------------------------------------------------------------
// Standardisation

struct Standardizer {
  Matrix mean;   // 1 x d
  Matrix scale;  // 1 x d
  std::vector<int> fallback_columns;  // zero-variance columns left unscaled

  bool empty() const { return mean.size() == 0; }

  Matrix apply(const Matrix& x) const {
    if (empty()) return x;
    if (x.cols() != mean.cols()) throw ShapeError("standardize: column count differs from fitted statistics");
    Matrix out = x;
    out.rowwise() -= mean.row(0);
    for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) /= scale(0, c);
    return out;
  }

  Matrix invert(const Matrix& z) const {
    if (empty()) return z;
    Matrix out = z;
    for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) *= scale(0, c);
    out.rowwise() += mean.row(0);
    return out;
  }

  TaskData apply(const TaskData& t) const {
    TaskData out = t;
    out.support = apply(t.support);
    out.query = apply(t.query);
    return out;
  }
};

/// Pooled mean and (population) standard deviation over all support and query
/// rows of the given tasks.
inline Standardizer fit_standardizer(const std::vector<TaskData>& tasks) {
  if (tasks.empty()) throw ConfigError("standardize: no tasks");
  const Eigen::Index d = tasks.front().support.cols();
  Eigen::Index rows = 0;
  for (const auto& t : tasks) rows += t.support.rows() + t.query.rows();
  if (rows < 2) throw ConfigError("standardize: need at least two pooled rows");
  Matrix all(rows, d);
  Eigen::Index r = 0;
  for (const auto& t : tasks) {
    if (t.support.cols() != d) throw ShapeError("standardize: tasks disagree on d");
    all.middleRows(r, t.support.rows()) = t.support;
    r += t.support.rows();
    all.middleRows(r, t.query.rows()) = t.query;
    r += t.query.rows();
  }
  Standardizer s;
  s.mean = all.colwise().mean();
  s.scale = Matrix::Ones(1, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var = (all.col(c).array() - s.mean(0, c)).square().mean();
    if (var > 1e-24) {
      s.scale(0, c) = std::sqrt(var);
    } else {
      s.fallback_columns.push_back(static_cast<int>(c));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Optimiser and model state

struct AdamState {
  ParamSet m;
  ParamSet v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& s, double lr) {
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (auto& [name, value] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Matrix& m = s.m[name];
    Matrix& v = s.v[name];
    if (m.size() == 0) m = Matrix::Zero(value.rows(), value.cols());
    if (v.size() == 0) v = Matrix::Zero(value.rows(), value.cols());
    m = s.beta1 * m + (1.0 - s.beta1) * g->second;
    v = s.beta2 * v + (1.0 - s.beta2) * g->second.cwiseProduct(g->second);
    const Matrix step = ((m.array() / c1) / ((v.array() / c2).sqrt() + s.eps)).matrix();
    value -= lr * step;
  }
}

struct ModelState {
  ModelDims dims;
  AblationMode mode = AblationMode::kAnalytical;
  ParamSet shared;
  AdamState optimizer;
  int epoch = 0;
  std::uint64_t seed = 0;
  Standardizer standardizer;

  dag::DagPosteriorParams dag_params(const Temperatures& t) const {
    return {shared.at(names::kEdgeLogits), shared.at(names::kOrderScores), t.u, t.pi};
  }
};

inline ModelState init_model(const ModelDims& dims, AblationMode mode, std::uint64_t seed) {
  ModelState s;
  s.dims = dims;
  s.mode = mode;
  s.seed = seed;
  Rng rng(derive_seed(seed, 0x1417));
  s.shared = init_shared(dims, mode, rng);
  return s;
}

/// Independent noise streams for one task in one epoch.
struct TaskSeeds {
  std::uint64_t graph = 0;
  std::uint64_t targets = 0;
  std::uint64_t hsic = 0;
};

inline TaskSeeds task_seeds(std::uint64_t seed, int epoch, int task_id) {
  const auto e = static_cast<std::uint64_t>(epoch);
  const auto t = static_cast<std::uint64_t>(task_id) << 8;
  return {derive_seed(seed, e, t | 1), derive_seed(seed, e, t | 2), derive_seed(seed, e, t | 3)};
}

// ---------------------------------------------------------------------------
// One task, forward

struct ForwardOptions {
  Temperatures temps;
  double ridge_lambda = 0.1;
  losses::LossWeights weights;
  bool straight_through = true;
  bool with_query = true;
};

struct TaskForward {
  dag::DagSample graph;
  std::vector<Var> heads;   // feature_dim x 1 per variable
  std::vector<Var> design;  // ridge design matrices (analytical mode only)
  Var features;             // N_s x 9d
  Var pooled;               // 1 x 2k
  intv::InterventionSample targets;
  std::optional<likelihood::BatchPrediction> query;
  losses::TaskLosses losses;
  Var objective;            // L_R + lambda_I L_I + lambda_H L_H (query required)
};

/// Full forward pass for one task on `tape`. In analytical mode the heads are
/// the ridge solution on the (canonically ordered) support; in MAML modes they
/// are read from the bound `int.heads` array.
inline TaskForward forward_task(diff::Tape& tape, const diff::BoundParams& p, const ModelDims& dims,
                                AblationMode mode, const TaskData& task, const ForwardOptions& opt,
                                const TaskSeeds& seeds) {
  if (task.d() != dims.d) {
    throw ShapeError("task " + std::to_string(task.task_id) + " has d=" + std::to_string(task.d()) +
                     ", model has d=" + std::to_string(dims.d));
  }
  TaskForward f;
  Var support = tape.constant(intv::canonical_rows(task.support));

  Rng graph_rng(seeds.graph);
  f.graph = dag::sample_adjacency(p[names::kEdgeLogits], p[names::kOrderScores], opt.temps.u, opt.temps.pi,
                                  graph_rng, opt.straight_through);

  if (mode == AblationMode::kAnalytical) {
    likelihood::RidgeFit fit = likelihood::ridge_adapt(p, dims, support, f.graph.a, opt.ridge_lambda);
    f.heads = fit.weights;
    f.design = fit.design;
  } else {
    f.heads = likelihood::split_heads(p[names::kHeads]);
  }

  f.features = intv::build_features(p, dims, support, f.graph.a, f.heads, f.design.empty() ? nullptr : &f.design);
  f.pooled = intv::pool(p, dims, f.features);
  Var logits = intv::target_logits(p, dims, f.pooled);
  Rng target_rng(seeds.targets);
  f.targets = intv::sample_targets(logits, opt.temps.m, target_rng, opt.straight_through);

  if (opt.with_query && task.query.rows() > 0) {
    Var query = tape.constant(task.query);
    f.query = likelihood::batch_predict(p, dims, query, f.graph.a, f.targets.m, f.heads);
    f.losses.task_id = task.task_id;
    const int id = task.task_id;
    f.losses.recon = losses::component("reconstruction", id, [&] { return losses::recon_loss(query, f.query->prediction); });
    f.losses.intv = losses::component("intervention-sparsity", id, [&] { return losses::intv_sparsity(logits); });
    if (query.rows() >= 4) {
      Rng hsic_rng(seeds.hsic);
      f.losses.hsic = losses::component(
          "hsic", id, [&] { return losses::hsic_residual(f.query->residual, opt.weights, &hsic_rng); });
    } else {
      f.losses.hsic = tape.constant(Matrix::Zero(1, 1));
    }
    f.objective = losses::task_objective(f.losses, opt.weights);
  }
  return f;
}

/// lambda_G-free graph term: KL sparsity of Monte-Carlo relaxed edge marginals.
inline Var graph_loss(const diff::BoundParams& p, const Temperatures& temps, const losses::LossWeights& w,
                      int samples, Rng& rng) {
  Var probs = losses::soft_edge_probabilities(p[names::kEdgeLogits], p[names::kOrderScores], temps.u, temps.pi,
                                              samples, rng);
  return losses::graph_sparsity(probs, w.graph_prior_p);
}

// ---------------------------------------------------------------------------
// MAML ablations

enum class MamlScope {
  kInterventional,  // feature extractor + heads
  kFull,            // every likelihood parameter
  kHeadsOnly,       // heads alone (used to compare against the ridge solution)
};

inline MamlScope scope_for(AblationMode m) {
  if (m == AblationMode::kFullMaml) return MamlScope::kFull;
  if (m == AblationMode::kIntvMaml) return MamlScope::kInterventional;
  throw ConfigError("analytical mode has no gradient-based adaptation");
}

inline bool adapted_by(const std::string& name, MamlScope scope) {
  const ParamGroup g = group_of(name);
  switch (scope) {
    case MamlScope::kHeadsOnly:
      return g == ParamGroup::kIntHeads;
    case MamlScope::kInterventional:
      return g == ParamGroup::kIntHeads || g == ParamGroup::kIntTrunk;
    case MamlScope::kFull:
      return g == ParamGroup::kIntHeads || g == ParamGroup::kIntTrunk || g == ParamGroup::kObsMechanisms;
  }
  return false;
}

/// Support-set fit of the mechanisms being adapted.
inline Var inner_loss(const diff::BoundParams& p, const ModelDims& dims, const Var& support, const Var& a,
                      MamlScope scope) {
  const std::vector<Var> heads = likelihood::split_heads(p[names::kHeads]);
  std::vector<Var> intv_cols, obs_cols;
  for (int i = 0; i < dims.d; ++i) {
    Var masked = likelihood::masked_input(support, a, i);
    intv_cols.push_back(diff::matmul(likelihood::int_features(p, dims, masked), heads[i]));
    if (scope == MamlScope::kFull) obs_cols.push_back(likelihood::obs_mechanism(p, dims, i, masked));
  }
  Var loss = losses::recon_loss(support, diff::concat_cols(intv_cols));
  if (scope == MamlScope::kFull) loss = diff::add(loss, losses::recon_loss(support, diff::concat_cols(obs_cols)));
  return loss;
}

struct MamlResult {
  ParamSet params;  // full parameter set with the adapted arrays replaced
  std::vector<double> inner_losses;  // loss before each step and after the last
};

/// `steps` plain gradient steps on the support fit, updating only the arrays
/// selected by `scope`. Throws when the loss grows tenfold.
inline MamlResult maml_adapt(const ParamSet& shared, const ModelDims& dims, const Matrix& support,
                             const Matrix& a_hard, MamlScope scope, int steps, double lr) {
  if (steps < 0) throw ConfigError("maml_adapt: steps must be >= 0");
  if (!shared.count(names::kHeads)) throw ConfigError("maml_adapt: model has no head initialisation");
  MamlResult r;
  r.params = shared;
  if (steps == 0) return r;
  const Matrix canon = intv::canonical_rows(support);
  for (int s = 0; s <= steps; ++s) {
    diff::Tape tape;
    diff::BoundParams p(tape, r.params, s < steps);
    Var loss = inner_loss(p, dims, tape.constant(canon), tape.constant(a_hard), scope);
    r.inner_losses.push_back(loss.scalar());
    if (r.inner_losses.back() > 10.0 * r.inner_losses.front()) {
      throw NumericalError("maml_adapt: inner loop diverged (loss " + std::to_string(r.inner_losses.front()) +
                           " -> " + std::to_string(r.inner_losses.back()) + "); lower maml_inner_lr");
    }
    if (s == steps) break;
    tape.backward(loss);
    for (auto& [name, value] : r.params) {
      if (adapted_by(name, scope)) value -= lr * tape.grad(p[name]);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Epoch loop

struct TaskLossRecord {
  int task_id = 0;
  double recon = 0.0;
  double intv = 0.0;
  double hsic = 0.0;
  double objective = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  AblationMode mode = AblationMode::kAnalytical;
  std::vector<TaskLossRecord> tasks;
  double recon = 0.0;
  double intv = 0.0;
  double hsic = 0.0;
  double graph = 0.0;
  double total = 0.0;
  Temperatures temps;
  double wall_seconds = 0.0;
};

inline ForwardOptions forward_options(const TrainConfig& c, const Temperatures& temps) {
  ForwardOptions o;
  o.temps = temps;
  o.ridge_lambda = c.ridge_lambda;
  o.weights = c.weights;
  o.straight_through = c.straight_through;
  return o;
}

/// Rethrows numerical failures with task (and epoch) context attached.
template <typename F>
auto with_task_context(int epoch, int task_id, F&& f) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError("epoch " + std::to_string(epoch) + ", task " + std::to_string(task_id) + ": " + e.what());
  }
}

/// Gradient of one task's objective scaled by 1/T, with the objective itself.
inline std::pair<ParamSet, TaskLossRecord> task_gradient(const ModelState& state, const TaskData& task,
                                                         const TrainConfig& config, const Temperatures& temps,
                                                         double weight) {
  const TaskSeeds seeds = task_seeds(state.seed, state.epoch, task.task_id);
  const ForwardOptions opt = forward_options(config, temps);
  ParamSet params_used;
  const ParamSet* params = &state.shared;
  if (state.mode != AblationMode::kAnalytical) {
    Rng graph_rng(seeds.graph);
    const Adjacency a = dag::sample_hard_adjacency(state.dag_params(temps), graph_rng);
    params_used = maml_adapt(state.shared, state.dims, task.support, a.cast<double>(), scope_for(state.mode),
                             config.maml_inner_steps, config.maml_inner_lr)
                      .params;
    params = &params_used;
  }
  diff::Tape tape;
  diff::BoundParams p(tape, *params);
  TaskForward f = forward_task(tape, p, state.dims, state.mode, task, opt, seeds);
  if (!f.objective.valid()) throw ConfigError("task " + std::to_string(task.task_id) + " has no query rows");
  tape.backward(diff::scale(f.objective, weight));
  TaskLossRecord rec{task.task_id, f.losses.recon.scalar(), f.losses.intv.scalar(), f.losses.hsic.scalar(),
                     f.objective.scalar()};
  // First-order MAML: adjoints at the adapted point are applied to the shared arrays.
  return {p.gradients(tape), rec};
}

/// One outer update over all tasks (full batch) followed by the Adam step.
inline EpochRecord train_epoch(ModelState& state, const std::vector<TaskData>& tasks, const TrainConfig& config) {
  if (tasks.empty()) throw ConfigError("train_epoch: no meta-training tasks");
  if (!(config.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  const auto start = std::chrono::steady_clock::now();
  const Temperatures temps = temperatures_at(config, state.epoch);
  EpochRecord rec;
  rec.epoch = state.epoch;
  rec.mode = state.mode;
  rec.temps = temps;

  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(state.seed, static_cast<std::uint64_t>(state.epoch), 0xA11));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const double inv_t = 1.0 / static_cast<double>(tasks.size());
  ParamSet grads;
  for (std::size_t k : order) {
    const TaskData& task = tasks[k];
    auto [g, loss] = with_task_context(state.epoch, task.task_id,
                                       [&] { return task_gradient(state, task, config, temps, inv_t); });
    diff::accumulate_into(grads, g);
    rec.tasks.push_back(loss);
  }
  std::sort(rec.tasks.begin(), rec.tasks.end(),
            [](const TaskLossRecord& a, const TaskLossRecord& b) { return a.task_id < b.task_id; });

  {
    diff::Tape tape;
    diff::BoundParams p(tape, state.shared);
    Rng rng(derive_seed(state.seed, static_cast<std::uint64_t>(state.epoch), 0x6A9));
    Var lg = with_task_context(state.epoch, -1, [&] {
      return graph_loss(p, temps, config.weights, config.graph_prior_samples, rng);
    });
    tape.backward(diff::scale(lg, config.weights.lambda_g));
    diff::accumulate_into(grads, p.gradients(tape));
    rec.graph = lg.scalar();
  }

  for (const auto& t : rec.tasks) {
    rec.recon += t.recon * inv_t;
    rec.intv += t.intv * inv_t;
    rec.hsic += t.hsic * inv_t;
    rec.total += t.objective * inv_t;
  }
  rec.total += config.weights.lambda_g * rec.graph;
  if (!std::isfinite(rec.total)) throw NumericalError("epoch " + std::to_string(state.epoch) + ": non-finite loss");

  adam_step(state.shared, grads, state.optimizer, config.learning_rate);
  ++state.epoch;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Meta-test

struct MetaTestResult {
  Matrix logits;  // 1 x d
  Matrix m_soft;  // 1 x d
  Matrix m_hard;  // 1 x d
  std::vector<Matrix> heads;
  Adjacency adjacency;
};

/// Adapts the task-specific heads to a new support set and predicts its
/// targets. Shared parameters are read only.
inline MetaTestResult adapt_meta_test(const ModelState& state, const TaskData& task, const TrainConfig& config,
                                      const TaskSeeds& seeds) {
  if (task.support.rows() < 1) throw ConfigError("adapt_meta_test: empty support");
  if (task.d() != state.dims.d) {
    throw ShapeError("adapt_meta_test: task has d=" + std::to_string(task.d()) + ", model has d=" +
                     std::to_string(state.dims.d));
  }
  const Temperatures temps = temperatures_at(config, std::max(0, state.epoch - 1));
  ForwardOptions opt = forward_options(config, temps);
  opt.with_query = false;
  ParamSet adapted;
  const ParamSet* params = &state.shared;
  if (state.mode != AblationMode::kAnalytical) {
    Rng graph_rng(seeds.graph);
    const Adjacency a = dag::sample_hard_adjacency(state.dag_params(temps), graph_rng);
    adapted = maml_adapt(state.shared, state.dims, task.support, a.cast<double>(), scope_for(state.mode),
                         config.maml_inner_steps, config.maml_inner_lr)
                  .params;
    params = &adapted;
  }
  diff::Tape tape;
  diff::BoundParams p(tape, *params, false);
  TaskForward f = forward_task(tape, p, state.dims, state.mode, task, opt, seeds);
  MetaTestResult r;
  r.logits = f.targets.logits.value();
  r.m_soft = f.targets.m_soft.value();
  r.m_hard = f.targets.m_hard;
  for (const Var& h : f.heads) r.heads.push_back(h.value());
  r.adjacency = f.graph.adjacency();
  return r;
}

}  // namespace metacd::train
