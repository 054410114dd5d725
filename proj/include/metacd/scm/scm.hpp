#pragma once

// Ground-truth nonlinear additive-noise SCMs and interventional task generation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "metacd/error.hpp"
#include "metacd/graph.hpp"
#include "metacd/random.hpp"

namespace metacd::scm {

using Matrix = Eigen::MatrixXd;
using TargetVector = Eigen::VectorXi;

enum class InterventionKind { kHard, kSoft };

inline const char* to_string(InterventionKind k) { return k == InterventionKind::kHard ? "hard" : "soft"; }

inline InterventionKind parse_intervention_kind(const std::string& s) {
  if (s == "hard") return InterventionKind::kHard;
  if (s == "soft") return InterventionKind::kSoft;
  throw ConfigError("unknown intervention kind '" + s + "' (expected hard|soft)");
}

/// Random-Fourier-feature surrogate of a GP sample over the parent coordinates:
/// f(x) = sqrt(2 / F) * sum_k a_k cos(omega_k . x_pa + b_k).
struct Mechanism {
  std::vector<int> parents;
  Matrix omega;            // features x |parents|
  Eigen::VectorXd phase;   // features
  Eigen::VectorXd weight;  // features

  /// Evaluates on a full d-vector; only parent coordinates are read.
  double operator()(const Eigen::VectorXd& x) const {
    if (parents.empty()) return 0.0;
    const Eigen::Index f = weight.size();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < f; ++k) {
      double arg = phase(k);
      for (std::size_t p = 0; p < parents.size(); ++p) arg += omega(k, static_cast<Eigen::Index>(p)) * x(parents[p]);
      acc += weight(k) * std::cos(arg);
    }
    return std::sqrt(2.0 / static_cast<double>(f)) * acc;
  }
};

struct MechanismOptions {
  int features = 64;
  double length_scale = 1.0;
  double amplitude = 1.0;
  double noise_scale = 0.1;
};

struct GroundTruthScm {
  int d = 0;
  Adjacency adjacency;
  std::vector<Mechanism> mechanisms;
  Eigen::VectorXd noise_scale;
  std::vector<int> order;  // a topological order of adjacency
};

/// One experiment's data. Carries no ground truth: everything that performs
/// inference takes this type.
struct TaskData {
  int task_id = 0;
  Matrix support;  // N_s x d
  Matrix query;    // N_q x d, may have zero rows at meta-test
  bool is_meta_test = false;

  int d() const { return static_cast<int>(support.cols()); }
};

/// TaskData plus evaluation-only annotations.
struct TaskDataset {
  TaskData data;
  std::optional<TargetVector> true_targets;
};

/// Erdos-Renyi DAG over a random topological order. Each of the d(d-1)/2
/// admissible pairs is kept with p = min(1, 2 * rate / (d - 1)), so the
/// expected edge count is rate * d.
inline Adjacency sample_dag(int d, double expected_edges_per_node, Rng& rng) {
  if (d < 2) throw ConfigError("sample_dag: d must be >= 2");
  if (!(expected_edges_per_node >= 0.0)) throw ConfigError("sample_dag: edge rate must be >= 0");
  const double p = std::min(1.0, 2.0 * expected_edges_per_node / std::max(1, d - 1));
  std::vector<int> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Adjacency a = Adjacency::Zero(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = r + 1; c < d; ++c)
      if (uniform_open(rng) < p) a(perm[r], perm[c]) = 1;
  return a;
}

inline GroundTruthScm sample_mechanisms(const Adjacency& adjacency, Rng& rng,
                                        const MechanismOptions& opt = {}) {
  auto order = topological_order(adjacency);
  if (!order) throw ConfigError("sample_mechanisms: adjacency has a cycle");
  GroundTruthScm scm;
  scm.d = static_cast<int>(adjacency.rows());
  scm.adjacency = adjacency;
  scm.order = *order;
  scm.noise_scale = Eigen::VectorXd::Constant(scm.d, opt.noise_scale);
  for (int i = 0; i < scm.d; ++i) {
    Mechanism m;
    m.parents = parents_of(adjacency, i);
    const auto np = static_cast<Eigen::Index>(m.parents.size());
    m.omega = Matrix::Zero(opt.features, np);
    m.phase = Eigen::VectorXd::Zero(opt.features);
    m.weight = Eigen::VectorXd::Zero(opt.features);
    if (np > 0) {
      for (int k = 0; k < opt.features; ++k) {
        for (Eigen::Index p = 0; p < np; ++p) m.omega(k, p) = standard_normal(rng) / opt.length_scale;
        m.phase(k) = 6.283185307179586476925 * uniform_open(rng);
        m.weight(k) = opt.amplitude * standard_normal(rng);
      }
    }
    scm.mechanisms.push_back(std::move(m));
  }
  return scm;
}

struct InterventionOptions {
  double hard_mean = 2.0;
  double hard_sd = 1.0;
  double soft_shift = 2.0;
};

/// Ancestral sampling of n rows under the given targets.
inline Matrix simulate(const GroundTruthScm& scm, const TargetVector& targets, InterventionKind kind,
                       int n, Rng& rng, const InterventionOptions& iopt = {}) {
  if (targets.size() != scm.d) throw ShapeError("simulate: targets length differs from d");
  Matrix x = Matrix::Zero(n, scm.d);
  Eigen::VectorXd row(scm.d);
  for (int r = 0; r < n; ++r) {
    row.setZero();
    for (int i : scm.order) {
      if (targets(i) != 0 && kind == InterventionKind::kHard) {
        row(i) = normal(rng, iopt.hard_mean, iopt.hard_sd);
        continue;
      }
      double v = scm.mechanisms[i](row) + scm.noise_scale(i) * standard_normal(rng);
      if (targets(i) != 0) v += iopt.soft_shift;
      row(i) = v;
    }
    x.row(r) = row.transpose();
  }
  return x;
}

inline TaskDataset generate_task(const GroundTruthScm& scm, const TargetVector& targets, InterventionKind kind,
                                 int n_support, int n_query, Rng& rng, int task_id = 0,
                                 bool is_meta_test = false, const InterventionOptions& iopt = {}) {
  if (n_support < 1) throw ConfigError("generate_task: n_support must be >= 1");
  if (n_query < 0) throw ConfigError("generate_task: n_query must be >= 0");
  Matrix all = simulate(scm, targets, kind, n_support + n_query, rng, iopt);
  TaskDataset t;
  t.data.task_id = task_id;
  t.data.is_meta_test = is_meta_test;
  t.data.support = all.topRows(n_support);
  t.data.query = all.bottomRows(n_query);
  t.true_targets = targets;
  return t;
}

struct CollectionOptions {
  int d = 10;
  double expected_edges_per_node = 1.0;
  int n_train = 20;
  int n_test = 20;
  int n_support = 10;
  int n_query = 100;
  int test_support = 10;
  int targets_per_task = 1;
  double observational_fraction = 0.1;
  InterventionKind kind = InterventionKind::kHard;
  MechanismOptions mechanism;
  InterventionOptions intervention;
};

struct Collection {
  int d = 0;
  std::vector<TaskDataset> tasks;
  std::optional<Adjacency> true_adjacency;
  std::uint64_t seed = 0;
  std::string kind = "hard";

  std::vector<TaskDataset> train() const {
    std::vector<TaskDataset> out;
    for (const auto& t : tasks)
      if (!t.data.is_meta_test) out.push_back(t);
    return out;
  }
  std::vector<TaskDataset> test() const {
    std::vector<TaskDataset> out;
    for (const auto& t : tasks)
      if (t.data.is_meta_test) out.push_back(t);
    return out;
  }
};

/// `count` distinct targets drawn uniformly (count may be 0).
inline TargetVector sample_targets(int d, int count, Rng& rng) {
  TargetVector m = TargetVector::Zero(d);
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (int k = 0; k < std::min(count, d); ++k) m(idx[k]) = 1;
  return m;
}

/// Training tasks get ids 0..n_train-1, meta-test tasks follow. Within each
/// phase the first round(observational_fraction * n) tasks are observational.
inline Collection generate_collection(const CollectionOptions& opt, std::uint64_t seed) {
  if (opt.targets_per_task < 0 || opt.targets_per_task > 3) {
    throw ConfigError("targets_per_task must be in [0, 3]");
  }
  if (opt.observational_fraction < 0.0 || opt.observational_fraction > 1.0) {
    throw ConfigError("observational_fraction must be in [0, 1]");
  }
  Rng graph_rng(derive_seed(seed, 1));
  Collection c;
  c.d = opt.d;
  c.seed = seed;
  c.kind = to_string(opt.kind);
  const Adjacency a = sample_dag(opt.d, opt.expected_edges_per_node, graph_rng);
  const GroundTruthScm scm = sample_mechanisms(a, graph_rng, opt.mechanism);
  c.true_adjacency = a;
  int id = 0;
  for (int phase = 0; phase < 2; ++phase) {
    const bool test = phase == 1;
    const int n = test ? opt.n_test : opt.n_train;
    const int n_obs = static_cast<int>(std::lround(opt.observational_fraction * n));
    for (int k = 0; k < n; ++k, ++id) {
      Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(id)));
      const TargetVector m = sample_targets(opt.d, k < n_obs ? 0 : opt.targets_per_task, rng);
      c.tasks.push_back(generate_task(scm, m, opt.kind, test ? opt.test_support : opt.n_support,
                                      test ? 0 : opt.n_query, rng, id, test, opt.intervention));
    }
  }
  return c;
}

}  // namespace metacd::scm
