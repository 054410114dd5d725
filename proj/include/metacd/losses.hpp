#pragma once

// Training objective: per-task reconstruction, intervention sparsity and
// residual-independence terms plus one graph-sparsity term.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "metacd/dag_sampler.hpp"
#include "metacd/diff/ops.hpp"
#include "metacd/random.hpp"

namespace metacd::losses {

using diff::Matrix;
using diff::Var;

enum class BandwidthMode { kMedian, kFixed };

struct LossWeights {
  double lambda_i = 0.01;
  double lambda_h = 0.1;
  double lambda_g = 0.1;
  BandwidthMode hsic_bandwidth_mode = BandwidthMode::kMedian;
  double hsic_fixed_bandwidth = 1.0;
  int hsic_max_rows = 128;
  double graph_prior_p = 0.1;

  void validate() const {
    if (lambda_i < 0 || lambda_h < 0 || lambda_g < 0) throw ConfigError("loss weights must be >= 0");
    if (!(graph_prior_p > 0.0 && graph_prior_p < 1.0)) throw ConfigError("graph_prior_p must be in (0, 1)");
    if (!(hsic_fixed_bandwidth > 0.0)) throw ConfigError("hsic_fixed_bandwidth must be > 0");
    if (hsic_max_rows < 4) throw ConfigError("hsic_max_rows must be >= 4");
  }
};

/// Mean of squared residuals over all N * d entries.
inline Var recon_loss(const Var& data, const Var& prediction) {
  if (data.rows() != prediction.rows() || data.cols() != prediction.cols()) {
    throw ShapeError("recon_loss: " + diff::shape_str(data.value()) + " vs " + diff::shape_str(prediction.value()));
  }
  return diff::mean(diff::square(diff::sub(data, prediction)));
}

/// Mean of sigmoid(zeta): an l1 penalty on the implied target probabilities.
inline Var intv_sparsity(const Var& logits) { return diff::mean(diff::sigmoid(logits)); }

/// Centred Gaussian Gram matrix of one residual column.
inline Var centered_kernel(const Var& col, const LossWeights& w) {
  Var d2 = diff::pairwise_sqdist(col);
  diff::Tape& t = col.tape();
  Var sigma;
  if (w.hsic_bandwidth_mode == BandwidthMode::kFixed) {
    sigma = t.constant(Matrix::Constant(1, 1, w.hsic_fixed_bandwidth));
  } else {
    sigma = diff::median_pairwise_distance(col);
    if (sigma.scalar() <= 0.0) sigma = t.constant(Matrix::Constant(1, 1, 1.0));
  }
  Var coef = diff::scale(diff::reciprocal(diff::square(sigma)), -0.5);
  return diff::double_center(diff::exp(diff::hadamard(d2, coef)));
}

/// Biased HSIC estimate (1/N^2) tr(K_i H K_j H) averaged over all unordered
/// variable pairs. With more than hsic_max_rows rows a random subset is used
/// (drawn from `rng`, or the leading rows when no rng is given).
inline Var hsic_residual(const Var& residuals, const LossWeights& w, Rng* rng = nullptr) {
  if (residuals.rows() < 4) throw ShapeError("hsic_residual: needs at least 4 rows");
  const Eigen::Index d = residuals.cols();
  Var r = residuals;
  if (residuals.rows() > w.hsic_max_rows) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(residuals.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (rng) std::shuffle(idx.begin(), idx.end(), *rng);
    idx.resize(static_cast<std::size_t>(w.hsic_max_rows));
    std::sort(idx.begin(), idx.end());
    r = diff::gather_rows(residuals, idx);
  }
  diff::Tape& t = residuals.tape();
  if (d < 2) return t.constant(Matrix::Zero(1, 1));
  const double n = static_cast<double>(r.rows());
  std::vector<Var> kernels;
  for (Eigen::Index j = 0; j < d; ++j) kernels.push_back(centered_kernel(diff::column(r, j), w));
  std::vector<Var> terms;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j) terms.push_back(diff::sum(diff::hadamard(kernels[i], kernels[j])));
  const double pairs = static_cast<double>(terms.size());
  return diff::scale(diff::sum(diff::concat_cols(terms)), 1.0 / (n * n * pairs));
}

/// Mean over off-diagonal entries of KL(Bernoulli(p_ij) || Bernoulli(p0)),
/// with p clipped to [1e-6, 1 - 1e-6].
inline Var graph_sparsity(const Var& probs, double prior_p) {
  if (probs.rows() != probs.cols()) throw ShapeError("graph_sparsity: probabilities must be square");
  if (!(prior_p > 0.0 && prior_p < 1.0)) throw ConfigError("graph_sparsity: prior must be in (0, 1)");
  const int d = static_cast<int>(probs.rows());
  diff::Tape& t = probs.tape();
  if (d < 2) return t.constant(Matrix::Zero(1, 1));
  Var p = diff::clamp(probs, 1e-6, 1.0 - 1e-6);
  Var q = diff::add_scalar(diff::scale(p, -1.0), 1.0);
  Var kl = diff::add(diff::hadamard(p, diff::add_scalar(diff::log(p), -std::log(prior_p))),
                     diff::hadamard(q, diff::add_scalar(diff::log(q), -std::log(1.0 - prior_p))));
  Var masked = diff::hadamard(kl, t.constant(dag::off_diagonal_mask(d)));
  return diff::scale(diff::sum(masked), 1.0 / (static_cast<double>(d) * (d - 1)));
}

/// Edge probabilities as the mean of `samples` relaxed adjacency draws.
inline Var soft_edge_probabilities(const Var& phi, const Var& psi, double tau_u, double tau_pi, int samples,
                                   Rng& rng) {
  if (samples < 1) throw ConfigError("soft_edge_probabilities: samples must be >= 1");
  Var acc;
  for (int s = 0; s < samples; ++s) {
    Var a = dag::sample_adjacency(phi, psi, tau_u, tau_pi, rng, false).a_soft;
    acc = s == 0 ? a : diff::add(acc, a);
  }
  return diff::scale(acc, 1.0 / samples);
}

struct TaskLosses {
  int task_id = 0;
  Var recon;
  Var intv;
  Var hsic;
};

inline void require_finite(const Var& v, const char* component, int task_id) {
  if (!std::isfinite(v.scalar())) {
    throw NumericalError(std::string("non-finite ") + component + " loss" +
                         (task_id >= 0 ? " in task " + std::to_string(task_id) : std::string()));
  }
}

/// Evaluates one loss component. The tape rejects non-finite intermediates at
/// the offending op; this adds which component and task it happened in.
template <typename F>
Var component(const char* name, int task_id, F&& compute) {
  Var v;
  try {
    v = compute();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("non-finite ") + name + " loss in task " + std::to_string(task_id) + " (" +
                         e.what() + ")");
  }
  require_finite(v, name, task_id);
  return v;
}

/// L_R,t + lambda_I L_I,t + lambda_H L_H,t for one task.
inline Var task_objective(const TaskLosses& l, const LossWeights& w) {
  require_finite(l.recon, "reconstruction", l.task_id);
  require_finite(l.intv, "intervention-sparsity", l.task_id);
  require_finite(l.hsic, "hsic", l.task_id);
  return diff::add(diff::add(l.recon, diff::scale(l.intv, w.lambda_i)), diff::scale(l.hsic, w.lambda_h));
}

/// (1/T) sum_t (L_R,t + lambda_I L_I,t + lambda_H L_H,t) + lambda_G L_G.
inline Var total_loss(const std::vector<TaskLosses>& tasks, const Var& graph, const LossWeights& w) {
  if (tasks.empty()) throw ConfigError("total_loss: no tasks");
  require_finite(graph, "graph-sparsity", -1);
  Var acc;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    Var obj = task_objective(tasks[k], w);
    acc = k == 0 ? obj : diff::add(acc, obj);
  }
  return diff::add(diff::scale(acc, 1.0 / static_cast<double>(tasks.size())), diff::scale(graph, w.lambda_g));
}

}  // namespace metacd::losses
