#pragma once

// Graph and intervention-target evaluation. Undefined rank metrics (one class
// missing) are std::nullopt, never a number.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "metacd/error.hpp"
#include "metacd/graph.hpp"

namespace metacd::metrics {

/// Structural Hamming distance: one unit per unordered pair whose edge state
/// (absent, i->j, j->i) differs, so a reversal costs 1.
inline int shd(const Adjacency& a, const Adjacency& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols()) {
    throw ShapeError("shd: adjacency shapes differ");
  }
  int n = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.cols(); ++j)
      if ((a(i, j) != 0) != (b(i, j) != 0) || (a(j, i) != 0) != (b(j, i) != 0)) ++n;
  return n;
}

inline constexpr int kMaxSidNodes = 20;

namespace detail {

using NodeSet = std::vector<bool>;

inline NodeSet descendants_of(const Adjacency& reach, int v) {
  NodeSet out(static_cast<std::size_t>(reach.rows()), false);
  out[static_cast<std::size_t>(v)] = true;
  for (Eigen::Index k = 0; k < reach.cols(); ++k)
    if (reach(v, k)) out[static_cast<std::size_t>(k)] = true;
  return out;
}

/// x and y d-separated by z in the DAG g: moralise the ancestral subgraph of
/// {x, y} u z, delete z, test connectivity.
inline bool d_separated(const Adjacency& g, int x, int y, const NodeSet& z) {
  const int d = static_cast<int>(g.rows());
  NodeSet anc(static_cast<std::size_t>(d), false);
  std::vector<int> stack;
  auto push = [&](int v) {
    if (!anc[static_cast<std::size_t>(v)]) {
      anc[static_cast<std::size_t>(v)] = true;
      stack.push_back(v);
    }
  };
  push(x);
  push(y);
  for (int v = 0; v < d; ++v)
    if (z[static_cast<std::size_t>(v)]) push(v);
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int p = 0; p < d; ++p)
      if (g(p, v)) push(p);
  }
  Adjacency moral = Adjacency::Zero(d, d);
  for (int v = 0; v < d; ++v) {
    if (!anc[static_cast<std::size_t>(v)]) continue;
    std::vector<int> parents;
    for (int p = 0; p < d; ++p)
      if (g(p, v) && anc[static_cast<std::size_t>(p)]) parents.push_back(p);
    for (int p : parents) moral(p, v) = moral(v, p) = 1;
    for (std::size_t a = 0; a < parents.size(); ++a)
      for (std::size_t b = a + 1; b < parents.size(); ++b) moral(parents[a], parents[b]) = moral(parents[b], parents[a]) = 1;
  }
  NodeSet seen(static_cast<std::size_t>(d), false);
  seen[static_cast<std::size_t>(x)] = true;
  stack = {x};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (v == y) return false;
    for (int w = 0; w < d; ++w) {
      if (moral(v, w) && anc[static_cast<std::size_t>(w)] && !z[static_cast<std::size_t>(w)] &&
          !seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = true;
        stack.push_back(w);
      }
    }
  }
  return true;
}

/// Whether z is a valid adjustment set for the effect of i on j in the DAG g
/// (generalised back-door criterion).
inline bool valid_adjustment(const Adjacency& g, const Adjacency& reach, int i, int j, const NodeSet& z) {
  const int d = static_cast<int>(g.rows());
  // Nodes other than i on a directed path i -> ... -> j.
  NodeSet on_path(static_cast<std::size_t>(d), false);
  for (int w = 0; w < d; ++w)
    if (w != i && reach(i, w) && (w == j || reach(w, j))) on_path[static_cast<std::size_t>(w)] = true;
  for (int w = 0; w < d; ++w) {
    if (!on_path[static_cast<std::size_t>(w)]) continue;
    const NodeSet forb = descendants_of(reach, w);
    for (int v = 0; v < d; ++v)
      if (z[static_cast<std::size_t>(v)] && forb[static_cast<std::size_t>(v)]) return false;
  }
  Adjacency backdoor = g;
  for (int c = 0; c < d; ++c)
    if (g(i, c) && on_path[static_cast<std::size_t>(c)]) backdoor(i, c) = 0;
  return d_separated(backdoor, i, j, z);
}

}  // namespace detail

/// Structural intervention distance: ordered pairs (i, j), i != j, whose
/// interventional distribution p(x_j | do(x_i)) is wrongly inferred when
/// adjusting for the estimated parents of i.
inline int sid(const Adjacency& estimated, const Adjacency& truth) {
  if (estimated.rows() != truth.rows() || estimated.cols() != truth.cols() || truth.rows() != truth.cols()) {
    throw ShapeError("sid: adjacency shapes differ");
  }
  const int d = static_cast<int>(truth.rows());
  if (d > kMaxSidNodes) throw ConfigError("sid: d=" + std::to_string(d) + " exceeds the limit of 20 nodes");
  if (!is_acyclic(truth)) throw ConfigError("sid: true graph is cyclic");
  if (!is_acyclic(estimated)) throw ConfigError("sid: estimated graph is cyclic");
  const Adjacency reach = reachability(truth);
  int errors = 0;
  for (int i = 0; i < d; ++i) {
    detail::NodeSet z(static_cast<std::size_t>(d), false);
    for (int p = 0; p < d; ++p) z[static_cast<std::size_t>(p)] = estimated(p, i) != 0;
    for (int j = 0; j < d; ++j) {
      if (j == i) continue;
      const bool ok = z[static_cast<std::size_t>(j)] ? !reach(i, j) : detail::valid_adjustment(truth, reach, i, j, z);
      if (!ok) ++errors;
    }
  }
  return errors;
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks.
inline std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e + 1 < n && scores[idx[e + 1]] == scores[idx[k]]) ++e;
    const double midrank = 0.5 * static_cast<double>(k + e) + 1.0;
    for (std::size_t r = k; r <= e; ++r)
      if (labels[idx[r]] != 0) rank_sum += midrank;
    k = e + 1;
  }
  for (int l : labels) pos += l != 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Average precision: sum over distinct score thresholds (descending) of
/// (recall gain) x precision. Tied scores form a single threshold.
inline std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auprc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  if (pos == 0) return std::nullopt;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e + 1 < n && scores[idx[e + 1]] == scores[idx[k]]) ++e;
    for (std::size_t r = k; r <= e; ++r) tp += labels[idx[r]] != 0;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(e + 1);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    k = e + 1;
  }
  return ap;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample sd / sqrt(n); 0 for n = 1
};

inline MeanSe mean_se(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("mean_se: empty sample");
  MeanSe r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return r;
}

/// Monte-Carlo mean of SHD over posterior samples.
inline MeanSe e_shd(const std::vector<Adjacency>& samples, const Adjacency& truth) {
  std::vector<double> v;
  for (const auto& s : samples) v.push_back(shd(s, truth));
  return mean_se(v);
}

inline MeanSe e_sid(const std::vector<Adjacency>& samples, const Adjacency& truth) {
  std::vector<double> v;
  for (const auto& s : samples) v.push_back(sid(s, truth));
  return mean_se(v);
}

/// Off-diagonal entries of a score matrix and of a 0/1 adjacency, row-major.
inline std::pair<std::vector<double>, std::vector<int>> edge_scores(const Eigen::MatrixXd& probs,
                                                                   const Adjacency& truth) {
  std::pair<std::vector<double>, std::vector<int>> out;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (i == j) continue;
      out.first.push_back(probs(i, j));
      out.second.push_back(truth(i, j) != 0 ? 1 : 0);
    }
  return out;
}

/// Fraction of label permutations whose AUROC reaches `observed`, plus the
/// requested quantile of that null distribution.
struct PermutationNull {
  double p_value = 1.0;
  double quantile = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

template <typename Rng>
PermutationNull auroc_permutation_null(const std::vector<double>& scores, std::vector<int> labels, double observed,
                                       int permutations, double q, Rng& rng) {
  if (permutations < 1) throw ConfigError("auroc_permutation_null: permutations must be >= 1");
  std::vector<double> null;
  int at_least = 0;
  for (int k = 0; k < permutations; ++k) {
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto a = auroc(scores, labels);
    if (!a) throw ConfigError("auroc_permutation_null: single-class labels");
    null.push_back(*a);
    if (*a >= observed) ++at_least;
  }
  std::sort(null.begin(), null.end());
  PermutationNull r;
  r.p_value = (1.0 + at_least) / (1.0 + permutations);
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(permutations))) - 1;
  r.quantile = null[std::min(k, null.size() - 1)];
  const MeanSe ms = mean_se(null);
  r.mean = ms.mean;
  r.sd = ms.se * std::sqrt(static_cast<double>(null.size()));
  return r;
}

}  // namespace metacd::metrics
