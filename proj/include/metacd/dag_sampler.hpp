#pragma once

// Differentiable DAG posterior: A = Pi^T U Pi with U strictly upper triangular
// (binary Gumbel-Softmax per entry) and Pi a permutation (Gumbel-Top-k over
// order scores, relaxed row by row with a masked softmax).

#include <algorithm>
#include <numeric>
#include <vector>

#include "metacd/diff/ops.hpp"
#include "metacd/graph.hpp"
#include "metacd/random.hpp"

namespace metacd::dag {

using diff::Matrix;
using diff::Var;

/// Host-side copy of the posterior parameters. Only the strict upper triangle
/// of edge_logits is read.
struct DagPosteriorParams {
  Matrix edge_logits;   // d x d
  Matrix order_scores;  // 1 x d
  double temperature_u = 1.0;
  double temperature_pi = 1.0;

  int d() const { return static_cast<int>(edge_logits.rows()); }
};

struct UpperSample {
  Matrix hard;
  Var soft;
};

struct PermutationSample {
  Matrix hard;
  Var soft;
  std::vector<int> order;  // order[r] = node placed at rank r
};

struct DagSample {
  Matrix u_hard, pi_hard, a_hard;
  Var u_soft, pi_soft, a_soft;
  /// What downstream code consumes: a_hard in the forward pass with a_soft's
  /// gradient (straight-through), or a_soft itself when relaxed.
  Var a;

  Adjacency adjacency() const { return a_hard.cast<int>(); }
};

inline Matrix strict_upper_mask(int d) {
  Matrix m = Matrix::Zero(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = r + 1; c < d; ++c) m(r, c) = 1.0;
  return m;
}

inline Matrix off_diagonal_mask(int d) {
  Matrix m = Matrix::Ones(d, d);
  m.diagonal().setZero();
  return m;
}

/// Logistic noise g1 - g0 for each strict-upper entry, drawn row-major.
inline Matrix upper_noise(int d, Rng& rng) {
  Matrix n = Matrix::Zero(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = r + 1; c < d; ++c) {
      const double g1 = standard_gumbel(rng);
      const double g0 = standard_gumbel(rng);
      n(r, c) = g1 - g0;
    }
  return n;
}

inline Matrix order_noise(int d, Rng& rng) {
  Matrix n(1, d);
  for (int j = 0; j < d; ++j) n(0, j) = standard_gumbel(rng);
  return n;
}

/// Indices sorted by score, descending; ties go to the lower index.
inline std::vector<int> argsort_desc(const Matrix& scores) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores(a) > scores(b); });
  return idx;
}

inline UpperSample sample_upper(const Var& phi, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw ConfigError("sample_upper: temperature must be > 0");
  const int d = static_cast<int>(phi.rows());
  diff::Tape& t = phi.tape();
  const Matrix mask = strict_upper_mask(d);
  Var z = diff::scale(diff::add(phi, t.constant(upper_noise(d, rng))), 1.0 / tau);
  Var soft = diff::hadamard(diff::sigmoid(z), t.constant(mask));
  Matrix hard = ((soft.value().array() > 0.5).cast<double>() * mask.array()).matrix();
  return {std::move(hard), soft};
}

inline PermutationSample sample_permutation(const Var& psi, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw ConfigError("sample_permutation: temperature must be > 0");
  const int d = static_cast<int>(psi.cols());
  diff::Tape& t = psi.tape();
  Var s = diff::add(psi, t.constant(order_noise(d, rng)));
  const std::vector<int> order = argsort_desc(s.value());
  Var z = diff::scale(s, 1.0 / tau);
  std::vector<Var> rows;
  rows.reserve(d);
  Matrix taken = Matrix::Zero(1, d);
  Matrix hard = Matrix::Zero(d, d);
  for (int r = 0; r < d; ++r) {
    rows.push_back(diff::softmax(diff::add(z, t.constant(taken)), diff::Axis::kCols));
    hard(r, order[r]) = 1.0;
    taken(0, order[r]) = -1e30;
  }
  return {std::move(hard), diff::concat_rows(rows), order};
}

/// Composes both samplers. With straight_through = false the relaxed
/// adjacency is used everywhere (finite-difference checks need a smooth path).
inline DagSample sample_adjacency(const Var& phi, const Var& psi, double tau_u, double tau_pi, Rng& rng,
                                  bool straight_through = true) {
  const int d = static_cast<int>(phi.rows());
  diff::Tape& t = phi.tape();
  UpperSample u = sample_upper(phi, tau_u, rng);
  PermutationSample p = sample_permutation(psi, tau_pi, rng);
  DagSample s;
  s.u_hard = u.hard;
  s.pi_hard = p.hard;
  s.a_hard = p.hard.transpose() * u.hard * p.hard;
  s.u_soft = u.soft;
  s.pi_soft = p.soft;
  Var a = diff::matmul(diff::matmul(diff::transpose(p.soft), u.soft), p.soft);
  s.a_soft = diff::hadamard(a, t.constant(off_diagonal_mask(d)));
  s.a = straight_through ? diff::straight_through(s.a_soft, s.a_hard) : s.a_soft;
  return s;
}

/// Hard sample without a tape.
inline Adjacency sample_hard_adjacency(const DagPosteriorParams& params, Rng& rng) {
  const int d = params.d();
  const Matrix noise = upper_noise(d, rng);
  Matrix u = Matrix::Zero(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = r + 1; c < d; ++c) {
      const double z = (params.edge_logits(r, c) + noise(r, c)) / params.temperature_u;
      u(r, c) = diff::sigmoid_value(z) > 0.5 ? 1.0 : 0.0;
    }
  const Matrix scores = params.order_scores + order_noise(d, rng);
  const std::vector<int> order = argsort_desc(scores);
  Adjacency a = Adjacency::Zero(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = r + 1; c < d; ++c)
      if (u(r, c) != 0.0) a(order[r], order[c]) = 1;
  return a;
}

/// Monte-Carlo edge marginals from hard samples; diagonal is zero.
inline Matrix edge_probabilities(const DagPosteriorParams& params, int n_samples, Rng& rng) {
  if (n_samples < 1) throw ConfigError("edge_probabilities: n_samples must be >= 1");
  const int d = params.d();
  Matrix acc = Matrix::Zero(d, d);
  for (int k = 0; k < n_samples; ++k) acc += sample_hard_adjacency(params, rng).cast<double>();
  return acc / static_cast<double>(n_samples);
}

}  // namespace metacd::dag
