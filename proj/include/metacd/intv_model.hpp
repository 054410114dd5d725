#pragma once

// Intervention-target predictor: support set -> feature matrix C (N x 9d) ->
// permutation-invariant Deep-Sets pooling F (2k) -> logits zeta (d) ->
// binary Gumbel-Softmax mask.

#include <algorithm>
#include <numeric>
#include <vector>

#include "metacd/diff/ops.hpp"
#include "metacd/likelihood.hpp"
#include "metacd/model.hpp"
#include "metacd/random.hpp"

namespace metacd::intv {

using diff::Matrix;
using diff::Var;

/// Row indices of `m` in lexicographic order (ties keep index order).
inline std::vector<Eigen::Index> lexicographic_row_order(const Matrix& m) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(a, c) != m(b, c)) return m(a, c) < m(b, c);
    }
    return false;
  });
  return idx;
}

/// Rows of `m` in lexicographic order. Any row permutation of the input maps
/// to the same output bit for bit.
inline Matrix canonical_rows(const Matrix& m) {
  const auto order = lexicographic_row_order(m);
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < order.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(order[r]);
  return out;
}

/// Column mean and sample standard deviation, summed in sorted order so the
/// result does not depend on row order. The deviation is zero when N = 1.
inline std::pair<Matrix, Matrix> column_moments(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix mu(1, x.cols()), sd = Matrix::Zero(1, x.cols());
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) buf[static_cast<std::size_t>(r)] = x(r, c);
    std::sort(buf.begin(), buf.end());
    double s = 0.0;
    for (double v : buf) s += v;
    mu(0, c) = s / static_cast<double>(n);
    if (n > 1) {
      for (auto& v : buf) v = (v - mu(0, c)) * (v - mu(0, c));
      std::sort(buf.begin(), buf.end());
      double ss = 0.0;
      for (double v : buf) ss += v;
      sd(0, c) = std::sqrt(ss / static_cast<double>(n - 1));
    }
  }
  return {mu, sd};
}

/// C = [D, X_obs, D - X_obs, (D - X_obs)^2, X_int, D - X_int, (D - X_int)^2, mu(D), sd(D)].
inline Var build_features(const Var& support, const Var& x_obs, const Var& x_int) {
  if (support.rows() < 1) throw ShapeError("build_features: empty support");
  if (x_obs.rows() != support.rows() || x_obs.cols() != support.cols() || x_int.rows() != support.rows() ||
      x_int.cols() != support.cols()) {
    throw ShapeError("build_features: prediction blocks " + diff::shape_str(x_obs.value()) + ", " +
                     diff::shape_str(x_int.value()) + " vs support " + diff::shape_str(support.value()));
  }
  diff::Tape& t = support.tape();
  const auto [mu, sd] = column_moments(support.value());
  const Eigen::Index n = support.rows();
  Var r_obs = diff::sub(support, x_obs);
  Var r_int = diff::sub(support, x_int);
  return diff::concat_cols({support, x_obs, r_obs, diff::square(r_obs), x_int, r_int, diff::square(r_int),
                            t.constant(mu.replicate(n, 1)), t.constant(sd.replicate(n, 1))});
}

/// Features from the likelihood model directly: mechanisms evaluated on the
/// support under adjacency `a` with the given interventional heads.
inline Var build_features(const diff::BoundParams& p, const ModelDims& dims, const Var& support, const Var& a,
                          const std::vector<Var>& heads, const std::vector<Var>* design = nullptr) {
  const likelihood::MechanismOutputs out = likelihood::mechanisms(p, dims, support, a, heads, design);
  return build_features(support, out.obs, out.intv);
}

/// F = [mean_n h(c_n), h(mean_n c_n)]. Rows are put in canonical order first,
/// so F is bitwise invariant to row permutations of C.
inline Var pool(const diff::BoundParams& p, const ModelDims& dims, const Var& c) {
  if (c.rows() < 1) throw ShapeError("pool: empty feature matrix");
  if (c.cols() != 9 * dims.d) throw ShapeError("pool: expected 9d columns, got " + diff::shape_str(c.value()));
  Var sorted = diff::gather_rows(c, lexicographic_row_order(c.value()));
  const nn::MlpSpec spec = pool_spec(dims);
  Var z_me = diff::mean_rows(nn::mlp_forward(p, names::kPool, spec, sorted));
  Var z_em = nn::mlp_forward(p, names::kPool, spec, diff::mean_rows(sorted));
  return diff::concat_cols({z_me, z_em});
}

inline Var target_logits(const diff::BoundParams& p, const ModelDims& dims, const Var& f) {
  if (f.rows() != 1 || f.cols() != 2 * dims.embed_dim) {
    throw ShapeError("target_logits: expected 1 x 2k input, got " + diff::shape_str(f.value()));
  }
  return nn::mlp_forward(p, names::kLogit, logit_spec(dims), f);
}

struct InterventionSample {
  Var logits;    // 1 x d
  Var m_soft;    // 1 x d, in (0, 1)
  Matrix m_hard; // 1 x d, 0/1
  Var m;         // straight-through or relaxed, what the likelihood consumes
};

/// Per-coordinate binary Gumbel-Softmax at temperature tau.
inline InterventionSample sample_targets(const Var& logits, double tau, Rng& rng, bool straight_through = true) {
  if (!(tau > 0.0)) throw ConfigError("sample_targets: temperature must be > 0");
  if (!logits.value().allFinite()) throw NumericalError("sample_targets: non-finite logits");
  const Eigen::Index d = logits.cols();
  Matrix noise(1, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double g1 = standard_gumbel(rng);
    const double g0 = standard_gumbel(rng);
    noise(0, j) = g1 - g0;
  }
  InterventionSample s;
  s.logits = logits;
  s.m_soft = diff::sigmoid(diff::scale(diff::add(logits, logits.tape().constant(noise)), 1.0 / tau));
  s.m_hard = (s.m_soft.value().array() > 0.5).cast<double>().matrix();
  s.m = straight_through ? diff::straight_through(s.m_soft, s.m_hard) : s.m_soft;
  return s;
}

}  // namespace metacd::intv
