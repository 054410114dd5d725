#pragma once

// Differentiable primitives. Every function records exactly one tape node.

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "metacd/diff/tape.hpp"

namespace metacd::diff {

enum class Axis { kRows, kCols };

namespace detail {

// How the second operand of a binary elementwise op maps onto the first.
enum class Broadcast { kNone, kRow, kScalar };

inline Broadcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Matrix expand(const Matrix& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    case Broadcast::kScalar:
      return Matrix::Constant(rows, cols, b(0, 0));
    case Broadcast::kNone:
      break;
  }
  return b;
}

inline Matrix reduce(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kScalar:
      return Matrix::Constant(1, 1, g.sum());
    case Broadcast::kNone:
      break;
  }
  return g;
}

template <typename F, typename DF>
Var unary(const char* op, const Var& a, F f, DF df) {
  Matrix out = a.value().unaryExpr(f);
  const std::size_t ia = a.index();
  return a.tape().record(op, std::move(out), {a},
                         [ia, df](Tape& t, std::size_t self, const Matrix& g) {
                           const Matrix& x = t.value_at(ia);
                           const Matrix& y = t.value_at(self);
                           Matrix d(x.rows(), x.cols());
                           for (Eigen::Index k = 0; k < x.size(); ++k) d(k) = df(x(k), y(k));
                           t.accumulate(ia, g.cwiseProduct(d));
                         });
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record("matmul", a.value() * b.value(), {a, b},
                         [ia, ib](Tape& t, std::size_t, const Matrix& g) {
                           t.accumulate(ia, g * t.value_at(ib).transpose());
                           t.accumulate(ib, t.value_at(ia).transpose() * g);
                         });
}

/// a + b; b may be a 1 x cols row or a 1 x 1 scalar broadcast over a.
inline Var add(const Var& a, const Var& b) {
  const auto kind = detail::broadcast_kind("add", a.value(), b.value());
  Matrix out = a.value() + detail::expand(b.value(), kind, a.rows(), a.cols());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record("add", std::move(out), {a, b},
                         [ia, ib, kind](Tape& t, std::size_t, const Matrix& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, detail::reduce(g, kind));
                         });
}

inline Var sub(const Var& a, const Var& b) {
  const auto kind = detail::broadcast_kind("sub", a.value(), b.value());
  Matrix out = a.value() - detail::expand(b.value(), kind, a.rows(), a.cols());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record("sub", std::move(out), {a, b},
                         [ia, ib, kind](Tape& t, std::size_t, const Matrix& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, -detail::reduce(g, kind));
                         });
}

/// Elementwise product with the same broadcasting rules as add().
inline Var hadamard(const Var& a, const Var& b) {
  const auto kind = detail::broadcast_kind("hadamard", a.value(), b.value());
  Matrix bb = detail::expand(b.value(), kind, a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bb);
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record("hadamard", std::move(out), {a, b},
                         [ia, ib, kind](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& av = t.value_at(ia);
                           const Matrix& bv = t.value_at(ib);
                           t.accumulate(ia, g.cwiseProduct(detail::expand(bv, kind, av.rows(), av.cols())));
                           t.accumulate(ib, detail::reduce(g.cwiseProduct(av), kind));
                         });
}

inline Var scale(const Var& a, double c) {
  const std::size_t ia = a.index();
  return a.tape().record("scale", a.value() * c, {a},
                         [ia, c](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, g * c); });
}

inline Var add_scalar(const Var& a, double c) {
  const std::size_t ia = a.index();
  return a.tape().record("add_scalar", (a.value().array() + c).matrix(), {a},
                         [ia](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, g); });
}

inline Var transpose(const Var& a) {
  const std::size_t ia = a.index();
  return a.tape().record("transpose", a.value().transpose(), {a},
                         [ia](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

inline Var sum(const Var& a) {
  const std::size_t ia = a.index();
  return a.tape().record("sum", Matrix::Constant(1, 1, a.value().sum()), {a},
                         [ia](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& x = t.value_at(ia);
                           t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
                         });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean: empty operand");
  const std::size_t ia = a.index();
  return a.tape().record("mean", Matrix::Constant(1, 1, a.value().sum() / n), {a},
                         [ia, n](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& x = t.value_at(ia);
                           t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0) / n));
                         });
}

/// Column sums as a 1 x cols row.
inline Var sum_rows(const Var& a) {
  const std::size_t ia = a.index();
  return a.tape().record("sum_rows", a.value().colwise().sum(), {a},
                         [ia](Tape& t, std::size_t, const Matrix& g) {
                           t.accumulate(ia, g.replicate(t.value_at(ia).rows(), 1));
                         });
}

/// Column means as a 1 x cols row.
inline Var mean_rows(const Var& a) {
  const double n = static_cast<double>(a.rows());
  if (n == 0) throw ShapeError("mean_rows: no rows");
  const std::size_t ia = a.index();
  return a.tape().record("mean_rows", a.value().colwise().sum() / n, {a},
                         [ia, n](Tape& t, std::size_t, const Matrix& g) {
                           t.accumulate(ia, (g / n).replicate(t.value_at(ia).rows(), 1));
                         });
}

inline Var square(const Var& a) {
  return detail::unary("square", a, [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary("sqrt", a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}

inline Var exp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var tanh(const Var& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  return detail::unary("sigmoid", a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var reciprocal(const Var& a) {
  return detail::unary("reciprocal", a, [](double x) { return 1.0 / x; },
                       [](double, double y) { return -y * y; });
}

/// Clips into [lo, hi]; the gradient is zero where clipping is active.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

/// Softmax along `axis`: kCols normalizes each row, kRows each column.
inline Var softmax(const Var& a, Axis axis) {
  Matrix x = axis == Axis::kCols ? a.value() : Matrix(a.value().transpose());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    x.row(r) = (x.row(r).array() - m).exp().matrix();
    x.row(r) /= x.row(r).sum();
  }
  if (axis == Axis::kRows) x.transposeInPlace();
  const std::size_t ia = a.index();
  return a.tape().record("softmax", std::move(x), {a},
                         [ia, axis](Tape& t, std::size_t self, const Matrix& g) {
                           Matrix y = t.value_at(self);
                           Matrix gg = g;
                           if (axis == Axis::kRows) {
                             y.transposeInPlace();
                             gg.transposeInPlace();
                           }
                           Matrix d(y.rows(), y.cols());
                           for (Eigen::Index r = 0; r < y.rows(); ++r) {
                             const double dot = gg.row(r).dot(y.row(r));
                             d.row(r) = y.row(r).cwiseProduct((gg.row(r).array() - dot).matrix());
                           }
                           if (axis == Axis::kRows) d.transposeInPlace();
                           t.accumulate(ia, d);
                         });
}

/// Solves (M + lambda I) w = b by Cholesky. M must be symmetric and lambda > 0.
/// The adjoint uses the same factorisation: gb = (M + lambda I)^{-1} gw,
/// gM = -gb w^T.
inline Var solve_spd(const Var& m, const Var& b, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("solve_spd: ridge lambda must be > 0");
  if (m.rows() != m.cols()) throw ShapeError("solve_spd: matrix not square " + shape_str(m.value()));
  if (b.rows() != m.rows()) {
    throw ShapeError("solve_spd: rhs " + shape_str(b.value()) + " vs matrix " + shape_str(m.value()));
  }
  Matrix reg = m.value();
  reg.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(reg);
  if (llt.info() != Eigen::Success) throw NumericalError("solve_spd: matrix is not positive definite");
  Matrix w = llt.solve(b.value());
  const std::size_t im = m.index(), ib = b.index();
  return m.tape().record("solve_spd", std::move(w), {m, b},
                         [im, ib, lambda](Tape& t, std::size_t self, const Matrix& g) {
                           Matrix r = t.value_at(im);
                           r.diagonal().array() += lambda;
                           Eigen::LLT<Matrix> f(r);
                           Matrix gb = f.solve(g);
                           t.accumulate(ib, gb);
                           t.accumulate(im, -gb * t.value_at(self).transpose());
                         });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().value()) + " vs " +
                       shape_str(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> widths;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    idx.push_back(p.index());
    widths.push_back(p.cols());
  }
  return parts.front().tape().record("concat_cols", std::move(out), parts,
                                     [idx, widths](Tape& t, std::size_t, const Matrix& g) {
                                       Eigen::Index off = 0;
                                       for (std::size_t k = 0; k < idx.size(); ++k) {
                                         t.accumulate(idx[k], g.middleCols(off, widths[k]));
                                         off += widths[k];
                                       }
                                     });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().value()) + " vs " +
                       shape_str(p.value()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> heights;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    idx.push_back(p.index());
    heights.push_back(p.rows());
  }
  return parts.front().tape().record("concat_rows", std::move(out), parts,
                                     [idx, heights](Tape& t, std::size_t, const Matrix& g) {
                                       Eigen::Index off = 0;
                                       for (std::size_t k = 0; k < idx.size(); ++k) {
                                         t.accumulate(idx[k], g.middleRows(off, heights[k]));
                                         off += heights[k];
                                       }
                                     });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + shape_str(a.value()));
  }
  const std::size_t ia = a.index();
  return a.tape().record("slice_cols", a.value().middleCols(start, count), {a},
                         [ia, start, count](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& x = t.value_at(ia);
                           Matrix full = Matrix::Zero(x.rows(), x.cols());
                           full.middleCols(start, count) = g;
                           t.accumulate(ia, full);
                         });
}

inline Var column(const Var& a, Eigen::Index j) { return slice_cols(a, j, 1); }

/// Rows of `a` in the order given by `order` (a permutation or any selection).
inline Var gather_rows(const Var& a, const std::vector<Eigen::Index>& order) {
  Matrix out(static_cast<Eigen::Index>(order.size()), a.cols());
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (order[r] < 0 || order[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(order[r]);
  }
  const std::size_t ia = a.index();
  return a.tape().record("gather_rows", std::move(out), {a},
                         [ia, order](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& x = t.value_at(ia);
                           Matrix full = Matrix::Zero(x.rows(), x.cols());
                           for (std::size_t r = 0; r < order.size(); ++r) {
                             full.row(order[r]) += g.row(static_cast<Eigen::Index>(r));
                           }
                           t.accumulate(ia, full);
                         });
}

/// N x 1 column -> N x N matrix of squared differences (x_a - x_b)^2.
inline Var pairwise_sqdist(const Var& x) {
  if (x.cols() != 1) throw ShapeError("pairwise_sqdist: expects a column, got " + shape_str(x.value()));
  const Eigen::Index n = x.rows();
  const Matrix& v = x.value();
  Matrix out(n, n);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index a = 0; a < n; ++a) {
      const double diff = v(a, 0) - v(b, 0);
      out(a, b) = diff * diff;
    }
  const std::size_t ix = x.index();
  return x.tape().record("pairwise_sqdist", std::move(out), {x},
                         [ix](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& v = t.value_at(ix);
                           const Eigen::Index n = v.rows();
                           Matrix gs = g + g.transpose();
                           Matrix gx = Matrix::Zero(n, 1);
                           for (Eigen::Index a = 0; a < n; ++a) {
                             double acc = 0.0;
                             for (Eigen::Index b = 0; b < n; ++b) acc += 2.0 * (v(a, 0) - v(b, 0)) * gs(a, b);
                             gx(a, 0) = acc;
                           }
                           t.accumulate(ix, gx);
                         });
}

/// H K H with H = I - 11^T / N (double centering of a square matrix).
inline Var double_center(const Var& k) {
  if (k.rows() != k.cols()) throw ShapeError("double_center: not square " + shape_str(k.value()));
  auto center = [](const Matrix& m) {
    Matrix out = m;
    out.rowwise() -= m.colwise().mean();
    out.colwise() -= out.rowwise().mean();
    return out;
  };
  const std::size_t ik = k.index();
  return k.tape().record("double_center", center(k.value()), {k},
                         [ik, center](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ik, center(g)); });
}

/// Median over unordered pairs a < b of |x_a - x_b| for an N x 1 column
/// (average of the two middle values for an even pair count).
inline Var median_pairwise_distance(const Var& x) {
  if (x.cols() != 1 || x.rows() < 2) {
    throw ShapeError("median_pairwise_distance: expects a column with >= 2 rows, got " + shape_str(x.value()));
  }
  struct Pair {
    double dist;
    Eigen::Index a, b;
  };
  const Matrix& v = x.value();
  std::vector<Pair> pairs;
  for (Eigen::Index a = 0; a < v.rows(); ++a)
    for (Eigen::Index b = a + 1; b < v.rows(); ++b) pairs.push_back({std::abs(v(a, 0) - v(b, 0)), a, b});
  const std::size_t m = pairs.size();
  auto by_dist = [](const Pair& p, const Pair& q) {
    if (p.dist != q.dist) return p.dist < q.dist;
    return p.a != q.a ? p.a < q.a : p.b < q.b;
  };
  // The comparator is a strict total order, so the selected pairs are unique.
  std::nth_element(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(m / 2), pairs.end(), by_dist);
  std::vector<Pair> picked;
  if (m % 2 == 1) {
    picked = {pairs[m / 2]};
  } else {
    const auto lower = std::max_element(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(m / 2), by_dist);
    picked = {*lower, pairs[m / 2]};
  }
  double med = 0.0;
  for (const Pair& p : picked) med += p.dist;
  med /= static_cast<double>(picked.size());
  const std::size_t ix = x.index();
  return x.tape().record("median_pairwise_distance", Matrix::Constant(1, 1, med), {x},
                         [ix, picked](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& v = t.value_at(ix);
                           Matrix gx = Matrix::Zero(v.rows(), 1);
                           const double w = g(0, 0) / static_cast<double>(picked.size());
                           for (const Pair& p : picked) {
                             const double diff = v(p.a, 0) - v(p.b, 0);
                             const double s = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
                             gx(p.a, 0) += w * s;
                             gx(p.b, 0) -= w * s;
                           }
                           t.accumulate(ix, gx);
                         });
}

/// Forward value is `hard`; the adjoint passes to `soft` unchanged.
inline Var straight_through(const Var& soft, const Matrix& hard) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw ShapeError("straight_through: " + shape_str(soft.value()) + " vs " + shape_str(hard));
  }
  const std::size_t is = soft.index();
  return soft.tape().record("straight_through", hard, {soft},
                            [is](Tape& t, std::size_t, const Matrix& g) { t.accumulate(is, g); });
}

/// Same value, no gradient path.
inline Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

}  // namespace metacd::diff
