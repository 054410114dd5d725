#pragma once

// Additive-noise likelihood with a per-variable switch between an observational
// mechanism f_i and an interventional mechanism w_i^T h(.), both reading the
// parent-masked input A[:, i] o x. The interventional heads w_i are fitted per
// task in closed form by ridge regression on the support set.

#include <vector>

#include "metacd/diff/ops.hpp"
#include "metacd/diff/params.hpp"
#include "metacd/model.hpp"

namespace metacd::likelihood {

using diff::Matrix;
using diff::Var;

/// x o A[:, i]^T, broadcast over the rows of x.
inline Var masked_input(const Var& x, const Var& a, int i) {
  if (x.cols() != a.rows()) {
    throw ShapeError("masked_input: data " + diff::shape_str(x.value()) + " vs adjacency " +
                     diff::shape_str(a.value()));
  }
  return diff::hadamard(x, diff::transpose(diff::column(a, i)));
}

/// f_i(masked) as an N x 1 column.
inline Var obs_mechanism(const diff::BoundParams& p, const ModelDims& dims, int i, const Var& masked) {
  return nn::mlp_forward(p, names::obs(i), obs_spec(dims), masked);
}

/// h(masked) as N x feature_dim.
inline Var int_features(const diff::BoundParams& p, const ModelDims& dims, const Var& masked) {
  return nn::mlp_forward(p, names::kTrunk, trunk_spec(dims), masked);
}

/// Closed-form interventional heads for one task.
struct RidgeFit {
  std::vector<Var> weights;  // d entries, each feature_dim x 1
  std::vector<Var> design;   // d entries, each N_s x feature_dim
};

/// Solves min_w ||y_i - H_i w||^2 + lambda ||w||^2 for every variable with
/// H_i = h(A[:, i] o X_s), y_i = X_s[:, i]. The solve is recorded on the tape,
/// so gradients reach the feature extractor and the adjacency through H_i.
inline RidgeFit ridge_adapt(const diff::BoundParams& p, const ModelDims& dims, const Var& support, const Var& a,
                            double lambda) {
  if (support.rows() < 1) throw ShapeError("ridge_adapt: empty support");
  if (support.cols() != dims.d) throw ShapeError("ridge_adapt: support has wrong number of columns");
  RidgeFit fit;
  for (int i = 0; i < dims.d; ++i) {
    Var h = int_features(p, dims, masked_input(support, a, i));
    Var ht = diff::transpose(h);
    Var gram = diff::matmul(ht, h);
    Var rhs = diff::matmul(ht, diff::column(support, i));
    fit.weights.push_back(diff::solve_spd(gram, rhs, lambda));
    fit.design.push_back(h);
  }
  return fit;
}

/// Column i of a feature_dim x d head matrix, as feature_dim x 1 vectors.
inline std::vector<Var> split_heads(const Var& heads) {
  std::vector<Var> out;
  for (Eigen::Index i = 0; i < heads.cols(); ++i) out.push_back(diff::column(heads, i));
  return out;
}

/// Both mechanisms evaluated for every variable; each N x d.
struct MechanismOutputs {
  Var obs;
  Var intv;
};

/// `design` may carry precomputed h(A_i o data) (e.g. from ridge_adapt on the
/// same rows); otherwise it is evaluated here.
inline MechanismOutputs mechanisms(const diff::BoundParams& p, const ModelDims& dims, const Var& data, const Var& a,
                                   const std::vector<Var>& heads, const std::vector<Var>* design = nullptr) {
  if (data.cols() != dims.d) throw ShapeError("mechanisms: data has wrong number of columns");
  if (static_cast<int>(heads.size()) != dims.d) throw ShapeError("mechanisms: need one head per variable");
  std::vector<Var> obs_cols, int_cols;
  for (int i = 0; i < dims.d; ++i) {
    Var masked = masked_input(data, a, i);
    obs_cols.push_back(obs_mechanism(p, dims, i, masked));
    Var h = design ? (*design)[i] : int_features(p, dims, masked);
    int_cols.push_back(diff::matmul(h, heads[i]));
  }
  return {diff::concat_cols(obs_cols), diff::concat_cols(int_cols)};
}

/// (1 - m) o obs + m o intv with m a 1 x d row (hard, soft or straight-through).
inline Var combine(const MechanismOutputs& out, const Var& m) {
  return diff::add(out.obs, diff::hadamard(diff::sub(out.intv, out.obs), m));
}

struct BatchPrediction {
  MechanismOutputs parts;
  Var prediction;
  Var residual;
};

inline BatchPrediction batch_predict(const diff::BoundParams& p, const ModelDims& dims, const Var& data, const Var& a,
                                     const Var& m, const std::vector<Var>& heads,
                                     const std::vector<Var>* design = nullptr) {
  if (m.rows() != 1 || m.cols() != dims.d) throw ShapeError("batch_predict: mask must be 1 x d");
  BatchPrediction b;
  b.parts = mechanisms(p, dims, data, a, heads, design);
  b.prediction = combine(b.parts, m);
  b.residual = diff::sub(data, b.prediction);
  return b;
}

/// Prediction of x_i for a single 1 x d observation with switch value m_i.
inline Var predict(const diff::BoundParams& p, const ModelDims& dims, const Var& x, const Var& a, int i,
                   const Var& m_i, const Var& head_i) {
  if (x.rows() != 1 || x.cols() != dims.d) throw ShapeError("predict: x must be 1 x d");
  Var masked = masked_input(x, a, i);
  Var f = obs_mechanism(p, dims, i, masked);
  Var g = diff::matmul(int_features(p, dims, masked), head_i);
  return diff::add(f, diff::hadamard(diff::sub(g, f), m_i));
}

}  // namespace metacd::likelihood
