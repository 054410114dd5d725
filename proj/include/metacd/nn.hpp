#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "metacd/diff/ops.hpp"
#include "metacd/diff/params.hpp"
#include "metacd/random.hpp"

namespace metacd::nn {

using diff::Matrix;
using diff::Var;

/// Fully connected tanh network. Parameters live under `<prefix>.W<k>` (in x out)
/// and `<prefix>.b<k>` (1 x out).
struct MlpSpec {
  int in = 0;
  std::vector<int> hidden;
  int out = 0;
  bool activate_output = false;

  std::vector<int> widths() const {
    std::vector<int> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
  }
};

inline std::string weight_name(const std::string& prefix, std::size_t k) { return prefix + ".W" + std::to_string(k); }
inline std::string bias_name(const std::string& prefix, std::size_t k) { return prefix + ".b" + std::to_string(k); }

/// Glorot-uniform weights, zero biases.
inline void init_mlp(diff::ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  const auto w = spec.widths();
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w[k] + w[k + 1]));
    Matrix W(w[k], w[k + 1]);
    for (Eigen::Index i = 0; i < W.size(); ++i) W(i) = limit * (2.0 * uniform_open(rng) - 1.0);
    params[weight_name(prefix, k)] = W;
    params[bias_name(prefix, k)] = Matrix::Zero(1, w[k + 1]);
  }
}

inline Var mlp_forward(const diff::BoundParams& p, const std::string& prefix, const MlpSpec& spec, const Var& x) {
  const std::size_t layers = spec.hidden.size() + 1;
  Var h = x;
  for (std::size_t k = 0; k < layers; ++k) {
    h = diff::add(diff::matmul(h, p[weight_name(prefix, k)]), p[bias_name(prefix, k)]);
    if (k + 1 < layers || spec.activate_output) h = diff::tanh(h);
  }
  return h;
}

}  // namespace metacd::nn
