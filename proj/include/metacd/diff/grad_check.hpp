#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "metacd/diff/params.hpp"

namespace metacd::diff {

/// Builds a scalar loss on a fresh tape. Must be deterministic for a given
/// tape seed: any noise has to come from tape.rng().
using LossBuilder = std::function<Var(Tape&, const BoundParams&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

inline double evaluate_loss(const LossBuilder& f, const ParamSet& theta, std::uint64_t seed) {
  Tape tape(seed);
  BoundParams bound(tape, theta, false);
  return f(tape, bound).scalar();
}

inline ParamSet analytic_gradient(const LossBuilder& f, const ParamSet& theta, std::uint64_t seed) {
  Tape tape(seed);
  BoundParams bound(tape, theta, true);
  Var loss = f(tape, bound);
  tape.backward(loss);
  return bound.gradients(tape);
}

/// Compares reverse-mode gradients with central differences, coordinate by
/// coordinate: max |analytic - numeric| / (|numeric| + 1e-8).
/// `names` restricts the check to a subset of parameter arrays (empty = all).
inline GradCheckReport finite_diff_check(const LossBuilder& f, const ParamSet& theta, double step,
                                         const std::vector<std::string>& names = {},
                                         std::uint64_t seed = 0) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be > 0");
  const ParamSet grads = analytic_gradient(f, theta, seed);
  GradCheckReport report;
  ParamSet probe = theta;
  for (auto& [name, value] : probe) {
    if (!names.empty() && std::find(names.begin(), names.end(), name) == names.end()) continue;
    const Matrix& g = grads.at(name);
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      const double orig = value(k);
      value(k) = orig + step;
      const double up = evaluate_loss(f, probe, seed);
      value(k) = orig - step;
      const double down = evaluate_loss(f, probe, seed);
      value(k) = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("finite_diff_check: non-finite loss when perturbing " + name + "[" +
                             std::to_string(k) + "]");
      }
      const double numeric = (up - down) / (2.0 * step);
      const double rel = std::abs(g(k) - numeric) / (std::abs(numeric) + 1e-8);
      ++report.coordinates;
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = k;
        report.worst_analytic = g(k);
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace metacd::diff
