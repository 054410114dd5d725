#pragma once

#include <map>
#include <string>

#include "metacd/diff/tape.hpp"

namespace metacd::diff {

/// Named parameter arrays. Ordered by name so iteration (and anything
/// derived from it, like serialization) is deterministic.
using ParamSet = std::map<std::string, Matrix>;

/// Parameters placed on a tape as leaves.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const ParamSet& params, bool requires_grad = true) {
    for (const auto& [name, value] : params) vars_.emplace(name, tape.leaf(value, requires_grad));
  }

  const Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  void set(const std::string& name, Var v) { vars_[name] = v; }

  /// Adjoints of every bound leaf after tape.backward().
  ParamSet gradients(const Tape& tape) const {
    ParamSet out;
    for (const auto& [name, v] : vars_) out.emplace(name, tape.grad(v));
    return out;
  }

  auto begin() const { return vars_.begin(); }
  auto end() const { return vars_.end(); }

 private:
  std::map<std::string, Var> vars_;
};

inline std::size_t parameter_count(const ParamSet& p) {
  std::size_t n = 0;
  for (const auto& [_, m] : p) n += static_cast<std::size_t>(m.size());
  return n;
}

/// dst += scale * src over matching names. Names missing in dst are inserted.
inline void accumulate_into(ParamSet& dst, const ParamSet& src, double scale = 1.0) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, g * scale);
    } else {
      it->second += g * scale;
    }
  }
}

inline bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace metacd::diff
