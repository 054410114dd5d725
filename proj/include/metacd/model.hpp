#pragma once

// Parameter layout of the joint model. Every task-shared array lives in one
// ParamSet under a fixed name; task-specific ridge heads are never stored.

#include <string>
#include <vector>

#include "metacd/diff/params.hpp"
#include "metacd/error.hpp"
#include "metacd/nn.hpp"
#include "metacd/random.hpp"

namespace metacd {

enum class AblationMode { kAnalytical, kIntvMaml, kFullMaml };

inline const char* to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kAnalytical:
      return "analytical";
    case AblationMode::kIntvMaml:
      return "intv-maml";
    case AblationMode::kFullMaml:
      return "full-maml";
  }
  return "?";
}

inline AblationMode parse_ablation_mode(const std::string& s) {
  if (s == "analytical") return AblationMode::kAnalytical;
  if (s == "intv-maml") return AblationMode::kIntvMaml;
  if (s == "full-maml") return AblationMode::kFullMaml;
  throw ConfigError("unknown mode '" + s + "' (expected analytical|intv-maml|full-maml)");
}

struct ModelDims {
  int d = 10;
  int hidden = 64;      // width of every hidden layer
  int feature_dim = 32; // output of the interventional feature extractor
  int embed_dim = 32;   // Deep-Sets embedding size
};

namespace names {
inline const std::string kEdgeLogits = "dag.phi";
inline const std::string kOrderScores = "dag.psi";
inline const std::string kTrunk = "int.trunk";
inline const std::string kHeads = "int.heads";  // feature_dim x d, MAML initialisation only
inline const std::string kPool = "pool";
inline const std::string kLogit = "logit";
inline std::string obs(int i) { return "obs." + std::to_string(i); }
}  // namespace names

inline nn::MlpSpec obs_spec(const ModelDims& m) { return {m.d, {m.hidden, m.hidden}, 1, false}; }
inline nn::MlpSpec trunk_spec(const ModelDims& m) { return {m.d, {m.hidden, m.hidden}, m.feature_dim, true}; }
inline nn::MlpSpec pool_spec(const ModelDims& m) { return {9 * m.d, {m.hidden, m.hidden}, m.embed_dim, false}; }
inline nn::MlpSpec logit_spec(const ModelDims& m) { return {2 * m.embed_dim, {m.hidden, m.hidden}, m.d, false}; }

/// Parameter groups of the task-shared set, keyed by role.
enum class ParamGroup { kEdgeLogits, kOrderScores, kLogitNet, kPoolNet, kObsMechanisms, kIntTrunk, kIntHeads };

inline ParamGroup group_of(const std::string& name) {
  using diff::starts_with;
  if (name == names::kEdgeLogits) return ParamGroup::kEdgeLogits;
  if (name == names::kOrderScores) return ParamGroup::kOrderScores;
  if (starts_with(name, names::kLogit + ".")) return ParamGroup::kLogitNet;
  if (starts_with(name, names::kPool + ".")) return ParamGroup::kPoolNet;
  if (starts_with(name, "obs.")) return ParamGroup::kObsMechanisms;
  if (starts_with(name, names::kTrunk + ".")) return ParamGroup::kIntTrunk;
  if (name == names::kHeads) return ParamGroup::kIntHeads;
  throw Error("parameter '" + name + "' belongs to no group");
}

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEdgeLogits:
      return "edge_logits";
    case ParamGroup::kOrderScores:
      return "order_scores";
    case ParamGroup::kLogitNet:
      return "logit_net";
    case ParamGroup::kPoolNet:
      return "pool_net";
    case ParamGroup::kObsMechanisms:
      return "obs_mechanisms";
    case ParamGroup::kIntTrunk:
      return "int_trunk";
    case ParamGroup::kIntHeads:
      return "int_heads";
  }
  return "?";
}

inline std::vector<std::string> names_in_group(const diff::ParamSet& p, ParamGroup g) {
  std::vector<std::string> out;
  for (const auto& [name, _] : p)
    if (group_of(name) == g) out.push_back(name);
  return out;
}

/// Untrained shared parameters. Edge logits and order scores start at zero,
/// i.e. every admissible edge at probability 1/2 under a uniform ordering.
inline diff::ParamSet init_shared(const ModelDims& dims, AblationMode mode, Rng& rng) {
  if (dims.d < 1) throw ConfigError("model d must be >= 1");
  diff::ParamSet p;
  p[names::kEdgeLogits] = diff::Matrix::Zero(dims.d, dims.d);
  p[names::kOrderScores] = diff::Matrix::Zero(1, dims.d);
  for (int i = 0; i < dims.d; ++i) nn::init_mlp(p, names::obs(i), obs_spec(dims), rng);
  nn::init_mlp(p, names::kTrunk, trunk_spec(dims), rng);
  nn::init_mlp(p, names::kPool, pool_spec(dims), rng);
  nn::init_mlp(p, names::kLogit, logit_spec(dims), rng);
  if (mode != AblationMode::kAnalytical) {
    diff::Matrix heads(dims.feature_dim, dims.d);
    const double limit = std::sqrt(6.0 / (dims.feature_dim + 1.0));
    for (Eigen::Index k = 0; k < heads.size(); ++k) heads(k) = limit * (2.0 * uniform_open(rng) - 1.0);
    p[names::kHeads] = heads;
  }
  return p;
}

}  // namespace metacd
