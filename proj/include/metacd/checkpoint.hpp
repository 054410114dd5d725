#pragma once

// Checkpoint layout: <dir>/manifest.json names every array with its shape and
// offset into <dir>/params.bin (raw little-endian float64), so round trips are
// bit exact.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "metacd/trainer.hpp"

namespace metacd::ckpt {

namespace fs = std::filesystem;
using diff::Matrix;

inline constexpr const char* kCheckpointFormat = "metacd-checkpoint/1";

static_assert(std::endian::native == std::endian::little, "params.bin is written in host order");

/// FNV-1a over raw bytes; used as an integrity digest, not for security.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

struct Blob {
  std::string bytes;
  nlohmann::json arrays = nlohmann::json::array();

  void put(const std::string& name, const Matrix& m) {
    // Column-major, matching Eigen's storage.
    arrays.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", bytes.size()}});
    bytes.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
};

}  // namespace detail

/// Writes manifest.json and params.bin. `extra` is stored verbatim under
/// "config" (may be null).
inline void save(const train::ModelState& s, const fs::path& dir, const nlohmann::json& extra = nullptr) {
  fs::create_directories(dir);
  detail::Blob blob;
  for (const auto& [name, m] : s.shared) blob.put("param/" + name, m);
  for (const auto& [name, m] : s.optimizer.m) blob.put("adam.m/" + name, m);
  for (const auto& [name, m] : s.optimizer.v) blob.put("adam.v/" + name, m);
  if (!s.standardizer.empty()) {
    blob.put("standardizer/mean", s.standardizer.mean);
    blob.put("standardizer/scale", s.standardizer.scale);
  }
  nlohmann::json man;
  man["format"] = kCheckpointFormat;
  man["mode"] = to_string(s.mode);
  man["dims"] = {{"d", s.dims.d}, {"hidden", s.dims.hidden}, {"feature_dim", s.dims.feature_dim},
                 {"embed_dim", s.dims.embed_dim}};
  man["epoch"] = s.epoch;
  man["seed"] = s.seed;
  man["optimizer"] = {{"step", s.optimizer.step}, {"beta1", s.optimizer.beta1}, {"beta2", s.optimizer.beta2},
                      {"eps", s.optimizer.eps}};
  man["standardizer_fallback_columns"] = s.standardizer.fallback_columns;
  man["arrays"] = blob.arrays;
  man["params_bytes"] = blob.bytes.size();
  man["params_fnv1a"] = hex64(fnv1a(blob.bytes));
  man["config"] = extra;
  {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "params.bin").string());
    out.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
    if (!out) throw IoError("short write to " + (dir / "params.bin").string());
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << man.dump(2) << '\n';
}

inline nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  try {
    nlohmann::json man = nlohmann::json::parse(in);
    if (man.value("format", std::string()) != kCheckpointFormat) {
      throw IoError((dir / "manifest.json").string() + ": not a " + kCheckpointFormat + " manifest");
    }
    return man;
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
}

inline train::ModelState load(const fs::path& dir) {
  const nlohmann::json man = read_manifest(dir);
  std::ifstream in(dir / "params.bin", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "params.bin").string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  train::ModelState s;
  try {
    if (bytes.size() != man.at("params_bytes").get<std::size_t>() ||
        hex64(fnv1a(bytes)) != man.at("params_fnv1a").get<std::string>()) {
      throw IoError((dir / "params.bin").string() + ": size or digest does not match the manifest");
    }
    s.mode = parse_ablation_mode(man.at("mode").get<std::string>());
    const auto& d = man.at("dims");
    s.dims = {d.at("d").get<int>(), d.at("hidden").get<int>(), d.at("feature_dim").get<int>(),
              d.at("embed_dim").get<int>()};
    s.epoch = man.at("epoch").get<int>();
    s.seed = man.at("seed").get<std::uint64_t>();
    const auto& o = man.at("optimizer");
    s.optimizer.step = o.at("step").get<long>();
    s.optimizer.beta1 = o.at("beta1").get<double>();
    s.optimizer.beta2 = o.at("beta2").get<double>();
    s.optimizer.eps = o.at("eps").get<double>();
    s.standardizer.fallback_columns = man.value("standardizer_fallback_columns", std::vector<int>{});
    for (const auto& a : man.at("arrays")) {
      const std::string name = a.at("name").get<std::string>();
      const auto rows = a.at("rows").get<Eigen::Index>(), cols = a.at("cols").get<Eigen::Index>();
      const auto offset = a.at("offset").get<std::size_t>();
      const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
      if (rows < 0 || cols < 0 || offset + n > bytes.size()) throw IoError("checkpoint array '" + name + "' out of range");
      Matrix m(rows, cols);
      std::memcpy(m.data(), bytes.data() + offset, n);
      const auto slash = name.find('/');
      const std::string kind = name.substr(0, slash), key = name.substr(slash + 1);
      if (kind == "param") {
        s.shared[key] = m;
      } else if (kind == "adam.m") {
        s.optimizer.m[key] = m;
      } else if (kind == "adam.v") {
        s.optimizer.v[key] = m;
      } else if (name == "standardizer/mean") {
        s.standardizer.mean = m;
      } else if (name == "standardizer/scale") {
        s.standardizer.scale = m;
      } else {
        throw IoError("checkpoint array '" + name + "' has an unknown kind");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  // Every expected parameter present with the expected shape.
  Rng probe(0);
  const diff::ParamSet ref = init_shared(s.dims, s.mode, probe);
  for (const auto& [name, m] : ref) {
    auto it = s.shared.find(name);
    if (it == s.shared.end()) throw IoError("checkpoint lacks parameter '" + name + "'");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw IoError("checkpoint parameter '" + name + "' has shape " + diff::shape_str(it->second) + ", expected " +
                    diff::shape_str(m));
    }
  }
  if (s.shared.size() != ref.size()) throw IoError("checkpoint has parameters the model does not define");
  return s;
}

}  // namespace metacd::ckpt
