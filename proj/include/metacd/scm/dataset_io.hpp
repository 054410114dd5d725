#pragma once

// On-disk task collections:
//   <dir>/meta.json         {"format", "d", "seed", "kind", "tasks": [{"id", "meta_test"}...]}
//   <dir>/task_<t>.csv      header x_1..x_d,split ; split is support|query
//   <dir>/targets_<t>.csv   optional, a single 0/1 row of length d
//   <dir>/adjacency.csv     optional ground-truth graph, d rows of 0/1
// Floats are written with 17 significant digits so a round trip is lossless.

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metacd/scm/scm.hpp"

namespace metacd::scm {

namespace fs = std::filesystem;

inline constexpr const char* kDatasetFormat = "metacd-tasks/1";

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

inline double parse_cell(const std::string& cell, const fs::path& file, int line) {
  if (cell.empty()) throw IoError(file.string() + ":" + std::to_string(line) + ": empty cell");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || errno == ERANGE) {
    throw IoError(file.string() + ":" + std::to_string(line) + ": non-numeric cell '" + cell + "'");
  }
  return v;
}

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out) throw IoError("write failed for " + p.string());
}

}  // namespace detail

inline std::string task_csv(const TaskData& t) {
  std::ostringstream os;
  const int d = t.d();
  for (int j = 0; j < d; ++j) os << "x_" << (j + 1) << ',';
  os << "split\n";
  auto emit = [&](const Matrix& m, const char* tag) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (int j = 0; j < d; ++j) os << format_double(m(r, j)) << ',';
      os << tag << '\n';
    }
  };
  emit(t.support, "support");
  emit(t.query, "query");
  return os.str();
}

inline TaskData parse_task_csv(const fs::path& file, int expected_d) {
  const auto lines = detail::read_lines(file);
  if (lines.empty()) throw IoError(file.string() + ":1: missing header");
  const auto header = detail::split_csv(lines[0]);
  const int d = static_cast<int>(header.size()) - 1;
  if (d < 1 || header.back() != "split") throw IoError(file.string() + ":1: malformed header");
  for (int j = 0; j < d; ++j) {
    if (header[j] != "x_" + std::to_string(j + 1)) {
      throw IoError(file.string() + ":1: malformed header, expected x_" + std::to_string(j + 1));
    }
  }
  if (expected_d > 0 && d != expected_d) {
    throw IoError(file.string() + ":1: has d=" + std::to_string(d) + ", collection has d=" +
                  std::to_string(expected_d));
  }
  std::vector<Eigen::RowVectorXd> sup, qry;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const int lineno = static_cast<int>(k) + 1;
    if (lines[k].empty()) continue;
    const auto cells = detail::split_csv(lines[k]);
    if (static_cast<int>(cells.size()) != d + 1) {
      throw IoError(file.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(d + 1) +
                    " cells, found " + std::to_string(cells.size()));
    }
    Eigen::RowVectorXd row(d);
    for (int j = 0; j < d; ++j) row(j) = detail::parse_cell(cells[j], file, lineno);
    if (cells[d] == "support") {
      sup.push_back(row);
    } else if (cells[d] == "query") {
      qry.push_back(row);
    } else {
      throw IoError(file.string() + ":" + std::to_string(lineno) + ": split must be support|query");
    }
  }
  TaskData t;
  t.support.resize(static_cast<Eigen::Index>(sup.size()), d);
  t.query.resize(static_cast<Eigen::Index>(qry.size()), d);
  for (std::size_t r = 0; r < sup.size(); ++r) t.support.row(static_cast<Eigen::Index>(r)) = sup[r];
  for (std::size_t r = 0; r < qry.size(); ++r) t.query.row(static_cast<Eigen::Index>(r)) = qry[r];
  if (t.support.rows() < 1) throw IoError(file.string() + ": no support rows");
  return t;
}

inline std::string int_matrix_csv(const Adjacency& a) {
  std::ostringstream os;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) os << (c ? "," : "") << a(r, c);
    os << '\n';
  }
  return os.str();
}

inline Adjacency parse_int_matrix(const fs::path& file, int rows, int cols) {
  const auto lines = detail::read_lines(file);
  Adjacency a(rows, cols);
  int r = 0;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (lines[k].empty()) continue;
    const int lineno = static_cast<int>(k) + 1;
    if (r >= rows) throw IoError(file.string() + ":" + std::to_string(lineno) + ": too many rows");
    const auto cells = detail::split_csv(lines[k]);
    if (static_cast<int>(cells.size()) != cols) {
      throw IoError(file.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                    " cells, found " + std::to_string(cells.size()));
    }
    for (int c = 0; c < cols; ++c) {
      const double v = detail::parse_cell(cells[c], file, lineno);
      if (v != 0.0 && v != 1.0) throw IoError(file.string() + ":" + std::to_string(lineno) + ": expected 0/1");
      a(r, c) = static_cast<int>(v);
    }
    ++r;
  }
  if (r != rows) throw IoError(file.string() + ": expected " + std::to_string(rows) + " rows");
  return a;
}

inline nlohmann::json collection_meta(const Collection& c) {
  nlohmann::json meta;
  meta["format"] = kDatasetFormat;
  meta["d"] = c.d;
  meta["seed"] = c.seed;
  meta["kind"] = c.kind;
  int n_train = 0, n_test = 0;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"id", t.data.task_id}, {"meta_test", t.data.is_meta_test}});
    (t.data.is_meta_test ? n_test : n_train)++;
  }
  meta["T"] = n_train;
  meta["T_test"] = n_test;
  meta["tasks"] = tasks;
  return meta;
}

inline void save_tasks(const Collection& c, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& t : c.tasks) {
    if (t.data.d() != c.d) throw ShapeError("save_tasks: task " + std::to_string(t.data.task_id) + " has wrong d");
    const std::string id = std::to_string(t.data.task_id);
    detail::write_file(dir / ("task_" + id + ".csv"), task_csv(t.data));
    if (t.true_targets) {
      std::ostringstream os;
      for (int j = 0; j < c.d; ++j) os << (j ? "," : "") << (*t.true_targets)(j);
      os << '\n';
      detail::write_file(dir / ("targets_" + id + ".csv"), os.str());
    }
  }
  if (c.true_adjacency) detail::write_file(dir / "adjacency.csv", int_matrix_csv(*c.true_adjacency));
  detail::write_file(dir / "meta.json", collection_meta(c).dump(2) + "\n");
}

inline Collection load_tasks(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": malformed header: " + e.what());
  }
  Collection c;
  try {
    c.d = meta.at("d").get<int>();
    c.seed = meta.value("seed", std::uint64_t{0});
    c.kind = meta.value("kind", std::string("unknown"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": malformed header: " + e.what());
  }
  if (c.d < 1) throw IoError(meta_path.string() + ": d must be >= 1");

  std::vector<std::pair<int, bool>> entries;
  if (meta.contains("tasks")) {
    for (const auto& e : meta.at("tasks")) entries.emplace_back(e.at("id").get<int>(), e.value("meta_test", false));
  } else {
    // Bare exports: every task_<t>.csv in the directory is a training task.
    for (const auto& f : fs::directory_iterator(dir)) {
      const std::string name = f.path().filename().string();
      if (name.rfind("task_", 0) == 0 && f.path().extension() == ".csv") {
        entries.emplace_back(std::stoi(name.substr(5, name.size() - 9)), false);
      }
    }
    std::sort(entries.begin(), entries.end());
  }
  for (const auto& [id, test] : entries) {
    const std::string sid = std::to_string(id);
    TaskDataset t;
    t.data = parse_task_csv(dir / ("task_" + sid + ".csv"), c.d);
    t.data.task_id = id;
    t.data.is_meta_test = test;
    const fs::path tp = dir / ("targets_" + sid + ".csv");
    if (fs::exists(tp)) {
      const Adjacency row = parse_int_matrix(tp, 1, c.d);
      t.true_targets = TargetVector(row.row(0).transpose());
    }
    c.tasks.push_back(std::move(t));
  }
  if (fs::exists(dir / "adjacency.csv")) c.true_adjacency = parse_int_matrix(dir / "adjacency.csv", c.d, c.d);
  return c;
}

}  // namespace metacd::scm
