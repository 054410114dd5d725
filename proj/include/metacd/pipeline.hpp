#pragma once

// Batch stages behind the command-line driver: generate, train, adapt,
// evaluate and the multi-simulation run. Every stage is a pure function of
// its config and inputs; outputs carry no timestamps except the training log.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "metacd/checkpoint.hpp"
#include "metacd/config.hpp"
#include "metacd/evaluation.hpp"
#include "metacd/scm/dataset_io.hpp"
#include "metacd/trainer.hpp"

namespace metacd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

/// FNV-1a over (file name, contents) of every regular file, by name.
inline std::string directory_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    acc += f.filename().string();
    acc += '\0';
    acc += ckpt::hex64(ckpt::fnv1a(bytes));
  }
  return ckpt::hex64(ckpt::fnv1a(acc));
}

inline bool is_dataset_file(const fs::path& p) {
  const std::string n = p.filename().string();
  return n == "meta.json" || n == "adjacency.csv" ||
         ((n.rfind("task_", 0) == 0 || n.rfind("targets_", 0) == 0) && p.extension() == ".csv");
}

// ---------------------------------------------------------------------------
// generate

/// Writes a synthetic collection to `dir` and returns its digest. A non-empty
/// directory is refused unless `force`; with `force` only dataset files are
/// replaced.
inline std::string generate(const config::ExperimentConfig& cfg, const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force)");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_dataset_file(e.path())) fs::remove(e.path());
  }
  const scm::Collection c = scm::generate_collection(cfg.data, cfg.seed);
  scm::save_tasks(c, dir);
  return directory_digest(dir);
}

// ---------------------------------------------------------------------------
// train

inline std::vector<scm::TaskData> inference_view(const std::vector<scm::TaskDataset>& tasks) {
  std::vector<scm::TaskData> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(t.data);
  return out;
}

inline json epoch_json(const train::EpochRecord& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks)
    tasks.push_back({{"task", t.task_id}, {"recon", t.recon}, {"intv", t.intv}, {"hsic", t.hsic}, {"objective", t.objective}});
  return {{"epoch", r.epoch},
          {"mode", to_string(r.mode)},
          {"recon", r.recon},
          {"intv", r.intv},
          {"hsic", r.hsic},
          {"graph", r.graph},
          {"total", r.total},
          {"tau_u", r.temps.u},
          {"tau_pi", r.temps.pi},
          {"tau_m", r.temps.m},
          {"wall_seconds", r.wall_seconds},
          {"tasks", tasks}};
}

struct TrainResult {
  train::ModelState state;
  std::vector<train::EpochRecord> records;
  fs::path checkpoint;
};

/// Trains on the meta-training tasks of `data` until cfg.train.epochs total
/// epochs. Writes <out>/train_log.jsonl (appended on resume), intermediate
/// checkpoints under <out>/checkpoints/epoch_<n> and the final one at
/// <out>/checkpoint.
inline TrainResult train(const config::ExperimentConfig& cfg, const scm::Collection& data, const fs::path& out,
                         const std::optional<fs::path>& resume = std::nullopt, std::ostream* progress = nullptr) {
  cfg.train.validate();
  if (data.d != cfg.data.d) {
    throw ShapeError("dataset has d=" + std::to_string(data.d) + ", config has d=" + std::to_string(cfg.data.d));
  }
  const std::vector<scm::TaskData> raw = inference_view(data.train());
  if (raw.empty()) throw ConfigError("dataset has no meta-training tasks");
  for (const auto& t : raw)
    if (t.query.rows() < 4) throw ConfigError("task " + std::to_string(t.task_id) + " has fewer than 4 query rows");

  TrainResult res;
  if (resume) {
    res.state = ckpt::load(*resume);
    if (res.state.dims.d != data.d) throw ShapeError("checkpoint d does not match the dataset");
    if (res.state.mode != cfg.train.mode) throw ConfigError("checkpoint mode differs from train.mode");
  } else {
    ModelDims dims = cfg.model;
    dims.d = data.d;
    res.state = train::init_model(dims, cfg.train.mode, cfg.seed);
    if (cfg.train.standardize) {
      res.state.standardizer = train::fit_standardizer(raw);
      if (progress) {
        for (int c : res.state.standardizer.fallback_columns)
          *progress << "warning: variable " << c << " has zero variance; left unscaled\n";
      }
    }
  }
  std::vector<scm::TaskData> tasks;
  for (const auto& t : raw) tasks.push_back(res.state.standardizer.apply(t));

  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out / "train_log.jsonl").string());
  const json echo = config::experiment_echo(cfg);
  while (res.state.epoch < cfg.train.epochs) {
    train::EpochRecord r = train::train_epoch(res.state, tasks, cfg.train);
    log << epoch_json(r).dump() << '\n';
    log.flush();
    if (progress && (r.epoch % 50 == 0 || res.state.epoch == cfg.train.epochs)) {
      *progress << "epoch " << r.epoch << " total " << r.total << " recon " << r.recon << '\n';
    }
    if (res.state.epoch % cfg.checkpoint_every == 0 && res.state.epoch < cfg.train.epochs) {
      ckpt::save(res.state, out / "checkpoints" / ("epoch_" + std::to_string(res.state.epoch)), echo);
    }
    res.records.push_back(std::move(r));
  }
  res.checkpoint = out / "checkpoint";
  ckpt::save(res.state, res.checkpoint, echo);
  return res;
}

// ---------------------------------------------------------------------------
// adapt / evaluate

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json("undefined"); }

/// Target scores for every meta-test task; needs no ground truth.
inline json adapt(const config::ExperimentConfig& cfg, const train::ModelState& state, const scm::Collection& data) {
  if (state.dims.d != data.d) throw ShapeError("checkpoint d does not match the dataset");
  json tasks = json::array();
  for (const auto& t : data.test()) {
    tasks.push_back({{"task", t.data.task_id},
                     {"scores", eval::target_scores(state, t.data, cfg.train, cfg.eval.intv_samples, cfg.eval.seed)}});
  }
  return {{"mode", to_string(state.mode)}, {"seed", cfg.eval.seed}, {"tasks", tasks}};
}

inline json report_json(const eval::EvalReport& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks) tasks.push_back({{"task", t.task_id}, {"scores", t.scores}, {"labels", t.labels}});
  json probs = json::array();
  for (Eigen::Index i = 0; i < r.edge_probabilities.rows(); ++i) {
    std::vector<double> row(r.edge_probabilities.cols());
    for (Eigen::Index j = 0; j < r.edge_probabilities.cols(); ++j) row[j] = r.edge_probabilities(i, j);
    probs.push_back(row);
  }
  json j = {{"d", r.d},
            {"e_shd", r.e_shd.mean},
            {"e_shd_se", r.e_shd.se},
            {"graph_auroc", optional_json(r.graph_auroc)},
            {"graph_auprc", optional_json(r.graph_auprc)},
            {"intv_auroc", optional_json(r.intv_auroc)},
            {"intv_auprc", optional_json(r.intv_auprc)},
            {"n_posterior_samples", r.n_posterior_samples},
            {"intv_samples", r.intv_samples},
            {"seed", r.seed},
            {"edge_probabilities", probs},
            {"tasks", tasks}};
  j["e_sid"] = r.e_sid ? json(r.e_sid->mean) : json("undefined");
  j["e_sid_se"] = r.e_sid ? json(r.e_sid->se) : json("undefined");
  return j;
}

/// Evaluation report with config echo and input digests.
inline json evaluate(const config::ExperimentConfig& cfg, const train::ModelState& state, const scm::Collection& data,
                     const std::string& checkpoint_digest, const std::string& dataset_digest) {
  if (state.dims.d != data.d) {
    throw ShapeError("checkpoint has d=" + std::to_string(state.dims.d) + ", dataset has d=" + std::to_string(data.d));
  }
  const eval::EvalReport r = eval::evaluate(state, data.test(), data.true_adjacency, cfg.train, cfg.eval);
  json j = report_json(r);
  j["mode"] = to_string(state.mode);
  j["epochs_trained"] = state.epoch;
  j["checkpoint_digest"] = checkpoint_digest;
  j["dataset_digest"] = dataset_digest;
  j["config"] = config::experiment_echo(cfg);
  return j;
}

inline void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// run

inline constexpr const char* kSummaryMetrics[] = {"e_shd", "e_sid", "graph_auroc", "graph_auprc", "intv_auroc",
                                                  "intv_auprc"};

/// Mean and sample standard deviation of each metric over the reports;
/// undefined entries are skipped and counted.
inline json summarize_reports(const std::vector<json>& reports) {
  json out;
  for (const char* key : kSummaryMetrics) {
    std::vector<double> v;
    for (const auto& r : reports)
      if (r.contains(key) && r.at(key).is_number()) v.push_back(r.at(key).get<double>());
    json entry = {{"n", v.size()}, {"undefined", reports.size() - v.size()}, {"values", v}};
    if (!v.empty()) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      entry["mean"] = mean;
      entry["std"] = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    }
    out[key] = entry;
  }
  return out;
}

/// generate -> train -> evaluate for n_simulations seeds (seed, seed+1, ...).
/// Writes <out>/sim_<k>/{data,train,report.json} and <out>/summary.json.
inline json run(const config::ExperimentConfig& base, const fs::path& out, bool force, std::ostream* progress = nullptr) {
  std::vector<json> reports;
  for (int k = 0; k < base.n_simulations; ++k) {
    config::ExperimentConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(k);
    cfg.eval.seed = cfg.seed;
    const fs::path sim = out / ("sim_" + std::to_string(k));
    if (progress) *progress << "simulation " << k << " (seed " << cfg.seed << ")\n";
    scm::Collection data;
    std::string data_digest;
    if (cfg.dataset_path) {
      data = scm::load_tasks(*cfg.dataset_path);
      data_digest = directory_digest(*cfg.dataset_path);
    } else {
      data_digest = generate(cfg, sim / "data", force);
      data = scm::load_tasks(sim / "data");
    }
    if (fs::exists(sim / "train") && !fs::is_empty(sim / "train") && !force) {
      throw ConfigError("output directory " + (sim / "train").string() + " is not empty (use --force)");
    }
    const TrainResult tr = train(cfg, data, sim / "train", std::nullopt, progress);
    const json report = evaluate(cfg, tr.state, data, directory_digest(tr.checkpoint), data_digest);
    write_json(sim / "report.json", report);
    reports.push_back(report);
  }
  json summary = {{"n_simulations", base.n_simulations}, {"base_seed", base.seed}, {"metrics", summarize_reports(reports)}};
  write_json(out / "summary.json", summary);
  return summary;
}

}  // namespace metacd::pipeline
