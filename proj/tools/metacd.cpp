// Command-line driver. Exit codes: 0 success, 2 configuration or input
// error, 3 numerical failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "cli_options.hpp"
#include "metacd/gradient_audit.hpp"
#include "metacd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace metacd;
using cli::Overrides;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

void write_or_print(const std::optional<std::string>& file, const nlohmann::json& j) {
  if (file) {
    pipeline::write_json(*file, j);
  } else {
    std::cout << j.dump(2) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned causal discovery from few interventional datasets"};
  app.footer(cli::help_footer());
  app.require_subcommand(1);

  Overrides o;
  std::string data_dir, checkpoint_dir, resume_dir;

  auto* cfg_cmd = app.add_subcommand("default-config", "print (or write with --out) the default config");
  cli::add_common(cfg_cmd, o);

  auto* gen = app.add_subcommand("generate", "write a synthetic task collection");
  cli::add_common(gen, o);

  auto* tr = app.add_subcommand("train", "meta-train on a dataset directory");
  cli::add_common(tr, o);
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--resume", resume_dir, "continue from this checkpoint directory");

  auto* ad = app.add_subcommand("adapt", "score intervention targets of the meta-test tasks");
  cli::add_common(ad, o);
  ad->add_option("--data", data_dir, "dataset directory")->required();
  ad->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();

  auto* ev = app.add_subcommand("evaluate", "write an evaluation report");
  cli::add_common(ev, o);
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();

  double fd_step = 1e-5, fd_tolerance = 1e-3;
  auto* gc = app.add_subcommand("check-gradients", "finite-difference audit of every loss component");
  cli::add_common(gc, o);
  gc->add_option("--step", fd_step, "central-difference step")->capture_default_str();
  gc->add_option("--tolerance", fd_tolerance, "maximum relative error")->capture_default_str();

  auto* run = app.add_subcommand("run", "generate, train and evaluate n_simulations times");
  cli::add_common(run, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const config::ExperimentConfig cfg = cli::resolve(o);
    if (cfg_cmd->parsed()) {
      write_or_print(o.out, config::to_json(cfg));
    } else if (gen->parsed()) {
      std::cout << "digest " << pipeline::generate(cfg, cfg.output_dir, o.force) << '\n';
    } else if (tr->parsed()) {
      const fs::path out = cfg.output_dir;
      if (resume_dir.empty() && fs::exists(out) && !fs::is_empty(out) && !o.force) {
        throw ConfigError("output directory " + out.string() + " is not empty (use --force or --resume)");
      }
      const scm::Collection data = scm::load_tasks(data_dir);
      const auto res = pipeline::train(cfg, data, out, resume_dir.empty() ? std::nullopt : std::optional<fs::path>(resume_dir),
                                       &std::cerr);
      std::cout << "checkpoint " << res.checkpoint.string() << '\n';
    } else if (ad->parsed()) {
      const train::ModelState state = ckpt::load(checkpoint_dir);
      write_or_print(o.out, pipeline::adapt(cfg, state, scm::load_tasks(data_dir)));
    } else if (ev->parsed()) {
      const train::ModelState state = ckpt::load(checkpoint_dir);
      const nlohmann::json report =
          pipeline::evaluate(cfg, state, scm::load_tasks(data_dir), pipeline::directory_digest(checkpoint_dir),
                             pipeline::directory_digest(data_dir));
      write_or_print(o.out, report);
    } else if (gc->parsed()) {
      audit::AuditSetup setup;
      setup.seed = cfg.seed;
      setup.mode = cfg.train.mode;
      setup.step = fd_step;
      bool ok = true;
      for (const auto& e : audit::run_audit(setup)) {
        const bool pass = e.report.max_rel_error < fd_tolerance;
        ok = ok && pass;
        std::printf("%-4s %-15s %-15s max_rel_err=%.3e worst=%s[%ld] (%zu coords)\n", pass ? "ok" : "FAIL",
                    audit::to_string(e.component), to_string(e.group), e.report.max_rel_error,
                    e.report.worst_param.c_str(), static_cast<long>(e.report.worst_index), e.report.coordinates);
      }
      return ok ? 0 : kExitNumerical;
    } else if (run->parsed()) {
      std::cout << pipeline::run(cfg, cfg.output_dir, o.force, &std::cerr).dump(2) << '\n';
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
