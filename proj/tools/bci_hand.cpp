// bci-hand: runs the pipeline stages from a JSON configuration.
//
//   bci-hand <stage> --config cfg.json [--seed N] [--out DIR] [--dataset DIR]
//   bci-hand run-all --config cfg.json
//   bci-hand print-config [--config cfg.json]
//
// Precedence: command-line flag > config file > built-in default.

#include "bcihand/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using bcihand::PipelineConfig;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  bool no_synth = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required) {
  auto* c = cmd->add_option("--config,-c", o.config, "JSON configuration file");
  if (config_required) c->required();
  cmd->add_option("--seed", o.seed, "top-level seed (overrides the file)");
  cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
  cmd->add_option("--dataset", o.dataset, "dataset directory (overrides dataset_dir)");
}

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : bcihand::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.dataset) cfg.dataset_dir = *o.dataset;
  if (o.no_synth) cfg.run_synth = false;
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand-movement EEG discrimination pipeline"};
  app.require_subcommand(1);
  Overrides o;

  std::vector<std::pair<CLI::App*, bcihand::Stage>> stages;
  for (int i = 0; i < 7; ++i) {
    const auto s = static_cast<bcihand::Stage>(i);
    auto* cmd = app.add_subcommand(std::string(bcihand::to_string(s)), "run the " + std::string(bcihand::to_string(s)) + " stage");
    add_common(cmd, o, true);
    stages.emplace_back(cmd, s);
  }
  auto* all = app.add_subcommand("run-all", "run every stage in order");
  add_common(all, o, true);
  all->add_flag("--no-synth", o.no_synth, "use an existing dataset instead of generating one");
  auto* print = app.add_subcommand("print-config", "print the resolved configuration with every default filled in");
  add_common(print, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const PipelineConfig cfg = resolve(o);
    if (print->parsed()) {
      std::cout << bcihand::to_json(cfg).dump(2) << "\n"
                << "config_hash " << bcihand::config_hash(cfg) << "\n";
      return 0;
    }
    auto run = [&](bcihand::Stage s) {
      const auto t0 = std::chrono::steady_clock::now();
      bcihand::run_stage(s, cfg);
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "%-10s done in %.1f s\n", std::string(bcihand::to_string(s)).c_str(), dt);
    };
    if (all->parsed()) {
      for (int i = cfg.run_synth ? 0 : 1; i < 7; ++i) run(static_cast<bcihand::Stage>(i));
    } else {
      for (const auto& [cmd, s] : stages) {
        if (cmd->parsed()) run(s);
      }
    }
  } catch (const bcihand::Error& e) {
    std::cerr << "bci-hand: " << e.what() << "\n";
    return bcihand::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "bci-hand: " << e.what() << "\n";
    return 1;
  }
  if (stages.back().first->parsed() || all->parsed()) {
    std::ifstream table(bcihand::StagePaths(resolve(o)).report / "report.txt");
    std::cout << table.rdbuf();
  }
  return 0;
}
