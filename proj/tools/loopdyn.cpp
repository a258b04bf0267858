// Command-line front end for the experiment pipeline.
//
//   loopdyn run --config exp.yaml --out dir [--seed N] [--phases all] [--jobs N] [--partition k=6]
//   loopdyn replay steps.jsonl --out dir [--config exp.yaml] [--partition ...] [--jobs N]
//   loopdyn aggregate dir1 dir2 ... --out dir [--merge-curve]
//   loopdyn report dir
//   loopdyn audit dir
//
// Exit codes: 0 success, 1 other failure, 2 invalid config, 3 schema mismatch,
// 4 guard rail, missing endpoints or failed audit.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "loopdyn/error.hpp"
#include "loopdyn/experiment.hpp"

namespace {

int exit_code(loopdyn::ErrorCode code) {
  switch (code) {
    case loopdyn::ErrorCode::ConfigInvalid: return 2;
    case loopdyn::ErrorCode::SchemaMismatch: return 3;
    case loopdyn::ErrorCode::GuardRail:
    case loopdyn::ErrorCode::MissingEndpoints: return 4;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback-loop dynamics experiments"};
  app.require_subcommand(1);

  std::string config, out, phases = "all", partition;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  auto* run = app.add_subcommand("run", "Run experiment phases from a config");
  run->add_option("--config", config, "Experiment YAML")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--phases", phases, "Comma-separated phases or 'all'");
  run->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--partition", partition, "Partition overrides, key=value,...");

  std::string steps;
  std::string replay_config;
  auto* rep = app.add_subcommand("replay", "Analyze a fixed step log");
  rep->add_option("steps", steps, "Step log")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out, "Output directory")->required();
  rep->add_option("--config", replay_config, "Experiment config (YAML or resolved JSON)")->check(CLI::ExistingFile);
  rep->add_option("--partition", partition, "Partition overrides, key=value,...");
  rep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> dirs;
  bool merge_curve = false;
  auto* agg = app.add_subcommand("aggregate", "Merge tables across experiments");
  agg->add_option("dirs", dirs, "Experiment directories")->required()->check(CLI::ExistingDirectory);
  agg->add_option("--out", out, "Output directory")->required();
  agg->add_flag("--merge-curve", merge_curve, "Pool counts into one dose-response curve");

  std::string dir;
  auto* report = app.add_subcommand("report", "Write the reporting checklist");
  report->add_option("dir", dir, "Experiment directory")->required()->check(CLI::ExistingDirectory);
  auto* audit = app.add_subcommand("audit", "Verify recorded artifact hashes");
  audit->add_option("dir", dir, "Experiment directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      loopdyn::RunOptions o;
      o.phases = loopdyn::parse_phases(phases);
      o.jobs = jobs;
      o.seed = seed;
      if (!partition.empty()) o.partition_override = partition;
      loopdyn::run_experiment(std::filesystem::path(config), out, o);
    } else if (*rep) {
      loopdyn::ReplayOptions o;
      if (!replay_config.empty()) o.config = replay_config;
      if (!partition.empty()) o.partition_override = partition;
      o.jobs = jobs;
      loopdyn::replay(steps, out, o);
    } else if (*agg) {
      std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
      loopdyn::aggregate(paths, out, merge_curve);
    } else if (*report) {
      loopdyn::emit_report(dir);
      std::cout << (std::filesystem::path(dir) / loopdyn::artifact::kReportText).string() << '\n';
    } else if (*audit) {
      const auto r = loopdyn::audit_provenance(dir);
      for (const auto& p : r.problems) std::cerr << p << '\n';
      std::cout << (r.ok ? "ok" : "failed") << ' ' << r.files << " files\n";
      return r.ok ? 0 : 4;
    }
  } catch (const loopdyn::Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
