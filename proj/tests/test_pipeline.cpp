#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "loopdyn/config.hpp"
#include "loopdyn/error.hpp"
#include "loopdyn/experiment.hpp"

using namespace loopdyn;
namespace fs = std::filesystem;

namespace {

std::string small_yaml(const std::string& id, const std::string& nudge = "replace",
                       const std::string& doses = "[20, 40, 80, 160]") {
  return "experiment_id: " + id + R"(
seed: 5
loop:
  nudge: )" + nudge + R"(
  steps: 12
generator:
  kind: synthetic
  regime: multi_basin
  latent_dim: 2
  basin_centers: [[3, 0], [-3, 0]]
  noise_scale: 0.05
families:
  - id: fam_a
    ics: 2
  - id: fam_b
    ics: 2
runs: 2
injection_step: 5
conditions:
  - kind: control
  - kind: neutral
    doses: )" + doses + R"(
  - kind: neutral
    mode: insert
    doses: )" + doses + R"(
alt_embedders:
  - {salt: 1}
  - {salt: 2, ngram: 2}
partition:
  projection_k: 4
  method: kmeans
  k: 2
analysis:
  decision_step: 4
  bootstrap_iterations: 20
  null_iterations: 20
  landscape_resolution: 24
)";
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("loopdyn_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// One analyzed experiment shared by the read-only checks below.
const fs::path& baseline() {
  static const fs::path dir = [] {
    const auto d = scratch("baseline");
    run_experiment(parse_config(small_yaml("base")), d);
    return d;
  }();
  return dir;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("smoke run writes every artifact") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& dir = baseline();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 10.0);
  for (const char* f : {artifact::kConfig, artifact::kSteps, artifact::kUnits, artifact::kDiagnostics,
                        artifact::kRegime, artifact::kPredictability, artifact::kScorecardJson,
                        artifact::kScorecardCsv, artifact::kEndpoints, artifact::kFits, artifact::kCurves,
                        artifact::kLandscape, artifact::kReportText, artifact::kReportJson, artifact::kProvenance})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  CHECK(fs::exists(dir / "partition/basins.json"));
  CHECK(fs::exists(dir / "embeddings/output.canonical.bin"));
  CHECK(fs::exists(dir / "embeddings/output.alt2.json"));

  // 8 seed units, each with A, B and 8 treated arms
  const auto trajectories = read_trajectories_jsonl(dir / artifact::kSteps);
  CHECK(trajectories.size() == 8 * 10);
  const auto units = read_units_jsonl(dir / artifact::kUnits, trajectories);
  CHECK(units.units.size() == 8 * 9);
  CHECK(units.units.front().condition == "control");
  CHECK(units.units[1].condition == "neutral");
  CHECK(*units.units[1].dose == 20);

  const auto regime = nlohmann::json::parse(slurp(dir / artifact::kRegime));
  CHECK(regime["trajectories"] == 8);
  CHECK(regime["embedder_recurrence"].size() == 3);
  CHECK(regime["scorecard"]["c3"]["verdict"] != "missing");
}

TEST_CASE("runs are deterministic across worker counts") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  RunOptions serial, wide;
  wide.jobs = 4;
  run_experiment(parse_config(small_yaml("det")), a, serial);
  run_experiment(parse_config(small_yaml("det")), b, wide);
  const auto ta = tree(a), tb = tree(b);
  REQUIRE(ta.size() == tb.size());
  for (const auto& [name, bytes] : ta) {
    REQUIRE(tb.count(name));
    CHECK_MESSAGE(bytes == tb.at(name), name);
  }
}

TEST_CASE("analyze rerun reproduces the metrics") {
  const auto dir = scratch("rerun");
  fs::copy(baseline(), dir, fs::copy_options::recursive);
  const auto before = tree(dir / "metrics");
  const auto endpoints = slurp(dir / artifact::kEndpoints);
  fs::remove_all(dir / "metrics");
  fs::remove(dir / artifact::kEndpoints);
  RunOptions o;
  o.phases = {Phase::Analyze};
  run_experiment(config_from_json(nlohmann::json::parse(slurp(dir / artifact::kConfig))), dir, o);
  CHECK(tree(dir / "metrics") == before);
  CHECK(slurp(dir / artifact::kEndpoints) == endpoints);
  CHECK(audit_provenance(dir).ok);
}

TEST_CASE("replay reproduces endpoints from the step log") {
  const auto out = scratch("replay");
  replay(baseline() / artifact::kSteps, out);
  CHECK(slurp(out / artifact::kEndpoints) == slurp(baseline() / artifact::kEndpoints));
  CHECK(slurp(out / artifact::kFits) == slurp(baseline() / artifact::kFits));
  CHECK(audit_provenance(out).ok);
}

TEST_CASE("truncated step log fails at the broken line") {
  const auto dir = scratch("truncated");
  fs::create_directories(dir);
  const auto text = slurp(baseline() / artifact::kSteps);
  int lines = 0;
  for (char c : text) lines += c == '\n';
  {
    std::ofstream out(dir / "steps.jsonl", std::ios::binary);
    out << text.substr(0, text.size() - 40);
  }
  try {
    read_trajectories_jsonl(dir / "steps.jsonl");
    FAIL("expected SchemaMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaMismatch);
    CHECK(std::string(e.what()).find("line " + std::to_string(lines)) != std::string::npos);
  }
  ReplayOptions o;
  o.config = baseline() / artifact::kConfig;
  CHECK(code_of([&] { replay(dir / "steps.jsonl", scratch("truncated_out"), o); }) == ErrorCode::SchemaMismatch);
}

TEST_CASE("replay under another partition records both") {
  const auto out = scratch("replay_alt");
  ReplayOptions o;
  o.partition_override = "k=3";
  replay(baseline() / artifact::kSteps, out, o);
  const auto prov = nlohmann::json::parse(slurp(out / artifact::kProvenance));
  const auto source = nlohmann::json::parse(slurp(baseline() / "partition/basins.json"))["hash"];
  const auto refit = nlohmann::json::parse(slurp(out / "partition/basins.json"))["hash"];
  REQUIRE(prov["partitions"].size() == 2);
  CHECK(prov["partitions"][0]["role"] == "source");
  CHECK(prov["partitions"][0]["hash"] == source);
  CHECK(prov["partitions"][1]["role"] == "fit");
  CHECK(prov["partitions"][1]["hash"] == refit);
  CHECK(source != refit);
}

TEST_CASE("aggregate stacks tables and guards merged curves") {
  const auto other = scratch("agg_other");
  run_experiment(parse_config(small_yaml("other", "replace", "[40, 80, 160, 320]")), other);
  const auto out = scratch("agg_out");
  aggregate({baseline(), other}, out);
  const auto stacked = slurp(out / "endpoints.csv");
  CHECK(stacked.rfind("experiment_id,condition,dose", 0) == 0);
  CHECK(stacked.find("\nbase,control") != std::string::npos);
  CHECK(stacked.find("\nother,control") != std::string::npos);
  CHECK(fs::exists(out / "scorecards.csv"));

  const auto grid = slurp(out / "dose_grid.csv");
  CHECK(grid.rfind("experiment_id,condition,dose20,dose40,dose80,dose160,dose320", 0) == 0);
  CHECK(grid.find("\nbase,neutral,") != std::string::npos);
  // each experiment is null on the dose only the other ran
  std::istringstream in(grid);
  std::string line;
  int nulls = 0;
  while (std::getline(in, line)) nulls += line.find("null") != std::string::npos;
  CHECK(nulls == 4);

  const auto conflict = scratch("agg_conflict");
  RunOptions o;
  o.partition_override = "k=3";
  run_experiment(parse_config(small_yaml("conflict")), conflict, o);
  CHECK(code_of([&] { aggregate({baseline(), conflict}, scratch("agg_refused"), true); }) == ErrorCode::GuardRail);

  const auto twin = scratch("agg_twin");
  run_experiment(parse_config(small_yaml("twin")), twin);
  const auto merged = scratch("agg_merged");
  aggregate({baseline(), twin}, merged, true);
  CHECK(fs::exists(merged / "merged_curve.csv"));
}

TEST_CASE("report fills every checklist item") {
  const auto report = emit_report(baseline());
  CHECK(report["generator"]["id"].get<std::string>().find("synthetic") != std::string::npos);
  CHECK(report["nudge"] == "replace");
  CHECK(report["equivalence_rule"].get<std::string>().find("partition ") != std::string::npos);
  CHECK(report["floor"]["measured"] == true);
  CHECK(report["rates"].size() == 8);
  CHECK(report["ed50"]["reported_endpoint"] == "ED50_persist");
  CHECK(report["overwrite_vs_insert_gap"].is_array());
  CHECK(report["overwrite_vs_insert_gap"].size() == 4);
  CHECK(report["scope_caveats"].size() >= 3);
  const auto text = slurp(baseline() / artifact::kReportText);
  for (int i = 1; i <= 8; ++i) CHECK(text.find("\n" + std::to_string(i) + ". ") != std::string::npos);
}

TEST_CASE("report for an append loop marks the gap not applicable") {
  const auto dir = scratch("append");
  run_experiment(parse_config(small_yaml("append", "append")), dir);
  CHECK(emit_report(dir)["overwrite_vs_insert_gap"] == "not applicable");
}

TEST_CASE("report without baseline arms leaves the floor unmeasured") {
  const auto src = scratch("no_b_src");
  fs::create_directories(src);
  {
    std::ifstream in(baseline() / artifact::kSteps);
    std::ofstream out(src / "steps.jsonl");
    std::string line;
    bool keep = true;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      if (j.value("kind", "") == "trajectory") keep = j["arm"] != "B";
      if (keep) out << line << '\n';
    }
  }
  fs::copy_file(baseline() / artifact::kConfig, src / artifact::kConfig);
  const auto out = scratch("no_b");
  replay(src / "steps.jsonl", out);
  const auto report = emit_report(out);
  CHECK(report["floor"]["measured"] == false);
  CHECK(report["floor"]["status"] == "floor not measured");
  CHECK(slurp(out / artifact::kReportText).find("floor not measured") != std::string::npos);
  const auto endpoints = slurp(out / artifact::kEndpoints);
  CHECK(endpoints.find("control,,8,") != std::string::npos);
  CHECK(endpoints.find(",null,null,") != std::string::npos);
}

TEST_CASE("report refuses a directory without endpoints") {
  const auto dir = scratch("no_endpoints");
  RunOptions o;
  o.phases = {Phase::Generate};
  run_experiment(parse_config(small_yaml("partial")), dir, o);
  CHECK(code_of([&] { emit_report(dir); }) == ErrorCode::MissingEndpoints);
}

TEST_CASE("provenance audit catches edits") {
  const auto dir = scratch("tamper");
  fs::copy(baseline(), dir, fs::copy_options::recursive);
  auto audit = audit_provenance(dir);
  CHECK(audit.ok);
  CHECK(audit.files > 15);
  {
    std::ofstream out(dir / artifact::kEndpoints, std::ios::app);
    out << "neutral,999,1,0,0,0,0,0,0,0,0,0,\"{}\"\n";
  }
  audit = audit_provenance(dir);
  CHECK_FALSE(audit.ok);
  bool named = false;
  for (const auto& p : audit.problems) named |= p.find("endpoints/endpoints.csv: content changed") != std::string::npos;
  CHECK(named);

  fs::remove(dir / artifact::kRegime);
  audit = audit_provenance(dir);
  bool missing = false;
  for (const auto& p : audit.problems) missing |= p.find("metrics/regime.json: missing") != std::string::npos;
  CHECK(missing);
}

TEST_CASE("phase names parse") {
  CHECK(parse_phases("all").size() == 5);
  CHECK(parse_phases("analyze,embed") == std::vector<Phase>{Phase::Embed, Phase::Analyze});
  CHECK(code_of([] { parse_phases("embed,plot"); }) == ErrorCode::ConfigInvalid);
  CHECK(split_condition_label("adversarial_insert_dose80_homogeneous") ==
        std::pair<std::string, std::optional<int>>{"adversarial_insert_homogeneous", 80});
  CHECK(split_condition_label("control").second == std::nullopt);
}
