#include <doctest.h>

#include <string>

#include "loopdyn/config.hpp"
#include "loopdyn/error.hpp"

using namespace loopdyn;

namespace {

const char* kBase = R"(experiment_id: small
seed: 9
loop:
  nudge: replace
  steps: 20
generator:
  kind: synthetic
  regime: contractive
families:
  - id: fam_a
    ics: 2
  - id: fam_b
    seed_texts: ["one", "two"]
runs: 2
injection_step: 8
conditions:
  - kind: control
  - kind: neutral
    doses: [20, 40, 80, 160]
  - kind: neutral
    mode: insert
    doses: [20, 40, 80, 160]
analysis:
  decision_step: 5
)";

ErrorCode code_of(const std::string& yaml) {
  try {
    parse_config(yaml);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

std::string message_of(const std::string& yaml) {
  try {
    parse_config(yaml);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parses a complete config") {
  const auto c = parse_config(kBase);
  CHECK(c.experiment_id == "small");
  CHECK(c.loop.nudge_kind == NudgeKind::Replace);
  CHECK(c.loop.seed == 9);
  REQUIRE(c.families.size() == 2);
  CHECK(c.families[0].seed_texts.size() == 2);
  CHECK(c.families[1].seed_texts[1] == "two");
  const auto labels = c.expanded_conditions();
  REQUIRE(labels.size() == 9);
  CHECK(labels[0].label() == "control");
  CHECK(labels[1].label() == "neutral_dose20");
  CHECK(labels[5].label() == "neutral_insert_dose20");
  CHECK(c.has_perturbation());
}

TEST_CASE("unknown key names its path and line") {
  std::string yaml = kBase;
  yaml.replace(yaml.find("  decision_step: 5"), 17, "  decision_step: 5\n  decison_stp: 4");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  const auto msg = message_of(yaml);
  CHECK(msg.find("analysis.decison_stp") != std::string::npos);
  CHECK(msg.find("line 25") != std::string::npos);
}

TEST_CASE("doses must increase strictly") {
  std::string yaml = kBase;
  yaml.replace(yaml.find("[20, 40, 80, 160]"), 17, "[20, 80, 40, 160]");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  yaml = kBase;
  yaml.replace(yaml.find("[20, 40, 80, 160]"), 17, "[20, 20, 40, 160]");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  yaml = kBase;
  yaml.replace(yaml.find("[20, 40, 80, 160]"), 17, "[0, 20, 40, 160]");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
}

TEST_CASE("perturbations need a control condition") {
  std::string yaml = kBase;
  yaml.replace(yaml.find("  - kind: control\n"), 18, "");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  CHECK(message_of(yaml).find("control") != std::string::npos);
}

TEST_CASE("structural checks") {
  std::string yaml = kBase;
  yaml.replace(yaml.find("injection_step: 8"), 17, "injection_step: 19");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  yaml = kBase;
  yaml.replace(yaml.find("id: fam_b"), 9, "id: fam_a");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  yaml = kBase;
  yaml.replace(yaml.find("kind: synthetic"), 15, "kind: hosted");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  yaml = kBase;
  yaml.replace(yaml.find("runs: 2"), 7, "runs: 0");
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
  CHECK(code_of("experiment_id: [unclosed") == ErrorCode::ConfigInvalid);
  yaml = std::string(kBase) + "observables: [dialog_memory]\n";
  CHECK(code_of(yaml) == ErrorCode::ConfigInvalid);
}

TEST_CASE("json round trip is exact") {
  const auto c = parse_config(kBase);
  const auto j = to_json(c);
  const auto back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.expanded_conditions().size() == c.expanded_conditions().size());
  CHECK(back.analysis.decision_step == 5);
  CHECK(back.loop.nudge_kind == NudgeKind::Replace);
}

TEST_CASE("partition override") {
  PartitionSpec s;
  const auto o = apply_partition_override(s, "k=6,method=kmeans,projection_k=4");
  CHECK(o.k == 6);
  CHECK(o.projection_k == 4);
  CHECK(o.method == ClusterMethod::KMeans);
  CHECK(apply_partition_override(s, "radius=0.5").radius == doctest::Approx(0.5));
  CHECK_THROWS_AS(apply_partition_override(s, "colour=red"), Error);
  CHECK_THROWS_AS(apply_partition_override(s, "k"), Error);
  CHECK_THROWS_AS(apply_partition_override(s, "k=0"), Error);
}
