#pragma once

// Experiment configuration: a YAML document with a fixed schema. Unknown keys
// are rejected with the dotted path and source line of the offending field.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopdyn/dynamics.hpp"
#include "loopdyn/embedding.hpp"
#include "loopdyn/loop.hpp"
#include "loopdyn/partition.hpp"
#include "loopdyn/perturbation.hpp"
#include "loopdyn/synthetic.hpp"

namespace loopdyn {

struct FamilyConfig {
  std::string id;
  std::vector<std::string> seed_texts;  // one per initial condition
};

/// One configured condition expands to one label per dose.
struct ConditionConfig {
  PerturbationKind kind = PerturbationKind::Control;
  std::optional<InjectionMode> mode;
  std::vector<int> doses;
  std::optional<std::string> source_experiment;  // "self" or a steps file
  bool homogeneous = false;

  std::vector<PerturbationCondition> expand() const;
};

struct AnalysisConfig {
  int decision_step = 10;
  int bootstrap_iterations = 200;
  int null_iterations = 200;
  double recurrence_epsilon = 0.15;
  int recurrence_tau = 3;
  PointMetric recurrence_metric = PointMetric::Cosine;
  double period_threshold = 0.05;
  bool landscape = true;
  int landscape_resolution = 60;
  double landscape_sigma = 2.0;
  int landscape_basins = 4;
  std::array<bool, 4> declared_inapplicable{};  // c1..c4
  int destination_lag = 1;
};

struct ExperimentConfig {
  std::string experiment_id;
  std::uint64_t seed = 0;
  LoopConfig loop;  // family, ic, run and seed text are filled per trajectory
  SyntheticSpec generator;
  std::vector<FamilyConfig> families;
  int runs = 1;
  int injection_step = 15;
  std::vector<ConditionConfig> conditions;
  std::vector<ObservableKind> observables{ObservableKind{}};
  FeatureHashEmbedder::Options embedder;
  std::vector<FeatureHashEmbedder::Options> alt_embedders;
  PartitionSpec partition;
  AnalysisConfig analysis;

  /// Throws ConfigInvalid naming the offending field.
  void validate() const;
  /// Every expanded condition label, control first when present.
  std::vector<PerturbationCondition> expanded_conditions() const;
  bool has_perturbation() const;
};

ExperimentConfig parse_config(std::string_view yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical resolved form; `config_from_json` reads it back.
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Applies "key=value,key=value" overrides to a partition spec. Keys:
/// projection_k, method, k, radius, min_pts, seed, late_window_fraction.
PartitionSpec apply_partition_override(PartitionSpec spec, std::string_view overrides);

}  // namespace loopdyn
