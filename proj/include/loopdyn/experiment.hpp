#pragma once

// Config-driven experiment pipeline: generate, embed, partition, analyze and
// report phases over an artifact directory, plus replay of fixed trajectory
// logs, cross-experiment aggregation and provenance auditing.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopdyn/config.hpp"
#include "loopdyn/loop.hpp"

namespace loopdyn {

enum class Phase { Generate, Embed, Partition, Analyze, Report };
std::string_view to_string(Phase phase) noexcept;
/// Comma-separated phase names; "all" selects every phase.
std::vector<Phase> parse_phases(std::string_view text);
std::vector<Phase> all_phases();

struct RunOptions {
  std::vector<Phase> phases = all_phases();
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> partition_override;
};

/// Artifact paths relative to the experiment directory.
namespace artifact {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kSteps = "steps.jsonl";
inline constexpr const char* kUnits = "units.jsonl";
inline constexpr const char* kPartition = "partition/basins";
inline constexpr const char* kDiagnostics = "metrics/diagnostics.csv";
inline constexpr const char* kRegime = "metrics/regime.json";
inline constexpr const char* kPredictability = "metrics/predictability.csv";
inline constexpr const char* kScorecardJson = "metrics/scorecard.json";
inline constexpr const char* kScorecardCsv = "metrics/scorecard.csv";
inline constexpr const char* kEndpoints = "endpoints/endpoints.csv";
inline constexpr const char* kFits = "dose_response/fits.csv";
inline constexpr const char* kCurves = "dose_response/curves.csv";
inline constexpr const char* kLandscape = "landscape/landscape.csv";
inline constexpr const char* kReportText = "reports/report.txt";
inline constexpr const char* kReportJson = "reports/report.json";
inline constexpr const char* kProvenance = "provenance.json";
}  // namespace artifact

/// Splits "adversarial_insert_dose80_homogeneous" into
/// ("adversarial_insert_homogeneous", 80).
std::pair<std::string, std::optional<int>> split_condition_label(std::string_view label);

/// Paired units of an experiment with their trajectories attached.
struct UnitSet {
  std::vector<PairedUnit> units;
  bool injection_text_recorded = true;
};

nlohmann::json unit_manifest_entry(const PairedUnit& unit);
void write_units_jsonl(const std::filesystem::path& path, const std::vector<PairedUnit>& units);
/// Joins a units manifest with the trajectories it names.
UnitSet read_units_jsonl(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);
/// Rebuilds units from trajectories alone: A and B arms pair by seed unit and
/// every Z arm becomes one treatment unit. Injection texts of insert arms are
/// not stored in the step log, so they come back as a placeholder.
UnitSet reconstruct_units(const std::vector<Trajectory>& trajectories);

/// Runs the selected phases into `out`. Phases not selected read what
/// earlier runs left in `out`.
void run_experiment(ExperimentConfig config, const std::filesystem::path& out, const RunOptions& options = {});
void run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out,
                    const RunOptions& options = {});

struct ReplayOptions {
  std::optional<std::filesystem::path> config;  // defaults to config.json beside the steps file
  std::optional<std::string> partition_override;
  int jobs = 1;
};

/// Analysis phases on a fixed step log; no generation.
void replay(const std::filesystem::path& steps, const std::filesystem::path& out, const ReplayOptions& options = {});

/// Merges per-experiment tables into `out`. With merged_curve set, refuses
/// (GuardRail) when the experiments were analyzed under different partitions.
void aggregate(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out,
               bool merged_curve = false);

/// Fills the minimum reporting template from an analyzed directory and
/// writes it as text and JSON. Throws MissingEndpoints.
nlohmann::json emit_report(const std::filesystem::path& dir);

struct ProvenanceAudit {
  bool ok = true;
  int files = 0;
  std::vector<std::string> problems;
};

/// Recomputes every recorded content hash and checks each input edge.
ProvenanceAudit audit_provenance(const std::filesystem::path& dir);

/// FNV-1a 64 of the file bytes as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

}  // namespace loopdyn
