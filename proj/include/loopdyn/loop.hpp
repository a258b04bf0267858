#pragma once

// Bounded recursive text loops: X_{t+1} = nudge(X_t, Y_t) with Y_t drawn from
// a pluggable generator under a fixed content instruction.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopdyn/rng.hpp"

namespace loopdyn {

enum class NudgeKind { Append, Replace, Dialog };
enum class InjectionMode { Overwrite, Insert };

std::string_view to_string(NudgeKind kind) noexcept;
std::string_view to_string(InjectionMode mode) noexcept;
NudgeKind parse_nudge_kind(std::string_view text);
InjectionMode parse_injection_mode(std::string_view text);

struct LoopConfig {
  NudgeKind nudge_kind = NudgeKind::Append;
  std::string operator_instruction = "Continue the text naturally";
  std::string seed_text;
  int max_context_chars = 12000;
  int steps = 30;
  int max_output_tokens = 120;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::string family_id;
  std::string ic_id;
  int run_id = 0;
  std::optional<std::string> role_a_name;
  std::optional<std::string> role_b_name;

  /// Throws ConfigInvalid on the first violated invariant.
  void validate() const;
};

struct StepRecord {
  int step = 0;
  std::string state_before;
  std::string output;
  std::string state_after;
  std::optional<std::string> role;
  bool injected = false;
  std::optional<InjectionMode> injection_mode;
  int generator_call_count = 0;

  bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
  LoopConfig config;
  std::string id;
  std::string arm;
  std::string condition;
  std::vector<StepRecord> steps;

  int terminal_step() const noexcept { return static_cast<int>(steps.size()) - 1; }
};

/// One generation call. `state` is the full visible context for this call,
/// including any one-shot insert prefix.
struct GenerationRequest {
  std::string_view state;
  std::string_view instruction;
  std::optional<std::string_view> role;
  double temperature = 1.0;
  int step = 0;
  int max_output_tokens = 120;
};

/// Generator contract: output depends only on the request and the RNG passed
/// in; implementations must not keep mutable state between calls, which makes
/// a single instance safe to share across worker threads.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const GenerationRequest& request, Rng& rng) const = 0;
  virtual std::string id() const = 0;
};

struct InjectionSpec {
  int step = 15;
  InjectionMode mode = InjectionMode::Overwrite;
  std::string text;
};

std::string clip(std::string_view text, int cap);
std::string format_turn(std::string_view role, std::string_view output);

struct ParsedTurn {
  std::string role;
  std::string text;
};
/// Inverse of format_turn for a single rendered turn.
std::optional<ParsedTurn> parse_turn(std::string_view rendered);

std::string apply_nudge(NudgeKind kind, std::string_view state, std::string_view output,
                        std::optional<std::string_view> role, int cap);

/// Role for step t in a dialog loop; roles alternate starting with role A.
std::optional<std::string> role_for_step(const LoopConfig& config, int step);

/// The generation stream is derived from (config.seed, family, ic, run, stream_arm);
/// every step draws from its own sub-stream so overwrite steps that skip the
/// generator do not shift later draws.
Trajectory run_trajectory(const LoopConfig& config, const Generator& generator,
                          const std::optional<InjectionSpec>& injection = std::nullopt,
                          std::string_view stream_arm = "A");

enum class BaselineKind { NoFeedback, IndependentRegeneration };
std::string_view to_string(BaselineKind kind) noexcept;

Trajectory run_baseline(BaselineKind kind, const LoopConfig& config, const Generator& generator,
                        std::string_view stream_arm = "A");

struct PairedUnit {
  std::string family;
  std::string ic;
  int run = 0;
  std::string condition;
  std::optional<int> dose;
  std::optional<Trajectory> a;
  std::optional<Trajectory> b;
  std::optional<Trajectory> z;
  std::optional<InjectionSpec> injection;
  std::vector<std::string> source_ids;
  bool source_rule_violation = false;
};

/// Runs the A/B/Z triple. A and Z share a generation stream, B gets its own.
/// The controls do not depend on the condition, so their ids omit it; Z's id carries it.
PairedUnit run_paired_unit(const LoopConfig& config, const Generator& generator,
                           const std::optional<InjectionSpec>& injection, std::string_view condition = "");

std::string trajectory_id(const LoopConfig& config, std::string_view arm, std::string_view condition);

// JSON Lines persistence: a header line carrying the config, then one line per step.
nlohmann::json to_json(const LoopConfig& config);
LoopConfig loop_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StepRecord& record);

void write_trajectories_jsonl(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);
std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories);
/// Throws SchemaMismatch naming the 1-based offending line.
std::vector<Trajectory> read_trajectories_jsonl(const std::filesystem::path& path);
std::vector<Trajectory> parse_trajectories_jsonl(std::string_view text);

}  // namespace loopdyn
