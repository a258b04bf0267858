#pragma once

// Perturbation corpora, dose resizing, the paired A/B/Z endpoint algorithm and
// the diagnostics built on it.

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopdyn/loop.hpp"
#include "loopdyn/partition.hpp"
#include "loopdyn/rng.hpp"
#include "loopdyn/stats.hpp"

namespace loopdyn {

enum class PerturbationKind { Control, Neutral, Lorem, Adversarial };
std::string_view to_string(PerturbationKind kind) noexcept;
PerturbationKind parse_perturbation_kind(std::string_view text);

struct PerturbationCondition {
  PerturbationKind kind = PerturbationKind::Control;
  std::optional<InjectionMode> mode;
  std::optional<int> dose_tokens;
  std::optional<std::string> source_experiment;
  bool homogeneous = false;

  /// control carries no dose or mode; adversarial needs a source experiment.
  void validate() const;
  /// e.g. "control", "lorem", "adversarial_dose200", "adversarial_insert_dose80".
  std::string label() const;
};

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;
std::vector<std::string> whitespace_tokens(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

/// Curated low-affect word pool for lorem perturbations (70 words).
std::span<const std::string_view> lorem_word_pool();
/// Hand-written off-topic encyclopedic paragraphs for neutral perturbations.
std::span<const std::string_view> neutral_paragraphs();

/// Late-step output of another trajectory, available as adversarial text.
struct AdversarialSource {
  std::string trajectory_id;
  std::string family;
  std::string ic;
  std::string text;
};

struct InjectionTarget {
  std::string trajectory_id;
  std::string family;
  std::string ic;
};

struct InjectionPlan {
  int step = 15;
  PerturbationCondition condition;
  std::string resolved_text;
  std::vector<std::string> source_ids;
  int tokens = 0;
};

/// Resolves the text for one treatment arm. Lorem draws words from the pool
/// (70 by default); neutral concatenates paragraphs; adversarial uses sources
/// from other families, concatenating distinct ones (heterogeneous) or
/// repeating one (homogeneous) until the dose is met, then truncates.
InjectionPlan build_perturbation_text(const PerturbationCondition& condition, const InjectionTarget& target,
                                      Rng& rng, std::span<const AdversarialSource> adversarial_pool,
                                      int step = 15, const Tokenizer& tokenizer = whitespace_tokens);

/// Terminal and injection-window labels of one unit.
struct UnitEndpoints {
  bool floor = false;
  bool raw = false;
  bool jump = false;
  bool persist_dst = false;
  bool persist_src = false;
  int c_pre = 0;    // Z at t_inj - 1
  int c_post = 0;   // Z at t_inj + lag
  int c_term = 0;   // Z at terminal
  int a_term = 0;
  int b_term = 0;
};

// Floor reads only the two controls; raw only the treatment against A.
struct ControlPairLabels {
  std::span<const int> a;
  std::span<const int> b;
};
struct TreatmentLabels {
  std::span<const int> z;
  std::span<const int> a;
};
bool floor_event(const ControlPairLabels& pair, int terminal);
bool raw_event(const TreatmentLabels& treatment, int terminal);

UnitEndpoints unit_endpoints(std::span<const int> a, std::span<const int> b, std::span<const int> z, int t_inj,
                             int terminal, int destination_lag = 1);

struct RateCell {
  int successes = 0;
  double rate = 0.0;
  Interval ci;
};

struct EndpointSummary {
  std::string condition;
  std::optional<int> dose;
  int n = 0;
  RateCell raw, floor, jump, persist_dst, persist_src;
  double net = 0.0;
  // jump decomposition: persisted + returned + elsewhere = jumped
  int persisted = 0;
  int returned_to_source = 0;
  int drifted_elsewhere = 0;
  std::map<std::string, int> excluded;
  std::vector<UnitEndpoints> units;

  int excluded_total() const;
};

struct EndpointOptions {
  int t_inj = 15;
  int terminal = 29;
  int destination_lag = 1;
};

/// Cells keyed by (condition, dose) in sorted order. Throws PartitionMissingLabels.
std::vector<EndpointSummary> compute_endpoints(std::span<const PairedUnit> units, const BasinPartition& partition,
                                               const EndpointOptions& opt = {});

struct ExclusionResult {
  std::vector<std::size_t> kept;
  std::vector<std::pair<std::size_t, std::string>> excluded;
  std::map<std::string, int> counts;
};

/// Reasons, first match wins: missing_arm, missing_terminal, horizon_mismatch,
/// missing_labels, source_rule, empty_perturbation.
ExclusionResult exclusion_filter(std::span<const PairedUnit> units, const BasinPartition* partition,
                                 const EndpointOptions& opt = {}, const Tokenizer& tokenizer = whitespace_tokens);

/// Runs the filter, then endpoints on the kept units; exclusion counts are
/// attached to the cell of the excluded unit.
std::vector<EndpointSummary> filtered_endpoints(std::span<const PairedUnit> units, const BasinPartition& partition,
                                                const EndpointOptions& opt = {});

struct GranularityRow {
  std::string partition;
  std::string condition;
  std::optional<int> dose;
  int n = 0;
  double kicked = 0.0;
  double persist_dst = 0.0;
  double persist_src = 0.0;
};

/// Partitions must label the same trajectories (RowMismatch otherwise).
std::vector<GranularityRow> multi_granularity_persistence(
    std::span<const PairedUnit> units, const std::vector<std::pair<std::string, const BasinPartition*>>& partitions,
    const EndpointOptions& opt = {});

/// S(mid) - (S(low) + S(high)) / 2 over persist_dst rates keyed by dose.
double dip_contrast(const std::map<int, double>& rates, int low = 1500, int mid = 2000, int high = 3000);
double dip_contrast(double low, double mid, double high);

/// H(C_T | C_+) in bits over kicked units. Throws NoKickedUnits.
double transition_entropy(std::span<const std::pair<int, int>> post_terminal_pairs);
double transition_entropy(const EndpointSummary& cell);

struct HorizonRow {
  std::string condition;
  std::optional<int> dose;
  int terminal = 0;
  int n = 0;
  double persist_dst = 0.0;
  double persist_src = 0.0;
};

/// Endpoints recomputed at each terminal step under a frozen partition.
/// Throws HorizonExceedsTrajectory when labels stop short of a requested step.
std::vector<HorizonRow> horizon_rescore(std::span<const PairedUnit> units, const BasinPartition& frozen,
                                        const std::vector<int>& terminal_steps, const EndpointOptions& opt = {});

/// Columns: condition,dose,n,raw,raw_lo,raw_hi,floor,net,kicked,persist_dst,persist_src,excluded_total,excluded_by_reason
void write_endpoints_csv(std::ostream& out, const std::vector<EndpointSummary>& cells, bool header = true);

}  // namespace loopdyn
