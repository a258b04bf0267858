#pragma once

// Operational attractor criteria, the three-axis hypothesis classifier, the
// replace-mode access bound and the append-mode accumulation fit.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopdyn/dose_response.hpp"

namespace loopdyn {

enum class Verdict { Pass, Fail, NotApplicable, Missing };
std::string_view to_string(Verdict v) noexcept;

struct CriterionResult {
  Verdict verdict = Verdict::Missing;
  std::string clause;  // which rule decided, empty when missing
  std::map<std::string, double> evidence;
};

inline constexpr double kAccuracyThreshold = 0.70;
inline constexpr double kRecurrenceHigh = 0.70;
inline constexpr double kRecurrenceLow = 0.40;
inline constexpr double kContractionLambda = 0.015;
inline constexpr double kAbsorbingRecurrence = 0.90;
inline constexpr double kAbsorbingSharpness = 1.50;

/// Pass iff group-aware accuracy at the decision step >= 0.70.
CriterionResult criterion_c1(std::optional<double> accuracy);

struct NullMoments {
  double recurrence_mean = 0.0;
  double recurrence_sd = 0.0;
  double dwell_mean = 0.0;
  double dwell_sd = 0.0;
  double recurrence_d = 0.0;  // Cohen's d, observed vs null units
  double dwell_d = 0.0;
};

struct C2Input {
  double recurrence = 0.0;
  double dwell = 0.0;
  std::optional<NullMoments> time_shuffled;
  std::optional<NullMoments> no_feedback;
  bool dialog = false;  // no-feedback null is unavailable for dialog
};

/// Under one null the larger z of recurrence and dwell is taken, with the d
/// of that metric; the gate is z >= 2 and d >= 0.5. With two nulls the one
/// giving the smaller winning z decides. Throws NoNullAvailable.
CriterionResult criterion_c2(const C2Input& input);

enum class RecurrenceBin { Low, Mid, High };
RecurrenceBin recurrence_bin(double r) noexcept;

/// Passes when at least two thirds (rounded up) of the embedders, canonical
/// included, share the canonical bin. Throws TooFewEmbedders under 3.
CriterionResult criterion_c3(const std::map<std::string, double>& recurrence_by_embedder,
                             const std::string& canonical);

struct C4Input {
  std::optional<double> lambda_late;
  std::optional<int> best_period;
  std::optional<double> period_2_score;
  std::optional<double> recurrence;
  std::optional<double> sharpness_dim;
  std::optional<bool> exit_return_gate;
};

/// Any of: lambda <= 0.015; best period 2 with positive score; R >= 0.90 and
/// SD <= 1.50; exit-return above its null gate. Throws AllMissing.
CriterionResult criterion_c4(const C4Input& input);

enum class AttractorLabel { Strong, AttractorLike, NotAttractor };
std::string_view to_string(AttractorLabel l) noexcept;

struct AttractorScorecard {
  std::string regime;
  std::array<CriterionResult, 4> criteria;
  AttractorLabel label = AttractorLabel::NotAttractor;
  int passes = 0;
};

/// Missing counts as fail; not-applicable is neither. Strong needs four
/// passes, attractor-like at most one fail or missing.
AttractorLabel scorecard_label(const std::array<Verdict, 4>& verdicts);
AttractorScorecard make_scorecard(std::string regime, std::array<CriterionResult, 4> criteria,
                                  const std::array<bool, 4>& declared_inapplicable = {});

nlohmann::json to_json(const AttractorScorecard& s);
/// regime,c1,c2,c3,c4,passes,label,c1_clause,c2_clause,c3_clause,c4_clause
void write_scorecards_csv(std::ostream& out, const std::vector<AttractorScorecard>& cards);

struct AxisSignals {
  // convergence
  bool basin_positive = false;
  bool dwell_above_null = false;
  // recurrence or oscillation
  bool late_recurrence_above_null = false;
  bool period_2_above_threshold = false;
  bool best_period_majority_above_1 = false;
  // divergence
  bool dispersion_growth = false;
  bool outward_monotone_drift = false;
  bool no_stable_basin = false;
};

enum class Strength { NotSupported, Weak, Moderate, Strong };
std::string_view to_string(Strength s) noexcept;

struct AxisVerdict {
  int signals = 0;
  int available = 0;
  Strength strength = Strength::NotSupported;
};

struct ThreeAxis {
  AxisVerdict convergence;  // H1a
  AxisVerdict recurrence;   // H1b
  AxisVerdict divergence;   // H1c
};

/// 0 signals: not supported; all of the axis's signals: strong; otherwise
/// moderate from 2 signals up and weak below.
Strength strength_from_count(int signals, int available) noexcept;
ThreeAxis three_axis_classifier(const AxisSignals& s);

struct BoundReport {
  double q0 = 0.0;
  double r0 = 0.0;
  double kappa = 0.0;
  int m = 0;
  double prob_lower_bound = 0.0;
  double gen_budget_upper = 0.0;
  std::optional<double> monte_carlo_estimate;
  std::optional<double> monte_carlo_se;
  std::optional<bool> consistent;  // estimate >= bound - 3 SE
};

/// Replace-mode chain over non-target states plus one target state. From
/// non-target state i the next replacement lands in the target with
/// probability entry[i], otherwise in a uniformly drawn non-target state. The
/// target keeps itself with probability stay per step.
struct AccessChain {
  std::vector<double> entry;
  double stay = 1.0;
};

/// Fraction of episodes in the target after m steps, starting from a
/// uniformly drawn non-target state.
double simulate_access_chain(const AccessChain& chain, int m, int episodes, std::uint64_t seed);

BoundReport replace_mode_bound(double q0, double r0, double kappa, int m);
BoundReport replace_mode_bound(double q0, double r0, double kappa, int m, const AccessChain& chain, int episodes,
                               std::uint64_t seed);

struct AccumulationFit {
  double floor = 0.0;
  double p_max = 0.0;
  double threshold = 0.0;  // share at the curve midpoint
  double slope = 0.0;
  bool identified = false;
  bool data_monotone = false;  // nondecreasing in share within tolerance
  FourPLFit curve;
};

/// Fits floor + (p_max - floor) / (1 + (threshold / share)^slope) on the share
/// axis. Throws TooFewPoints under 4 points.
AccumulationFit accumulation_curve_fit(std::span<const double> share, std::span<const double> rates,
                                       double monotone_tolerance = 0.0);

}  // namespace loopdyn
