#pragma once

// Regime-structure and ensemble-spread diagnostics on projected, labeled
// trajectories.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace loopdyn {

enum class PointMetric { Cosine, Euclidean };

/// 1 - cos(a, b). Exactly equal vectors give 0; a zero vector against a
/// nonzero one gives 1.
double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

enum class RecurrenceNorm { EligiblePairs, AllPairs };

struct RecurrenceOptions {
  double epsilon = 0.15;
  int tau = 3;
  PointMetric metric = PointMetric::Cosine;
  RecurrenceNorm norm = RecurrenceNorm::EligiblePairs;
};

/// Fraction of pairs (t < s, s - t > tau) closer than epsilon. Rows are time steps.
double recurrence(const Eigen::MatrixXd& points, const RecurrenceOptions& opt = {});

/// Recurrence restricted to steps t >= T/2.
double late_recurrence(const Eigen::MatrixXd& points, const RecurrenceOptions& opt = {});

using DwellRuns = std::map<int, std::vector<int>>;

DwellRuns dwell_runs(std::span<const int> labels);
double mean_dwell(const DwellRuns& runs);

struct BasinMetrics {
  int target = 0;
  double basin_score = 0.0;
  std::optional<int> basin_entry;
  bool exit_return = false;
};

BasinMetrics basin_metrics(std::span<const int> labels, double late_fraction = 0.7);

struct Periodicity {
  std::vector<double> mean_dist;       // index k-1 holds lag k
  std::map<int, double> period_scores;  // lag k >= 2 -> mean_dist(1) - mean_dist(k)
  int best_period = 1;
  double period_2_score = 0.0;
};

Periodicity periodicity(const Eigen::MatrixXd& points, PointMetric metric = PointMetric::Cosine);

struct Dispersion {
  double initial = 0.0;
  double final_ = 0.0;
  std::optional<double> growth;  // empty when the initial dispersion is zero
  double drift = 0.0;
  double monotonicity = 0.0;
  bool zero_initial = false;
};

/// runs: aligned trajectories (each T x k). Initial window is t < ceil(T/4),
/// final window is t >= floor(3T/4); distances are euclidean.
Dispersion dispersion_drift(const std::vector<Eigen::MatrixXd>& runs);

struct SpreadSpectrum {
  std::vector<double> lambdas_early;
  std::vector<double> lambdas_late;
  double sharpness_dim = 0.0;  // of the late spectrum
  int effective_rank = 0;      // of the late spectrum
  std::pair<int, int> window_bounds{0, 0};
  std::pair<int, int> early_bounds{0, 0};
  int excluded_late = 0;   // eigen-directions dropped below the 1e-12 floor
  int excluded_early = 0;
  bool early_rank_zero = false;
};

/// Sample covariance eigenvalues at one step, descending.
Eigen::VectorXd step_spread(const std::vector<Eigen::MatrixXd>& runs, int step);

/// Exponents between two steps, sorted descending. Throws RankZero when the
/// covariance at `from` vanishes.
std::vector<double> spread_exponents(const std::vector<Eigen::MatrixXd>& runs, int from, int to,
                                     int* excluded = nullptr);

/// Late window (t_baseline, T-1) and early window (0, T/4). A negative
/// t_baseline means T/2.
SpreadSpectrum ensemble_spread_spectrum(const std::vector<Eigen::MatrixXd>& runs, int t_baseline = -1);

double sharpness_dimension(std::span<const double> spectrum_desc);
int effective_rank(std::span<const double> spectrum);

struct RegimeDiagnostics {
  double recurrence = 0.0;
  double late_recurrence = 0.0;
  DwellRuns dwell;
  double mean_dwell = 0.0;
  BasinMetrics basin;
  Periodicity period;
  std::optional<Dispersion> dispersion;  // ensemble-level, filled per cell
};

RegimeDiagnostics regime_diagnostics(const Eigen::MatrixXd& points, std::span<const int> labels,
                                     const RecurrenceOptions& opt = {}, double late_fraction = 0.7);

enum class ShuffledMetric { Recurrence, LateRecurrence, MeanDwell, BasinScore, ExitReturn, Period2Score };

struct TrajectoryView {
  Eigen::MatrixXd points;  // may be empty for label-only metrics
  std::vector<int> labels;
};

struct ShuffleNull {
  double observed = 0.0;  // mean of per_unit_observed
  double null_mean = 0.0;
  double null_sd = 0.0;
  std::vector<double> null_values;        // one per iteration
  std::vector<double> per_unit_observed;  // one per trajectory
  std::vector<double> per_unit_null;      // per trajectory, averaged over iterations
};

double metric_value(ShuffledMetric metric, const TrajectoryView& unit, const RecurrenceOptions& opt = {});

/// Null distribution of the ensemble mean of `metric` when step order is
/// permuted independently within every trajectory.
ShuffleNull time_shuffled_baseline(ShuffledMetric metric, const std::vector<TrajectoryView>& units,
                                   std::uint64_t seed, int iterations = 200, const RecurrenceOptions& opt = {});

}  // namespace loopdyn
