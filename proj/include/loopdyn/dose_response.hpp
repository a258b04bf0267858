#pragma once

// Four-parameter logistic dose-response fits, empirical crossings and the
// family-cluster bootstrap of the half-effect dose.

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "loopdyn/stats.hpp"

namespace loopdyn {

/// f(D) = lower + (upper - lower) / (1 + (ed50 / D)^slope)
struct FourPLFit {
  double upper = 0.0;
  double lower = 0.0;
  double slope = 1.0;
  double ed50 = 1.0;
  double rss = 0.0;
  bool converged = false;
  bool at_bound = false;
  int evaluations = 0;
  std::vector<double> start_rss;  // weighted RSS at each start's initial parameters
  std::vector<std::string> notes;
};

double fourpl_eval(const FourPLFit& fit, double dose);

struct FourPLOptions {
  int ed50_starts = 9;
  int max_evaluations = 4000;
  double tolerance = 1e-12;
};

/// Weighted least squares over 0 <= lower <= upper <= 1, slope in (0, 10] and
/// ed50 in [min dose / 10, max dose * 10], best of log-spaced ed50 starts.
/// Fits with no identifiable midpoint come back with converged = false.
FourPLFit fit_4pl(std::span<const double> doses, std::span<const double> rates,
                  std::span<const double> weights = {}, const FourPLOptions& opt = {});

/// First linearly interpolated upward crossing of `threshold` over ascending
/// doses. Absent when the rates never reach it, or already exceed it at the
/// lowest dose.
std::optional<double> ed50_empirical_crossing(std::span<const double> doses, std::span<const double> rates,
                                              double threshold = 0.5);

struct DoseCount {
  double dose = 0.0;
  int successes = 0;
  int n = 0;

  bool operator==(const DoseCount&) const = default;
};

struct DoseTable {
  std::vector<double> doses;
  std::vector<double> rates;
  std::vector<double> weights;  // cell n
};

/// Pools counts of the listed families (repeats allowed) into per-dose rates.
DoseTable pool_families(const std::map<std::string, std::vector<DoseCount>>& families,
                        std::span<const std::size_t> family_indices);
DoseTable pool_families(const std::map<std::string, std::vector<DoseCount>>& families);

struct Ed50Bootstrap {
  double point = 0.0;  // fit on the pooled table
  double median = 0.0;
  Interval interval;
  int iterations = 0;
  int dropped = 0;  // non-converged replicates
  std::vector<double> replicates;
};

Ed50Bootstrap bootstrap_ed50(const std::map<std::string, std::vector<DoseCount>>& families, int iterations,
                             std::uint64_t seed, const FourPLOptions& opt = {}, double level = 0.95);

void write_fit_csv(std::ostream& out, const FourPLFit& fit, const std::optional<Ed50Bootstrap>& boot = std::nullopt);
/// Fitted rate on `points` log-spaced doses between lo and hi.
void write_curve_samples(std::ostream& out, const FourPLFit& fit, double lo, double hi, int points = 100);

}  // namespace loopdyn
