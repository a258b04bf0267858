#pragma once

// Intervals, resampling tests and effect sizes.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "loopdyn/error.hpp"
#include "loopdyn/rng.hpp"

namespace loopdyn {

enum class IntervalMethod { Wilson, BootstrapPercentile };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  IntervalMethod method = IntervalMethod::Wilson;
  std::vector<std::string> notes;

  double width() const noexcept { return hi - lo; }
};

/// Two-sided standard normal quantile for a central coverage level.
double normal_critical(double level);

Interval wilson_interval(long long successes, long long n, double level = 0.95);

/// Rates reported to 2-3 decimals are turned back into counts by rounding rate * n.
Interval wilson_from_rate(double rate, long long n, double level = 0.95);

/// Linear-interpolation percentile (q in [0, 1]) of already sorted values.
double sorted_quantile(std::span<const double> sorted, double q);

using Reducer = std::function<double(std::span<const double>)>;
double mean_of(std::span<const double> values);

/// Percentile interval of `statistic` over resamples with replacement. The
/// input is sorted first, so the result does not depend on input order.
Interval bootstrap_ci(std::vector<double> values, const Reducer& statistic, int iterations, std::uint64_t seed,
                      double level = 0.95);

/// Resamples whole families with replacement; the statistic sees the pooled
/// units of the drawn families (a family drawn twice contributes twice).
template <class Unit, class Statistic>
  requires std::invocable<Statistic, std::span<const Unit>>
Interval family_cluster_bootstrap(const std::map<std::string, std::vector<Unit>>& families, Statistic&& statistic,
                                  int iterations, std::uint64_t seed, double level = 0.95) {
  require(families.size() >= 2, ErrorCode::TooFewFamilies,
          "family bootstrap needs at least 2 families, got " + std::to_string(families.size()));
  require(iterations >= 1, ErrorCode::BadParams, "iterations must be positive");
  std::vector<const std::vector<Unit>*> groups;
  for (const auto& [name, units] : families) groups.push_back(&units);

  Interval out;
  out.level = level;
  out.method = IntervalMethod::BootstrapPercentile;
  if constexpr (std::equality_comparable<Unit>) {
    const bool all_same = std::all_of(groups.begin(), groups.end(), [&](auto* g) { return *g == *groups[0]; });
    if (all_same) out.notes.push_back("all families identical; interval is degenerate");
  }

  Rng rng(combine_seed(seed, "family_bootstrap"));
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(iterations));
  std::vector<Unit> pooled;
  for (int it = 0; it < iterations; ++it) {
    pooled.clear();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto* drawn = groups[uniform_index(rng, groups.size())];
      pooled.insert(pooled.end(), drawn->begin(), drawn->end());
    }
    stats.push_back(statistic(std::span<const Unit>(pooled)));
  }
  std::sort(stats.begin(), stats.end());
  out.lo = sorted_quantile(stats, (1.0 - level) / 2.0);
  out.hi = sorted_quantile(stats, 1.0 - (1.0 - level) / 2.0);
  return out;
}

struct PermutationResult {
  double p_value = 1.0;
  double observed = 0.0;  // |mean(a) - mean(b)|
  int iterations = 0;
  int at_least_as_extreme = 0;
};

/// Two-sided test of the mean difference. p = (b + 1) / (iterations + 1).
/// Resamples draw the smaller group's size from the sorted pooled values, so
/// swapping the groups gives the same p.
PermutationResult permutation_test(std::span<const double> a, std::span<const double> b, int iterations,
                                   std::uint64_t seed);

/// Exact two-sided p by enumerating every split (small groups only).
double permutation_test_exact(std::span<const double> a, std::span<const double> b);

/// (mean(a) - mean(b)) / pooled SD.
double cohens_d(std::span<const double> a, std::span<const double> b);

struct GateResult {
  double z = 0.0;
  double d = 0.0;
  bool pass = false;
};

/// Passes iff z = (observed - null_mean) / null_sd >= 2 and d >= 0.5.
GateResult significance_gate(double observed, double null_mean, double null_sd, double d);

}  // namespace loopdyn
