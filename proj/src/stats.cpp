#include "loopdyn/stats.hpp"

#include <bit>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace loopdyn {

namespace {

constexpr double kTieTolerance = 1e-12;

double abs_mean_diff(std::span<const double> x, const std::vector<bool>& in_first, std::size_t n_first) {
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) (in_first[i] ? s1 : s2) += x[i];
  return std::abs(s1 / static_cast<double>(n_first) - s2 / static_cast<double>(x.size() - n_first));
}

double sample_variance(std::span<const double> x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

double normal_critical(double level) {
  require(level > 0.0 && level < 1.0, ErrorCode::BadParams, "level must be in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 1.0 - (1.0 - level) / 2.0);
}

Interval wilson_interval(long long successes, long long n, double level) {
  require(n >= 1 && successes >= 0 && successes <= n, ErrorCode::BadCount,
          "wilson needs 0 <= successes <= n and n >= 1, got " + std::to_string(successes) + "/" + std::to_string(n));
  const double z = normal_critical(level);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  Interval out;
  out.level = level;
  out.method = IntervalMethod::Wilson;
  out.lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
  out.hi = successes == n ? 1.0 : std::min(1.0, center + half);
  return out;
}

Interval wilson_from_rate(double rate, long long n, double level) {
  require(rate >= 0.0 && rate <= 1.0, ErrorCode::BadCount, "rate must be in [0, 1]");
  return wilson_interval(std::llround(rate * static_cast<double>(n)), n, level);
}

double sorted_quantile(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorCode::Empty, "quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double mean_of(std::span<const double> values) {
  require(!values.empty(), ErrorCode::Empty, "mean of empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

Interval bootstrap_ci(std::vector<double> values, const Reducer& statistic, int iterations, std::uint64_t seed,
                      double level) {
  require(!values.empty(), ErrorCode::Empty, "bootstrap of empty sample");
  require(iterations >= 1, ErrorCode::BadParams, "iterations must be positive");
  std::sort(values.begin(), values.end());
  Rng rng(combine_seed(seed, "bootstrap"));
  std::vector<double> sample(values.size());
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    for (auto& v : sample) v = values[uniform_index(rng, values.size())];
    stats.push_back(statistic(sample));
  }
  std::sort(stats.begin(), stats.end());
  Interval out;
  out.level = level;
  out.method = IntervalMethod::BootstrapPercentile;
  out.lo = sorted_quantile(stats, (1.0 - level) / 2.0);
  out.hi = sorted_quantile(stats, 1.0 - (1.0 - level) / 2.0);
  return out;
}

PermutationResult permutation_test(std::span<const double> a, std::span<const double> b, int iterations,
                                   std::uint64_t seed) {
  require(!a.empty() && !b.empty(), ErrorCode::Empty, "permutation test needs two nonempty groups");
  require(iterations >= 1, ErrorCode::BadParams, "iterations must be positive");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  const std::size_t k = std::min(a.size(), b.size());

  PermutationResult r;
  r.iterations = iterations;
  r.observed = std::abs(mean_of(a) - mean_of(b));
  Rng rng(combine_seed(seed, "permutation"));
  std::vector<std::size_t> idx(pooled.size());
  std::vector<bool> chosen(pooled.size());
  for (int it = 0; it < iterations; ++it) {
    std::iota(idx.begin(), idx.end(), 0);
    std::fill(chosen.begin(), chosen.end(), false);
    // partial Fisher-Yates: the first k slots are the drawn group
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      chosen[idx[i]] = true;
    }
    if (abs_mean_diff(pooled, chosen, k) >= r.observed - kTieTolerance) ++r.at_least_as_extreme;
  }
  r.p_value = (r.at_least_as_extreme + 1.0) / (iterations + 1.0);
  return r;
}

double permutation_test_exact(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::Empty, "permutation test needs two nonempty groups");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  require(pooled.size() <= 24, ErrorCode::BadParams, "exact enumeration limited to 24 values");
  const double observed = std::abs(mean_of(a) - mean_of(b));
  const std::size_t n = pooled.size();
  long long total = 0, extreme = 0;
  std::vector<bool> in_first(n);
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != a.size()) continue;
    for (std::size_t i = 0; i < n; ++i) in_first[i] = (mask >> i) & 1u;
    ++total;
    if (abs_mean_diff(pooled, in_first, a.size()) >= observed - kTieTolerance) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, ErrorCode::BadCount, "cohens_d needs at least 2 values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled = ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
  require(pooled > 0.0, ErrorCode::ZeroVariance, "pooled standard deviation is zero");
  return (mean_of(a) - mean_of(b)) / std::sqrt(pooled);
}

GateResult significance_gate(double observed, double null_mean, double null_sd, double d) {
  require(null_sd > 0.0, ErrorCode::BadParams, "null standard deviation must be positive");
  GateResult g;
  g.z = (observed - null_mean) / null_sd;
  g.d = d;
  g.pass = g.z >= 2.0 && d >= 0.5;
  return g;
}

}  // namespace loopdyn
