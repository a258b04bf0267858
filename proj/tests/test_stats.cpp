#include <doctest.h>

#include <cmath>

#include "loopdyn/stats.hpp"
#include "reference_tables.hpp"

using namespace loopdyn;

namespace {

bool rounds_to(double value, double expected, int decimals) {
  return std::abs(value - expected) <= 0.5 * std::pow(10.0, -decimals) + 1e-9;
}

std::vector<double> gaussians(Rng& rng, int n, double mean, double sd) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = mean + sd * standard_normal(rng);
  return v;
}

}  // namespace

TEST_CASE("wilson reproduces reference intervals") {
  for (const auto& row : reference::kWilsonRows) {
    const auto ci = wilson_from_rate(row.rate, row.n);
    INFO("rate " << row.rate << " n " << row.n << " -> [" << ci.lo << ", " << ci.hi << "]");
    CHECK(rounds_to(ci.lo, row.lo, row.decimals));
    CHECK(rounds_to(ci.hi, row.hi, row.decimals));
  }
  const auto full = wilson_interval(50, 50);
  CHECK(full.hi == 1.0);
  CHECK(wilson_interval(0, 50).lo == 0.0);
  CHECK_THROWS_AS(wilson_interval(3, 2), Error);
  CHECK_THROWS_AS(wilson_interval(0, 0), Error);
  CHECK_THROWS_AS(wilson_interval(-1, 5), Error);

  for (long long n = 1; n <= 60; ++n)
    for (long long s = 0; s <= n; ++s) {
      const auto ci = wilson_interval(s, n);
      const double p = static_cast<double>(s) / static_cast<double>(n);
      CHECK(ci.lo <= p);
      CHECK(ci.hi >= p);
      CHECK(ci.lo >= 0.0);
      CHECK(ci.hi <= 1.0);
    }
}

TEST_CASE("bootstrap percentile interval") {
  const auto c = bootstrap_ci(std::vector<double>(30, 2.5), mean_of, 500, 1);
  CHECK(c.lo == 2.5);
  CHECK(c.hi == 2.5);
  CHECK_THROWS_AS(bootstrap_ci({}, mean_of, 500, 1), Error);

  Rng rng(2);
  std::vector<double> v = gaussians(rng, 40, 0.0, 1.0);
  const auto a = bootstrap_ci(v, mean_of, 1000, 9);
  std::reverse(v.begin(), v.end());
  const auto b = bootstrap_ci(v, mean_of, 1000, 9);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
}

TEST_CASE("bootstrap coverage of a uniform mean") {
  Rng rng(77);
  const int reps = 1000;
  int covered = 0;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> v(50);
    for (auto& x : v) x = uniform01(rng);
    const auto ci = bootstrap_ci(v, mean_of, 10000, static_cast<std::uint64_t>(r));
    covered += ci.lo <= 0.5 && 0.5 <= ci.hi;
  }
  const double coverage = static_cast<double>(covered) / reps;
  INFO("coverage " << coverage);
  CHECK(std::abs(coverage - 0.95) <= 0.02);
}

TEST_CASE("family-cluster bootstrap") {
  std::map<std::string, std::vector<double>> one{{"f", {1.0, 2.0}}};
  CHECK_THROWS_AS(family_cluster_bootstrap(one, mean_of, 100, 1), Error);

  std::map<std::string, std::vector<double>> dup{{"a", {1.0, 2.0, 4.0}}, {"b", {1.0, 2.0, 4.0}}};
  const auto d = family_cluster_bootstrap(dup, mean_of, 200, 1);
  CHECK(d.lo == doctest::Approx(d.hi));
  CHECK_FALSE(d.notes.empty());

  Rng rng(31);
  int wider = 0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    std::map<std::string, std::vector<double>> fams;
    std::vector<double> rows;
    for (int f = 0; f < 5; ++f) {
      const double offset = standard_normal(rng);
      auto units = gaussians(rng, 20, offset, 0.3);
      rows.insert(rows.end(), units.begin(), units.end());
      fams["fam" + std::to_string(f)] = units;
    }
    const auto fam = family_cluster_bootstrap(fams, mean_of, 1000, static_cast<std::uint64_t>(r));
    const auto row = bootstrap_ci(rows, mean_of, 1000, static_cast<std::uint64_t>(r));
    wider += fam.width() > row.width();
  }
  CHECK(wider >= 90);

  // Homogeneous families: the two resampling schemes agree on average.
  double ratio_sum = 0.0;
  const int hreps = 50;
  for (int r = 0; r < hreps; ++r) {
    std::map<std::string, std::vector<double>> fams;
    std::vector<double> rows;
    for (int f = 0; f < 20; ++f) {
      auto units = gaussians(rng, 10, 0.0, 1.0);
      rows.insert(rows.end(), units.begin(), units.end());
      fams["fam" + std::to_string(f)] = units;
    }
    const auto fam = family_cluster_bootstrap(fams, mean_of, 1000, static_cast<std::uint64_t>(r));
    const auto row = bootstrap_ci(rows, mean_of, 1000, static_cast<std::uint64_t>(r));
    ratio_sum += fam.width() / row.width();
  }
  INFO("mean width ratio " << ratio_sum / hreps);
  CHECK(std::abs(ratio_sum / hreps - 1.0) <= 0.10);
}

TEST_CASE("permutation test") {
  const std::vector<double> same{1, 2, 3, 4, 5};
  CHECK(permutation_test(same, same, 2000, 1).p_value > 0.9);

  std::vector<double> lo(20), hi(20);
  for (int i = 0; i < 20; ++i) {
    lo[i] = i;
    hi[i] = 100 + i;
  }
  CHECK(permutation_test(lo, hi, 9999, 2).p_value <= 0.001);

  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = gaussians(rng, 6, 0.0, 1.0);
    const auto b = gaussians(rng, 6, 0.8, 1.0);
    const double exact = permutation_test_exact(a, b);
    const int iters = 20000;
    const auto mc = permutation_test(a, b, iters, static_cast<std::uint64_t>(trial));
    const double se = std::sqrt(exact * (1.0 - exact) / iters);
    INFO("exact " << exact << " mc " << mc.p_value);
    CHECK(std::abs(mc.p_value - exact) <= 4.0 * se + 1.0 / (iters + 1.0));

    const auto swapped = permutation_test(b, a, iters, static_cast<std::uint64_t>(trial));
    CHECK(swapped.p_value == mc.p_value);
    CHECK(permutation_test_exact(b, a) == exact);
  }

  // Unequal sizes keep the symmetry.
  const auto a = gaussians(rng, 7, 0.0, 1.0);
  const auto b = gaussians(rng, 12, 0.5, 1.0);
  CHECK(permutation_test(a, b, 3000, 5).p_value == permutation_test(b, a, 3000, 5).p_value);
  CHECK_THROWS_AS(permutation_test({}, a, 10, 1), Error);
}

TEST_CASE("cohens d") {
  const std::vector<double> a{1, 2, 3}, b{1, 2, 3};
  CHECK(cohens_d(a, b) == 0.0);
  const std::vector<double> one{0, 2}, zero{-1, 1};  // both variance 2
  CHECK(cohens_d(one, zero) == doctest::Approx(1.0 / std::sqrt(2.0)));
  const std::vector<double> u{0.0, 2.0, 1.0, 1.0}, w{-1.0, 1.0, 0.0, 0.0};
  // means 1 and 0; variances 2/3 each -> pooled SD sqrt(2/3)
  CHECK(cohens_d(u, w) == doctest::Approx(1.0 / std::sqrt(2.0 / 3.0)));
  CHECK_THROWS_AS(cohens_d(std::vector<double>{1, 1}, std::vector<double>{1, 1}), Error);
  CHECK_THROWS_AS(cohens_d(std::vector<double>{1}, std::vector<double>{1, 2}), Error);

  Rng rng(4);
  double total = 0.0;
  for (int r = 0; r < 100; ++r) {
    const auto x = gaussians(rng, 200, 0.5, 1.0);
    const auto y = gaussians(rng, 200, 0.0, 1.0);
    total += cohens_d(x, y);
  }
  CHECK(std::abs(total / 100 - 0.5) <= 0.1);
}

TEST_CASE("significance gate") {
  CHECK(significance_gate(3.0, 0.0, 1.0, 0.6).pass);
  CHECK_FALSE(significance_gate(3.0, 0.0, 1.0, 0.2).pass);
  CHECK_FALSE(significance_gate(1.5, 0.0, 1.0, 0.8).pass);
  CHECK(significance_gate(2.0, 0.0, 1.0, 0.5).pass);
  CHECK_THROWS_AS(significance_gate(1.0, 0.0, 0.0, 1.0), Error);
  // monotone in z and d
  for (double z = 0.0; z <= 4.0; z += 0.25)
    for (double d = 0.0; d <= 1.0; d += 0.05)
      if (significance_gate(z, 0.0, 1.0, d).pass) {
        CHECK(significance_gate(z + 0.5, 0.0, 1.0, d).pass);
        CHECK(significance_gate(z, 0.0, 1.0, d + 0.1).pass);
      }
}
