#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "loopdyn/error.hpp"
#include "loopdyn/predictability.hpp"
#include "loopdyn/rng.hpp"

using namespace loopdyn;

namespace {

Eigen::MatrixXd noise(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * standard_normal(rng);
  return m;
}

Eigen::MatrixXd onehot_of(const std::vector<int>& y, int classes) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), classes);
  for (std::size_t i = 0; i < y.size(); ++i) h(static_cast<Eigen::Index>(i), y[i]) = 1.0;
  return h;
}

}  // namespace

TEST_CASE("separable blobs are fit exactly") {
  Rng rng(1);
  Eigen::MatrixXd x = noise(rng, 60, 2, 0.3);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = i % 3;
    x(i, y[i] % 2) += 4.0 * (y[i] == 2 ? -1.0 : 1.0);
  }
  const auto m = multinomial_logreg_fit(x, y);
  CHECK(accuracy(m.predict(x), y) == 1.0);
  CHECK(m.converged);
  CHECK(m.classes == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(multinomial_logreg_fit(x, std::vector<int>(60, 4)), Error);
}

TEST_CASE("gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int n = 40, k = 5, c = 2 + static_cast<int>(seed % 4);
    const Eigen::MatrixXd x = noise(rng, n, k, 1.0);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(c)));
    const Eigen::MatrixXd h = onehot_of(y, c);
    const Eigen::VectorXd params = noise(rng, c * (k + 1), 1, 0.7);
    Eigen::VectorXd grad;
    logreg_objective(params, x, h, 1.0 / n, &grad);
    double worst = 0.0;
    const double eps = 1e-6;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      Eigen::VectorXd up = params, down = params;
      up[i] += eps;
      down[i] -= eps;
      const double fd = (logreg_objective(up, x, h, 1.0 / n) - logreg_objective(down, x, h, 1.0 / n)) / (2 * eps);
      worst = std::max(worst, std::abs(fd - grad[i]));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("fitted gradient vanishes at the optimum") {
  Rng rng(3);
  const Eigen::MatrixXd x = noise(rng, 90, 4, 1.0);
  std::vector<int> y(90);
  for (int i = 0; i < 90; ++i) y[i] = x(i, 0) + 0.5 * standard_normal(rng) > 0 ? (x(i, 1) > 0 ? 2 : 1) : 0;
  const auto m = multinomial_logreg_fit(x, y);
  CHECK(m.converged);
  CHECK(m.grad_norm < 1e-6);
}

TEST_CASE("uninformative features give chance accuracy") {
  Rng rng(5);
  const Eigen::MatrixXd x = noise(rng, 600, 10, 1.0);
  std::vector<int> y(600);
  for (int i = 0; i < 600; ++i) y[i] = i % 3;
  const auto plan = stratified_folds(y, 11);
  CHECK(plan.folds == 5);
  const auto acc = cv_accuracy(x, y, plan);
  REQUIRE(acc);
  CHECK(std::abs(*acc - 1.0 / 3.0) <= 0.05);
}

TEST_CASE("stratified folds drop singleton classes") {
  std::vector<int> y{0, 0, 0, 1, 1, 1, 2, 2, 2, 3};
  const auto plan = stratified_folds(y, 1);
  CHECK(plan.dropped_singletons == 1);
  CHECK(plan.dropped_trajectories == 1);
  CHECK(plan.kept_rows.size() == 9);
  CHECK(plan.folds == 3);
  // every fold holds each class once
  for (int f = 0; f < 3; ++f) {
    std::multiset<int> seen;
    for (std::size_t i = 0; i < plan.kept_rows.size(); ++i)
      if (plan.fold[i] == f) seen.insert(y[static_cast<std::size_t>(plan.kept_rows[i])]);
    CHECK(seen == std::multiset<int>{0, 1, 2});
  }

  const std::vector<int> one_class{5, 5, 5, 9};
  CHECK(stratified_folds(one_class, 1).missing);
  CHECK_THROWS_AS(stratified_folds(std::vector<int>{1, 2, 3}, 1), Error);

  std::vector<Eigen::MatrixXd> xs{Eigen::MatrixXd::Zero(4, 2)};
  const auto curve = stratified_cv_accuracy(xs, {0}, one_class, 1);
  CHECK_FALSE(curve.accuracy[0].has_value());
}

TEST_CASE("decision time shows up as an accuracy jump") {
  Rng rng(9);
  const int n = 150, steps = 16;
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % 3;
  std::vector<Eigen::MatrixXd> xs;
  std::vector<int> ks;
  for (int k = 0; k < steps; ++k) {
    Eigen::MatrixXd x = noise(rng, n, 4, 1.0);
    if (k >= 10)
      for (int i = 0; i < n; ++i) x(i, y[i]) += 5.0;
    xs.push_back(x);
    ks.push_back(k);
  }
  const auto curve = stratified_cv_accuracy(xs, ks, y, 2);
  for (int k = 0; k < steps; ++k) {
    REQUIRE(curve.accuracy[k]);
    if (k < 10) {
      CHECK(*curve.accuracy[k] < 0.5);
    } else {
      CHECK(*curve.accuracy[k] > 0.9);
    }
  }
}

TEST_CASE("group folds hold families out") {
  const auto d = fixtures::family_offset_probe(4);
  const auto plan = group_folds(d.y, d.families);
  CHECK(plan.folds == 5);
  for (int f = 0; f < plan.folds; ++f) {
    std::set<std::string> test, train;
    for (std::size_t i = 0; i < plan.kept_rows.size(); ++i)
      (plan.fold[i] == f ? test : train).insert(d.families[static_cast<std::size_t>(plan.kept_rows[i])]);
    for (const auto& fam : test) CHECK(train.count(fam) == 0);
  }
  CHECK_THROWS_AS(group_folds({0, 1, 0, 1}, {"a", "a", "a", "a"}), Error);
}

TEST_CASE("label equal to family has no cross-family signal") {
  auto d = fixtures::family_offset_probe(6);
  for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = std::stoi(d.families[i].substr(6));
  const auto g = group_kfold_accuracy(d.x_per_step, d.steps, d.y, d.families);
  for (const auto& a : g.accuracy) {
    REQUIRE(a);
    CHECK(*a == 0.0);
  }
}

TEST_CASE("family-independent signal gives matching schemes") {
  Rng rng(12);
  const int n = 300;
  std::vector<int> y(n);
  std::vector<std::string> fam(n);
  Eigen::MatrixXd x = noise(rng, n, 10, 1.0);
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<int>(uniform_index(rng, 3));
    fam[i] = "f" + std::to_string(i % 6);
    x(i, y[i]) += 3.0;
  }
  const auto s = stratified_cv_accuracy({x}, {0}, y, 1);
  const auto g = group_kfold_accuracy({x}, {0}, y, fam);
  CHECK(std::abs(*s.accuracy[0] - *g.accuracy[0]) <= 0.05);
}

TEST_CASE("family offsets produce a leakage gap") {
  const auto d = fixtures::family_offset_probe(21);
  const auto s = stratified_cv_accuracy(d.x_per_step, d.steps, d.y, 3);
  const auto g = group_kfold_accuracy(d.x_per_step, d.steps, d.y, d.families);
  const auto v = predictability_claim(s, g, 10);
  REQUIRE(v.delta);
  INFO("stratified " << *v.acc_stratified << " group " << *v.acc_group);
  CHECK(*v.delta >= 0.2);
  CHECK_FALSE(v.pass);

  const auto again = stratified_cv_accuracy(d.x_per_step, d.steps, d.y, 3);
  CHECK(again.accuracy == s.accuracy);
}

TEST_CASE("leakage delta and claim rule") {
  CHECK(leakage_delta(0.803, 0.732) == doctest::Approx(0.071));
  CHECK(leakage_delta(0.896, 0.596) == doctest::Approx(0.300));
  CHECK(leakage_delta(0.5, 0.5) == 0.0);
  CHECK_THROWS_AS(leakage_delta(1.2, 0.5), Error);

  PredictabilityCurve s, g;
  s.steps = g.steps = {10};
  g.scheme = CvScheme::GroupByFamily;
  s.accuracy = {0.803};
  g.accuracy = {0.732};
  CHECK(predictability_claim(s, g).pass);
  g.accuracy = {0.69};
  auto v = predictability_claim(s, g);
  CHECK_FALSE(v.cross_family);
  CHECK_FALSE(v.pass);
  g.accuracy = {std::nullopt};
  v = predictability_claim(s, g);
  CHECK_FALSE(v.delta);
  CHECK_FALSE(v.pass);

  std::ostringstream csv;
  write_curve_csv(csv, {s, g});
  CHECK(csv.str() == "step,scheme,accuracy,folds,dropped_singletons,missing\n"
                     "10,stratified,0.803,0,0,0\n"
                     "10,group_by_family,null,0,0,1\n");
}
