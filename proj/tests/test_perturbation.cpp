#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "loopdyn/error.hpp"
#include "loopdyn/perturbation.hpp"

using namespace loopdyn;

namespace {

PerturbationCondition adversarial(int dose, bool homogeneous = false) {
  PerturbationCondition c;
  c.kind = PerturbationKind::Adversarial;
  c.mode = InjectionMode::Overwrite;
  c.dose_tokens = dose;
  c.source_experiment = "source_exp";
  c.homogeneous = homogeneous;
  return c;
}

std::vector<AdversarialSource> pool_of(int n, int words) {
  std::vector<AdversarialSource> pool;
  for (int i = 0; i < n; ++i) {
    std::string text;
    for (int w = 0; w < words; ++w) text += (w ? " s" : "s") + std::to_string(i) + "w" + std::to_string(w);
    pool.push_back({"src" + std::to_string(i), "fam" + std::to_string(i % 3), "ic", text});
  }
  return pool;
}

// Two-state chain that flips its state token with a fixed probability each step.
class FlipGenerator final : public Generator {
 public:
  explicit FlipGenerator(double p) : p_(p) {}
  std::string generate(const GenerationRequest& req, Rng& rng) const override {
    const bool one = !req.state.empty() && req.state.back() == '1';
    const bool flip = uniform01(rng) < p_;
    return (one != flip) ? "S1" : "S0";
  }
  std::string id() const override { return "flip"; }

 private:
  double p_;
};

}  // namespace

TEST_CASE("condition validation and labels") {
  PerturbationCondition c;
  CHECK(c.label() == "control");
  c.dose_tokens = 5;
  CHECK_THROWS_AS(c.validate(), Error);
  auto adv = adversarial(200);
  CHECK(adv.label() == "adversarial_dose200");
  adv.mode = InjectionMode::Insert;
  adv.dose_tokens = 80;
  CHECK(adv.label() == "adversarial_insert_dose80");
  adv.source_experiment.reset();
  CHECK_THROWS_AS(adv.validate(), Error);
  CHECK(parse_perturbation_kind("lorem") == PerturbationKind::Lorem);
  CHECK_THROWS_AS(parse_perturbation_kind("noise"), Error);
}

TEST_CASE("lorem and neutral text sizes") {
  CHECK(lorem_word_pool().size() == 70);
  Rng rng(1);
  PerturbationCondition lorem;
  lorem.kind = PerturbationKind::Lorem;
  const InjectionTarget target{"t", "famX", "ic"};
  auto plan = build_perturbation_text(lorem, target, rng, {});
  CHECK(plan.tokens == 70);
  const std::set<std::string_view> pool(lorem_word_pool().begin(), lorem_word_pool().end());
  for (const auto& w : whitespace_tokens(plan.resolved_text)) CHECK(pool.count(w) == 1);

  lorem.dose_tokens = 13;
  CHECK(build_perturbation_text(lorem, target, rng, {}).tokens == 13);

  PerturbationCondition neutral;
  neutral.kind = PerturbationKind::Neutral;
  for (int dose : {5, 40, 300}) {
    neutral.dose_tokens = dose;
    CHECK(build_perturbation_text(neutral, target, rng, {}).tokens == dose);
  }
}

TEST_CASE("adversarial sources follow the cross-family rule") {
  Rng rng(2);
  const auto pool = pool_of(6, 10);
  const InjectionTarget target{"tgt", "fam0", "ic"};

  auto plan = build_perturbation_text(adversarial(35), target, rng, pool);
  CHECK(plan.tokens == 35);
  CHECK(plan.source_ids.size() >= 2);
  std::set<std::string> distinct(plan.source_ids.begin(), plan.source_ids.end());
  CHECK(distinct.size() == plan.source_ids.size());
  for (const auto& id : plan.source_ids) {
    const auto it = std::find_if(pool.begin(), pool.end(), [&](const auto& s) { return s.trajectory_id == id; });
    REQUIRE(it != pool.end());
    CHECK(it->family != "fam0");
  }

  plan = build_perturbation_text(adversarial(30, true), target, rng, pool);
  REQUIRE(plan.source_ids.size() == 1);
  const auto words = whitespace_tokens(plan.resolved_text);
  REQUIRE(words.size() == 30);
  for (int i = 0; i < 30; ++i) CHECK(words[i] == words[i % 10]);

  plan = build_perturbation_text(adversarial(25, true), target, rng, pool);
  CHECK(plan.tokens == 25);

  const std::vector<AdversarialSource> same_family{{"a", "fam0", "ic1", "x y"}, {"tgt", "fam9", "ic", "z"}};
  try {
    build_perturbation_text(adversarial(5), target, rng, same_family);
    FAIL("expected a source-rule violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SourceRuleViolation);
  }
  const std::vector<AdversarialSource> empty{{"a", "fam1", "ic1", "   "}};
  try {
    build_perturbation_text(adversarial(5), target, rng, empty);
    FAIL("expected empty-after-tokenization");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyAfterTokenization);
  }
}

TEST_CASE("unit endpoint definitions") {
  const int T = 30;
  const auto ctrl = fixtures::path(T, 15, 1, 1, 1);
  auto u = unit_endpoints(ctrl, ctrl, fixtures::path(T, 15, 1, 3, 3), 15, 29);
  CHECK(u.jump);
  CHECK(u.persist_dst);
  CHECK(u.persist_src);
  CHECK(u.raw);
  CHECK_FALSE(u.floor);

  u = unit_endpoints(ctrl, ctrl, fixtures::path(T, 15, 1, 3, 1), 15, 29);
  CHECK(u.jump);
  CHECK_FALSE(u.persist_dst);
  CHECK_FALSE(u.persist_src);
  CHECK_FALSE(u.raw);

  u = unit_endpoints(ctrl, fixtures::path(T, 15, 1, 1, 2), fixtures::path(T, 15, 1, 3, 4), 15, 29);
  CHECK(u.floor);
  CHECK(u.jump);
  CHECK_FALSE(u.persist_dst);
  CHECK(u.persist_src);

  // A kick that only shows up two steps after injection.
  auto late = fixtures::path(T, 15, 1, 1, 5);
  for (int t = 17; t < T; ++t) late[t] = 5;
  CHECK_FALSE(unit_endpoints(ctrl, ctrl, late, 15, 29, 1).jump);
  CHECK(unit_endpoints(ctrl, ctrl, late, 15, 29, 2).persist_dst);
  CHECK_THROWS_AS(unit_endpoints(ctrl, ctrl, late, 15, 29, 4), Error);
}

TEST_CASE("reference dose-400 decomposition") {
  const auto batch = fixtures::dose400_decomposition();
  const auto cells = compute_endpoints(batch.units, batch.partition);
  REQUIRE(cells.size() == 1);
  const auto& c = cells[0];
  CHECK(c.n == 200);
  CHECK(c.jump.successes == 69);
  CHECK(c.persist_dst.rate == doctest::Approx(0.160).epsilon(1e-12));
  CHECK(c.persisted == 32);
  CHECK(c.returned_to_source == 13);
  CHECK(c.drifted_elsewhere == 24);
  CHECK(c.persisted + c.returned_to_source + c.drifted_elsewhere == c.jump.successes);
  CHECK(c.persist_src.successes == 56);
  CHECK(c.net == doctest::Approx(c.raw.rate - c.floor.rate));
  for (const auto& u : c.units) {
    if (u.persist_dst) CHECK(u.persist_src);
    if (u.persist_src) CHECK(u.jump);
  }
}

TEST_CASE("subset law on random label paths") {
  Rng rng(17);
  fixtures::LabeledBatch batch;
  for (int i = 0; i < 500; ++i) {
    std::vector<int> a(30), b(30), z(30);
    for (int t = 0; t < 30; ++t) {
      a[t] = static_cast<int>(uniform_index(rng, 4));
      b[t] = static_cast<int>(uniform_index(rng, 4));
      z[t] = static_cast<int>(uniform_index(rng, 4));
    }
    batch.add("lorem", 70, a, b, z);
  }
  for (int lag = 1; lag <= 3; ++lag) {
    const auto cells = compute_endpoints(batch.units, batch.partition, {15, 29, lag});
    for (const auto& u : cells[0].units) {
      CHECK((!u.persist_dst || u.persist_src));
      CHECK((!u.persist_src || u.jump));
    }
    CHECK(cells[0].persist_dst.rate <= cells[0].persist_src.rate);
    CHECK(cells[0].persist_src.rate <= cells[0].jump.rate);
  }
}

TEST_CASE("missing labels are reported") {
  auto batch = fixtures::dose400_decomposition();
  batch.partition.labels.erase(batch.units[3].z->id);
  CHECK_THROWS_AS(compute_endpoints(batch.units, batch.partition), Error);
}

TEST_CASE("exclusion filter") {
  auto batch = fixtures::dose400_decomposition();
  batch.units.resize(10);
  auto r = exclusion_filter(batch.units, &batch.partition);
  CHECK(r.kept.size() == 10);
  CHECK(r.excluded.empty());

  batch.units[1].b.reset();
  batch.units[4].source_rule_violation = true;
  batch.units[7].injection->text = "  ";
  r = exclusion_filter(batch.units, &batch.partition);
  CHECK(r.kept.size() == 7);
  CHECK(r.counts == std::map<std::string, int>{{"missing_arm", 1}, {"source_rule", 1}, {"empty_perturbation", 1}});

  batch.units[2].z->steps.pop_back();
  batch.units[3].injection->step = 10;
  batch.partition.labels.erase(batch.units[5].a->id);
  r = exclusion_filter(batch.units, &batch.partition);
  CHECK(r.kept.size() == 4);
  CHECK(r.counts.at("missing_terminal") == 1);
  CHECK(r.counts.at("horizon_mismatch") == 1);
  CHECK(r.counts.at("missing_labels") == 1);

  const auto cells = filtered_endpoints(batch.units, batch.partition);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].n == 4);
  CHECK(cells[0].excluded_total() == 6);
}

TEST_CASE("granularity sweep and macro merges") {
  Rng rng(23);
  fixtures::LabeledBatch batch;
  for (int i = 0; i < 400; ++i) {
    std::vector<int> a(30), b(30), z(30);
    for (int t = 0; t < 30; ++t) {
      a[t] = static_cast<int>(uniform_index(rng, 8));
      b[t] = static_cast<int>(uniform_index(rng, 8));
      z[t] = static_cast<int>(uniform_index(rng, 8));
    }
    batch.add("adversarial", 400, a, b, z);
  }
  // coarse labels: merge micro clusters pairwise
  BasinPartition macro = batch.partition;
  for (auto& [id, labels] : macro.labels)
    for (auto& l : labels) l /= 2;

  const auto rows = multi_granularity_persistence(batch.units, {{"micro", &batch.partition}, {"macro", &macro},
                                                                {"micro_copy", &batch.partition}});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].persist_dst == rows[2].persist_dst);

  const auto micro_cells = compute_endpoints(batch.units, batch.partition);
  const auto macro_cells = compute_endpoints(batch.units, macro);
  for (std::size_t i = 0; i < micro_cells[0].units.size(); ++i) {
    const auto& mi = micro_cells[0].units[i];
    const auto& ma = macro_cells[0].units[i];
    if (ma.jump) CHECK(mi.jump);
    if (mi.persist_dst && ma.jump) CHECK(ma.persist_dst);
  }

  BasinPartition partial = batch.partition;
  partial.labels.erase(partial.labels.begin());
  CHECK_THROWS_AS(multi_granularity_persistence(batch.units, {{"a", &batch.partition}, {"b", &partial}}), Error);
}

TEST_CASE("dip contrast") {
  CHECK(dip_contrast(0.511, 0.312, 0.400) == doctest::Approx(-0.1435).epsilon(1e-9));
  CHECK(dip_contrast(0.3, 0.3, 0.3) == 0.0);
  CHECK(dip_contrast({{1500, 0.5}, {2000, 0.5}, {3000, 0.3}}) == doctest::Approx(0.1));
  CHECK_THROWS_AS(dip_contrast({{1500, 0.5}, {3000, 0.3}}), Error);
}

TEST_CASE("transition entropy") {
  const std::vector<std::pair<int, int>> det{{1, 2}, {1, 2}, {3, 4}};
  CHECK(transition_entropy(det) == 0.0);
  std::vector<std::pair<int, int>> uniform;
  for (int post = 0; post < 2; ++post)
    for (int term = 0; term < 4; ++term) uniform.emplace_back(post, term);
  CHECK(transition_entropy(uniform) == doctest::Approx(2.0));
  // post 0 -> {0,0,1}, post 1 -> {2}: H = 3/4 * H(2/3, 1/3)
  const std::vector<std::pair<int, int>> crafted{{0, 0}, {0, 0}, {0, 1}, {1, 2}};
  const double h = 0.75 * -(2.0 / 3.0 * std::log2(2.0 / 3.0) + 1.0 / 3.0 * std::log2(1.0 / 3.0));
  CHECK(transition_entropy(crafted) == doctest::Approx(h));
  CHECK_THROWS_AS(transition_entropy(std::vector<std::pair<int, int>>{}), Error);
}

TEST_CASE("horizon rescoring") {
  fixtures::LabeledBatch batch;
  batch.steps = 60;
  const auto ctrl = fixtures::path(60, 15, 1, 1, 1);
  for (int i = 0; i < 20; ++i) {
    // transient kicks decay back to the source after 20 steps; committed ones stay
    auto transient = fixtures::path(60, 15, 1, 2, 1);
    for (int t = 36 + i % 10; t < 60; ++t) transient[t] = 1;
    batch.add("transient", 400, ctrl, ctrl, transient);
    batch.add("committed", 400, ctrl, ctrl, fixtures::path(60, 15, 1, 2, 2));
  }
  const auto rows = horizon_rescore(batch.units, batch.partition, {29, 39, 49, 59});
  std::map<std::string, std::vector<double>> series;
  for (const auto& r : rows) series[r.condition].push_back(r.persist_dst);
  CHECK(series["committed"] == std::vector<double>{1.0, 1.0, 1.0, 1.0});
  const auto& tr = series["transient"];
  for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i] <= tr[i - 1]);
  CHECK(tr.front() > tr.back());

  const auto base = compute_endpoints(batch.units, batch.partition, {15, 29, 1});
  CHECK(base[1].persist_dst.rate == tr.front());
  CHECK_THROWS_AS(horizon_rescore(batch.units, batch.partition, {60}), Error);
}

TEST_CASE("empirical floor matches the two-state chain") {
  const double p = 0.05;
  const int steps = 30;
  FlipGenerator gen(p);
  fixtures::LabeledBatch batch;
  BasinPartition part;
  std::vector<PairedUnit> units;
  for (int run = 0; run < 1000; ++run) {
    LoopConfig c;
    c.nudge_kind = NudgeKind::Replace;
    c.seed_text = "S0";
    c.steps = steps;
    c.family_id = "f";
    c.ic_id = "i";
    c.run_id = run;
    auto u = run_paired_unit(c, gen, std::nullopt, "control");
    for (const auto* t : {&u.a, &u.b, &u.z}) {
      std::vector<int> labels;
      for (const auto& r : (*t)->steps) labels.push_back(r.output == "S1");
      part.labels[(*t)->id] = labels;
    }
    units.push_back(std::move(u));
  }
  const auto cells = compute_endpoints(units, part, {15, steps - 1, 1});
  // P(odd flips in n steps) = (1 - (1-2p)^n) / 2; independent controls differ w.p. 2q(1-q).
  const double q = (1.0 - std::pow(1.0 - 2.0 * p, steps)) / 2.0;
  const double analytic = 2.0 * q * (1.0 - q);
  INFO("floor " << cells[0].floor.rate << " analytic " << analytic);
  CHECK(cells[0].floor.ci.lo <= analytic);
  CHECK(analytic <= cells[0].floor.ci.hi);
  CHECK(cells[0].raw.rate == 0.0);  // Z without injection replays A
}

TEST_CASE("endpoint csv") {
  const auto batch = fixtures::dose400_decomposition();
  auto cells = compute_endpoints(batch.units, batch.partition);
  cells[0].excluded["missing_arm"] = 2;
  std::ostringstream out;
  write_endpoints_csv(out, cells);
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header ==
        "condition,dose,n,raw,raw_lo,raw_hi,floor,net,kicked,persist_dst,persist_src,excluded_total,excluded_by_reason");
  CHECK(row.rfind("adversarial,400,200,", 0) == 0);
  CHECK(row.find(",2,\"{\"\"missing_arm\"\":2}\"") != std::string::npos);
}
