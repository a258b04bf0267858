#include "loopdyn/audit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loopdyn/error.hpp"
#include "loopdyn/rng.hpp"

namespace loopdyn {

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::NotApplicable: return "not_applicable";
    case Verdict::Missing: return "missing";
  }
  return "missing";
}

std::string_view to_string(AttractorLabel l) noexcept {
  switch (l) {
    case AttractorLabel::Strong: return "strong";
    case AttractorLabel::AttractorLike: return "attractor_like";
    case AttractorLabel::NotAttractor: return "not_attractor";
  }
  return "not_attractor";
}

std::string_view to_string(Strength s) noexcept {
  switch (s) {
    case Strength::NotSupported: return "not_supported";
    case Strength::Weak: return "weak";
    case Strength::Moderate: return "moderate";
    case Strength::Strong: return "strong";
  }
  return "not_supported";
}

CriterionResult criterion_c1(std::optional<double> accuracy) {
  CriterionResult r;
  if (!accuracy) return r;
  require(*accuracy >= 0.0 && *accuracy <= 1.0, ErrorCode::BadParams, "accuracy must lie in [0, 1]");
  r.evidence["accuracy"] = *accuracy;
  r.verdict = *accuracy >= kAccuracyThreshold ? Verdict::Pass : Verdict::Fail;
  r.clause = "group_accuracy";
  return r;
}

namespace {

struct NullGate {
  double z = 0.0;
  double d = 0.0;
  std::string metric;
  bool pass = false;
};

NullGate gate_under(const C2Input& in, const NullMoments& n) {
  require(n.recurrence_sd > 0.0 && n.dwell_sd > 0.0, ErrorCode::BadParams, "null standard deviations must be positive");
  const double zr = (in.recurrence - n.recurrence_mean) / n.recurrence_sd;
  const double zd = (in.dwell - n.dwell_mean) / n.dwell_sd;
  NullGate g;
  if (zr >= zd) {
    g = {zr, n.recurrence_d, "recurrence", false};
  } else {
    g = {zd, n.dwell_d, "dwell", false};
  }
  g.pass = g.z >= 2.0 && g.d >= 0.5;
  return g;
}

}  // namespace

CriterionResult criterion_c2(const C2Input& in) {
  if (in.dialog) {
    require(in.time_shuffled.has_value(), ErrorCode::NoNullAvailable, "dialog regimes need the time-shuffled null");
  } else {
    require(in.time_shuffled || in.no_feedback, ErrorCode::NoNullAvailable, "no null ensemble supplied");
  }
  std::vector<std::pair<std::string, NullGate>> gates;
  if (in.time_shuffled) gates.emplace_back("time_shuffled", gate_under(in, *in.time_shuffled));
  if (in.no_feedback && !in.dialog) gates.emplace_back("no_feedback", gate_under(in, *in.no_feedback));
  const auto& [name, g] = *std::min_element(gates.begin(), gates.end(),
                                            [](const auto& a, const auto& b) { return a.second.z < b.second.z; });
  CriterionResult r;
  r.verdict = g.pass ? Verdict::Pass : Verdict::Fail;
  r.clause = name + ":" + g.metric;
  r.evidence = {{"recurrence", in.recurrence}, {"dwell", in.dwell}, {"z", g.z}, {"d", g.d}};
  for (const auto& [n, gate] : gates) r.evidence["z_" + n] = gate.z;
  return r;
}

RecurrenceBin recurrence_bin(double r) noexcept {
  if (r >= kRecurrenceHigh) return RecurrenceBin::High;
  if (r <= kRecurrenceLow) return RecurrenceBin::Low;
  return RecurrenceBin::Mid;
}

CriterionResult criterion_c3(const std::map<std::string, double>& by_embedder, const std::string& canonical) {
  require(by_embedder.size() >= 3, ErrorCode::TooFewEmbedders,
          "embedder robustness needs at least 3 embedders, got " + std::to_string(by_embedder.size()));
  const auto it = by_embedder.find(canonical);
  require(it != by_embedder.end(), ErrorCode::TooFewEmbedders, "canonical embedder " + canonical + " missing");
  const auto bin = recurrence_bin(it->second);
  int agree = 0;
  CriterionResult r;
  for (const auto& [name, value] : by_embedder) {
    agree += recurrence_bin(value) == bin;
    r.evidence["recurrence_" + name] = value;
  }
  const int n = static_cast<int>(by_embedder.size());
  const int needed = (2 * n + 2) / 3;
  r.evidence["agreeing"] = agree;
  r.verdict = agree >= needed ? Verdict::Pass : Verdict::Fail;
  r.clause = bin == RecurrenceBin::High ? "high" : bin == RecurrenceBin::Low ? "low" : "mid";
  return r;
}

CriterionResult criterion_c4(const C4Input& in) {
  const bool any = in.lambda_late || in.best_period || in.period_2_score || in.recurrence || in.sharpness_dim ||
                   in.exit_return_gate;
  require(any, ErrorCode::AllMissing, "no C4 inputs supplied");
  CriterionResult r;
  if (in.lambda_late) r.evidence["lambda_late"] = *in.lambda_late;
  if (in.best_period) r.evidence["best_period"] = *in.best_period;
  if (in.period_2_score) r.evidence["period_2_score"] = *in.period_2_score;
  if (in.recurrence) r.evidence["recurrence"] = *in.recurrence;
  if (in.sharpness_dim) r.evidence["sharpness_dim"] = *in.sharpness_dim;
  r.verdict = Verdict::Fail;
  std::vector<std::string> fired;
  if (in.lambda_late && *in.lambda_late <= kContractionLambda) fired.push_back("contraction");
  if (in.best_period && in.period_2_score && *in.best_period == 2 && *in.period_2_score > 0.0)
    fired.push_back("period_2");
  if (in.recurrence && in.sharpness_dim && *in.recurrence >= kAbsorbingRecurrence &&
      *in.sharpness_dim <= kAbsorbingSharpness)
    fired.push_back("absorbing");
  if (in.exit_return_gate && *in.exit_return_gate) fired.push_back("exit_return");
  if (!fired.empty()) {
    r.verdict = Verdict::Pass;
    for (std::size_t i = 0; i < fired.size(); ++i) r.clause += (i ? "+" : "") + fired[i];
  }
  return r;
}

AttractorLabel scorecard_label(const std::array<Verdict, 4>& v) {
  int passes = 0, fails = 0;
  for (auto x : v) {
    passes += x == Verdict::Pass;
    fails += x == Verdict::Fail || x == Verdict::Missing;
  }
  if (passes == 4) return AttractorLabel::Strong;
  if (fails <= 1) return AttractorLabel::AttractorLike;
  return AttractorLabel::NotAttractor;
}

AttractorScorecard make_scorecard(std::string regime, std::array<CriterionResult, 4> criteria,
                                  const std::array<bool, 4>& declared_inapplicable) {
  AttractorScorecard s;
  s.regime = std::move(regime);
  std::array<Verdict, 4> v{};
  for (int i = 0; i < 4; ++i) {
    if (declared_inapplicable[i]) {
      criteria[i].verdict = Verdict::NotApplicable;
      criteria[i].clause = "declared_inapplicable";
    } else if (criteria[i].verdict == Verdict::NotApplicable) {
      // inapplicability is never inferred after the fact
      criteria[i].verdict = Verdict::Missing;
    }
    v[i] = criteria[i].verdict;
    s.passes += v[i] == Verdict::Pass;
  }
  s.criteria = std::move(criteria);
  s.label = scorecard_label(v);
  return s;
}

nlohmann::json to_json(const AttractorScorecard& s) {
  nlohmann::json j{{"regime", s.regime}, {"label", to_string(s.label)}, {"passes", s.passes}};
  for (int i = 0; i < 4; ++i) {
    const auto& c = s.criteria[i];
    j["c" + std::to_string(i + 1)] = {{"verdict", to_string(c.verdict)}, {"clause", c.clause}, {"evidence", c.evidence}};
  }
  return j;
}

void write_scorecards_csv(std::ostream& out, const std::vector<AttractorScorecard>& cards) {
  out << "regime,c1,c2,c3,c4,passes,label,c1_clause,c2_clause,c3_clause,c4_clause\n";
  for (const auto& s : cards) {
    out << s.regime;
    for (const auto& c : s.criteria) out << ',' << to_string(c.verdict);
    out << ',' << s.passes << ',' << to_string(s.label);
    for (const auto& c : s.criteria) out << ',' << c.clause;
    out << '\n';
  }
}

Strength strength_from_count(int signals, int available) noexcept {
  if (signals <= 0) return Strength::NotSupported;
  if (signals >= available) return Strength::Strong;
  return signals >= 2 ? Strength::Moderate : Strength::Weak;
}

ThreeAxis three_axis_classifier(const AxisSignals& s) {
  auto axis = [](std::initializer_list<bool> flags) {
    AxisVerdict v;
    v.available = static_cast<int>(flags.size());
    for (bool f : flags) v.signals += f;
    v.strength = strength_from_count(v.signals, v.available);
    return v;
  };
  return {axis({s.basin_positive, s.dwell_above_null}),
          axis({s.late_recurrence_above_null, s.period_2_above_threshold, s.best_period_majority_above_1}),
          axis({s.dispersion_growth, s.outward_monotone_drift, s.no_stable_basin})};
}

double simulate_access_chain(const AccessChain& chain, int m, int episodes, std::uint64_t seed) {
  require(!chain.entry.empty(), ErrorCode::BadParams, "access chain needs non-target states");
  require(m >= 1 && episodes >= 1, ErrorCode::BadParams, "steps and episodes must be positive");
  Rng rng(combine_seed(seed, "access_chain"));
  const std::size_t states = chain.entry.size();
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    bool in_target = false;
    std::size_t state = uniform_index(rng, states);
    for (int step = 0; step < m; ++step) {
      if (in_target) {
        if (uniform01(rng) >= chain.stay) {
          in_target = false;
          state = uniform_index(rng, states);
        }
      } else if (uniform01(rng) < chain.entry[state]) {
        in_target = true;
      } else {
        state = uniform_index(rng, states);
      }
    }
    hits += in_target;
  }
  return static_cast<double>(hits) / episodes;
}

BoundReport replace_mode_bound(double q0, double r0, double kappa, int m) {
  require(q0 > 0.0 && q0 <= 1.0, ErrorCode::BadParams, "q0 must lie in (0, 1]");
  require(r0 > 0.0 && r0 <= 1.0, ErrorCode::BadParams, "r0 must lie in (0, 1]");
  require(kappa > 0.0, ErrorCode::BadParams, "kappa must be positive");
  require(m >= 1, ErrorCode::BadParams, "m must be at least 1");
  BoundReport b;
  b.q0 = q0;
  b.r0 = r0;
  b.kappa = kappa;
  b.m = m;
  b.prob_lower_bound = r0 * (1.0 - std::pow(1.0 - q0, m));
  b.gen_budget_upper = kappa * m;
  return b;
}

BoundReport replace_mode_bound(double q0, double r0, double kappa, int m, const AccessChain& chain, int episodes,
                               std::uint64_t seed) {
  auto b = replace_mode_bound(q0, r0, kappa, m);
  const double p = simulate_access_chain(chain, m, episodes, seed);
  const double se = std::sqrt(p * (1.0 - p) / episodes);
  b.monte_carlo_estimate = p;
  b.monte_carlo_se = se;
  b.consistent = p >= b.prob_lower_bound - 3.0 * se;
  return b;
}

AccumulationFit accumulation_curve_fit(std::span<const double> share, std::span<const double> rates,
                                       double monotone_tolerance) {
  require(share.size() == rates.size(), ErrorCode::BadParams, "share and rate lengths differ");
  require(share.size() >= 4, ErrorCode::TooFewPoints, "accumulation fit needs at least 4 points");
  std::vector<std::size_t> order(share.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return share[a] < share[b]; });
  std::vector<double> x, y;
  for (auto i : order) {
    x.push_back(share[i]);
    y.push_back(rates[i]);
  }
  AccumulationFit out;
  out.data_monotone = true;
  for (std::size_t i = 1; i < y.size(); ++i)
    if (y[i] < y[i - 1] - monotone_tolerance) out.data_monotone = false;
  out.curve = fit_4pl(x, y);
  out.floor = out.curve.lower;
  out.p_max = out.curve.upper;
  out.threshold = out.curve.ed50;
  out.slope = out.curve.slope;
  out.identified = out.curve.converged;
  return out;
}

}  // namespace loopdyn
