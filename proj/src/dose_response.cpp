#include "loopdyn/dose_response.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>

#include "loopdyn/error.hpp"
#include "loopdyn/rng.hpp"

namespace loopdyn {

namespace {

constexpr double kMaxSlope = 10.0;

using Params = std::array<double, 4>;

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

double logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

// Unconstrained coordinates -> bounded curve parameters.
struct Box {
  double log_lo;
  double log_hi;

  FourPLFit decode(const Params& u) const {
    FourPLFit f;
    f.lower = sigmoid(u[0]);
    f.upper = f.lower + (1.0 - f.lower) * sigmoid(u[1]);
    f.slope = kMaxSlope * sigmoid(u[2]);
    f.ed50 = std::exp(log_lo + (log_hi - log_lo) * sigmoid(u[3]));
    return f;
  }

  Params encode(double lower, double upper, double slope, double ed50) const {
    return {logit(lower), logit((upper - lower) / (1.0 - lower)), logit(slope / kMaxSlope),
            logit((std::log(ed50) - log_lo) / (log_hi - log_lo))};
  }
};

double weighted_rss(const FourPLFit& f, std::span<const double> doses, std::span<const double> rates,
                    std::span<const double> weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < doses.size(); ++i) {
    const double r = rates[i] - fourpl_eval(f, doses[i]);
    s += (weights.empty() ? 1.0 : weights[i]) * r * r;
  }
  return s;
}

struct SimplexResult {
  Params best;
  double value;
  int evaluations;
  bool converged;
};

template <class F>
SimplexResult nelder_mead(F&& f, const Params& start, double step, int max_eval, double tol) {
  constexpr int n = 4;
  std::array<Params, n + 1> x;
  std::array<double, n + 1> fx;
  x[0] = start;
  for (int i = 0; i < n; ++i) {
    x[i + 1] = start;
    x[i + 1][i] += step;
  }
  int evals = 0;
  auto eval = [&](const Params& p) {
    ++evals;
    return f(p);
  };
  for (int i = 0; i <= n; ++i) fx[i] = eval(x[i]);

  std::array<int, n + 1> order;
  bool converged = false;
  while (evals < max_eval) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];
    double size = 0.0;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j < n; ++j) size = std::max(size, std::abs(x[i][j] - x[best][j]));
    if (fx[worst] - fx[best] <= tol * (std::abs(fx[best]) + tol) && size < 1e-7) {
      converged = true;
      break;
    }
    Params centroid{};
    for (int i = 0; i <= n; ++i)
      if (i != worst)
        for (int j = 0; j < n; ++j) centroid[j] += x[i][j] / n;
    auto along = [&](double t) {
      Params p;
      for (int j = 0; j < n; ++j) p[j] = centroid[j] + t * (x[worst][j] - centroid[j]);
      return p;
    };
    const Params xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fx[best]) {
      const Params xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        x[worst] = xe, fx[worst] = fe;
      } else {
        x[worst] = xr, fx[worst] = fr;
      }
    } else if (fr < fx[second]) {
      x[worst] = xr, fx[worst] = fr;
    } else {
      const bool outside = fr < fx[worst];
      const Params xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fx[worst])) {
        x[worst] = xc, fx[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (int j = 0; j < n; ++j) x[i][j] = x[best][j] + 0.5 * (x[i][j] - x[best][j]);
          fx[i] = eval(x[i]);
        }
      }
    }
  }
  const int best = static_cast<int>(std::min_element(fx.begin(), fx.end()) - fx.begin());
  return {x[best], fx[best], evals, converged};
}

}  // namespace

double fourpl_eval(const FourPLFit& fit, double dose) {
  require(dose > 0.0, ErrorCode::BadParams, "dose must be positive");
  return fit.lower + (fit.upper - fit.lower) / (1.0 + std::pow(fit.ed50 / dose, fit.slope));
}

FourPLFit fit_4pl(std::span<const double> doses, std::span<const double> rates, std::span<const double> weights,
                  const FourPLOptions& opt) {
  require(doses.size() == rates.size() && (weights.empty() || weights.size() == doses.size()), ErrorCode::BadParams,
          "dose, rate and weight lengths differ");
  std::vector<double> distinct(doses.begin(), doses.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  require(distinct.size() >= 4, ErrorCode::TooFewDoses,
          "a four-parameter fit needs at least 4 distinct doses, got " + std::to_string(distinct.size()));
  require(distinct.front() > 0.0, ErrorCode::BadParams, "doses must be positive");

  const Box box{std::log(distinct.front() / 10.0), std::log(distinct.back() * 10.0)};
  auto objective = [&](const Params& u) { return weighted_rss(box.decode(u), doses, rates, weights); };

  const auto [rmin, rmax] = std::minmax_element(rates.begin(), rates.end());
  const double lower0 = std::clamp(*rmin, 0.01, 0.97);
  const double upper0 = std::clamp(*rmax, lower0 + 0.02, 0.99);

  FourPLFit out;
  SimplexResult best{{}, std::numeric_limits<double>::infinity(), 0, false};
  int evaluations = 0;
  const int starts = std::max(1, opt.ed50_starts);
  for (int s = 0; s < starts; ++s) {
    const double frac = (s + 0.5) / starts;
    const double ed50 = std::exp(box.log_lo + (box.log_hi - box.log_lo) * frac);
    for (double slope : {0.7, 2.0}) {
      const Params u0 = box.encode(lower0, upper0, slope, ed50);
      out.start_rss.push_back(objective(u0));
      auto r = nelder_mead(objective, u0, 0.5, opt.max_evaluations, opt.tolerance);
      evaluations += r.evaluations;
      if (r.value < best.value) best = r;
    }
  }
  // restart from the winner to shake off a collapsed simplex
  auto polished = nelder_mead(objective, best.best, 0.1, opt.max_evaluations, opt.tolerance);
  evaluations += polished.evaluations;
  if (polished.value <= best.value) best = polished;

  const auto curve = box.decode(best.best);
  out.upper = curve.upper;
  out.lower = curve.lower;
  out.slope = curve.slope;
  out.ed50 = curve.ed50;
  out.rss = best.value;
  out.evaluations = evaluations;
  out.converged = best.converged;
  if (!best.converged) out.notes.push_back("simplex hit the evaluation limit");

  const double log_pos = (std::log(out.ed50) - box.log_lo) / (box.log_hi - box.log_lo);
  out.at_bound = log_pos < 1e-3 || log_pos > 1.0 - 1e-3 || out.slope > kMaxSlope * (1.0 - 1e-3);
  if (out.at_bound) out.notes.push_back("parameter at bound");
  if (out.upper - out.lower < 1e-4) out.notes.push_back("asymptotes coincide; midpoint unidentified");
  if (out.at_bound || out.upper - out.lower < 1e-4) out.converged = false;
  return out;
}

std::optional<double> ed50_empirical_crossing(std::span<const double> doses, std::span<const double> rates,
                                              double threshold) {
  require(doses.size() == rates.size(), ErrorCode::BadParams, "dose and rate lengths differ");
  require(std::is_sorted(doses.begin(), doses.end()), ErrorCode::BadParams, "doses must be ascending");
  for (std::size_t i = 0; i < doses.size(); ++i) {
    if (rates[i] == threshold) return doses[i];
    if (rates[i] > threshold) {
      if (i == 0) return std::nullopt;
      const double t = (threshold - rates[i - 1]) / (rates[i] - rates[i - 1]);
      return doses[i - 1] + t * (doses[i] - doses[i - 1]);
    }
  }
  return std::nullopt;
}

DoseTable pool_families(const std::map<std::string, std::vector<DoseCount>>& families,
                        std::span<const std::size_t> family_indices) {
  std::vector<const std::vector<DoseCount>*> list;
  for (const auto& [name, cells] : families) list.push_back(&cells);
  std::map<double, std::pair<long long, long long>> pooled;
  for (auto idx : family_indices) {
    require(idx < list.size(), ErrorCode::BadParams, "family index out of range");
    for (const auto& c : *list[idx]) {
      auto& [k, n] = pooled[c.dose];
      k += c.successes;
      n += c.n;
    }
  }
  DoseTable t;
  for (const auto& [dose, kn] : pooled) {
    if (kn.second == 0) continue;
    t.doses.push_back(dose);
    t.rates.push_back(static_cast<double>(kn.first) / static_cast<double>(kn.second));
    t.weights.push_back(static_cast<double>(kn.second));
  }
  return t;
}

DoseTable pool_families(const std::map<std::string, std::vector<DoseCount>>& families) {
  std::vector<std::size_t> all(families.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return pool_families(families, all);
}

Ed50Bootstrap bootstrap_ed50(const std::map<std::string, std::vector<DoseCount>>& families, int iterations,
                             std::uint64_t seed, const FourPLOptions& opt, double level) {
  require(families.size() >= 2, ErrorCode::TooFewFamilies,
          "ED50 bootstrap needs at least 2 families, got " + std::to_string(families.size()));
  require(iterations >= 1, ErrorCode::BadParams, "iterations must be positive");
  Ed50Bootstrap out;
  out.iterations = iterations;
  {
    const auto t = pool_families(families);
    out.point = fit_4pl(t.doses, t.rates, t.weights, opt).ed50;
  }
  std::vector<std::size_t> draw(families.size());
  for (int it = 0; it < iterations; ++it) {
    Rng rng(combine_seed(combine_seed(seed, "ed50_bootstrap"), static_cast<std::uint64_t>(it)));
    for (auto& d : draw) d = uniform_index(rng, families.size());
    const auto t = pool_families(families, draw);
    if (t.doses.size() < 4) {
      ++out.dropped;
      continue;
    }
    const auto fit = fit_4pl(t.doses, t.rates, t.weights, opt);
    if (!fit.converged) {
      ++out.dropped;
      continue;
    }
    out.replicates.push_back(fit.ed50);
  }
  std::vector<double> sorted = out.replicates;
  std::sort(sorted.begin(), sorted.end());
  out.interval.level = level;
  out.interval.method = IntervalMethod::BootstrapPercentile;
  if (sorted.empty()) {
    out.interval.notes.push_back("no converged replicates");
    out.median = out.interval.lo = out.interval.hi = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.median = sorted_quantile(sorted, 0.5);
  out.interval.lo = sorted_quantile(sorted, (1.0 - level) / 2.0);
  out.interval.hi = sorted_quantile(sorted, 1.0 - (1.0 - level) / 2.0);
  if (out.dropped > 0) out.interval.notes.push_back(std::to_string(out.dropped) + " replicates dropped");
  return out;
}

void write_fit_csv(std::ostream& out, const FourPLFit& fit, const std::optional<Ed50Bootstrap>& boot) {
  out << std::setprecision(10);
  out << "upper,lower,slope,ed50,rss,converged,at_bound,boot_median,boot_lo,boot_hi,boot_dropped\n";
  out << fit.upper << ',' << fit.lower << ',' << fit.slope << ',' << fit.ed50 << ',' << fit.rss << ','
      << (fit.converged ? 1 : 0) << ',' << (fit.at_bound ? 1 : 0) << ',';
  if (boot) {
    out << boot->median << ',' << boot->interval.lo << ',' << boot->interval.hi << ',' << boot->dropped << '\n';
  } else {
    out << "null,null,null,null\n";
  }
}

void write_curve_samples(std::ostream& out, const FourPLFit& fit, double lo, double hi, int points) {
  require(lo > 0.0 && hi > lo && points >= 2, ErrorCode::BadParams, "bad curve sample range");
  out << std::setprecision(10) << "dose,fitted\n";
  for (int i = 0; i < points; ++i) {
    const double d = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (points - 1));
    out << d << ',' << fourpl_eval(fit, d) << '\n';
  }
}

}  // namespace loopdyn
