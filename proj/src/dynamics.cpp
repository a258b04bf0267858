#include "loopdyn/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loopdyn/error.hpp"
#include "loopdyn/partition.hpp"
#include "loopdyn/rng.hpp"

namespace loopdyn {

namespace {

constexpr double kEigenFloor = 1e-12;

double point_distance(PointMetric metric, const Eigen::Ref<const Eigen::VectorXd>& a,
                      const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (metric == PointMetric::Euclidean) return (a - b).norm();
  return cosine_distance(a, b);
}

double recurrence_range(const Eigen::MatrixXd& points, Eigen::Index begin, const RecurrenceOptions& opt) {
  require(opt.epsilon > 0.0, ErrorCode::BadParams, "recurrence epsilon must be positive");
  require(opt.tau >= 0, ErrorCode::BadParams, "recurrence tau must be non-negative");
  const Eigen::Index n = points.rows() - begin;
  require(n >= opt.tau + 2, ErrorCode::TooShort,
          "recurrence needs T >= tau + 2, got T=" + std::to_string(n) + " tau=" + std::to_string(opt.tau));
  long long hits = 0;
  long long eligible = 0;
  for (Eigen::Index t = begin; t < points.rows(); ++t) {
    for (Eigen::Index s = t + opt.tau + 1; s < points.rows(); ++s) {
      ++eligible;
      if (point_distance(opt.metric, points.row(t).transpose(), points.row(s).transpose()) < opt.epsilon) ++hits;
    }
  }
  const double denom = opt.norm == RecurrenceNorm::EligiblePairs ? static_cast<double>(eligible)
                                                                  : static_cast<double>(n) * (n - 1) / 2.0;
  return static_cast<double>(hits) / denom;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void check_ensemble(const std::vector<Eigen::MatrixXd>& runs) {
  require(runs.size() >= 2, ErrorCode::DegenerateInput, "ensemble needs at least 2 runs");
  for (const auto& r : runs)
    require(r.rows() == runs[0].rows() && r.cols() == runs[0].cols(), ErrorCode::DimMismatch,
            "ensemble runs must share T and dimension");
}

Eigen::MatrixXd step_slice(const std::vector<Eigen::MatrixXd>& runs, int step) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(runs.size()), runs[0].cols());
  for (std::size_t i = 0; i < runs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = runs[i].row(step);
  return x;
}

}  // namespace

double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a == b) return 0.0;
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

double recurrence(const Eigen::MatrixXd& points, const RecurrenceOptions& opt) {
  return recurrence_range(points, 0, opt);
}

double late_recurrence(const Eigen::MatrixXd& points, const RecurrenceOptions& opt) {
  return recurrence_range(points, points.rows() / 2, opt);
}

DwellRuns dwell_runs(std::span<const int> labels) {
  DwellRuns out;
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    out[labels[i]].push_back(static_cast<int>(j - i));
    i = j;
  }
  return out;
}

double mean_dwell(const DwellRuns& runs) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& [label, lengths] : runs) {
    for (int len : lengths) total += len;
    count += lengths.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

BasinMetrics basin_metrics(std::span<const int> labels, double late_fraction) {
  require(late_fraction > 0.0 && late_fraction < 1.0, ErrorCode::BadParams, "late fraction must be in (0, 1)");
  BasinMetrics m;
  m.target = late_window_target(labels, late_fraction);
  const auto n = static_cast<int>(labels.size());
  const int start = static_cast<int>(std::ceil(late_fraction * n - 1e-9));
  int in_target = 0;
  for (int t = start; t < n; ++t) in_target += labels[t] == m.target;
  m.basin_score = static_cast<double>(in_target) / (n - start);

  bool left = false;
  for (int t = 0; t < n; ++t) {
    const bool in = labels[t] == m.target;
    if (!m.basin_entry) {
      if (in) m.basin_entry = t;
    } else if (!in) {
      left = true;
    } else if (left) {
      m.exit_return = true;
      break;
    }
  }
  return m;
}

Periodicity periodicity(const Eigen::MatrixXd& points, PointMetric metric) {
  const auto n = static_cast<int>(points.rows());
  require(n >= 5, ErrorCode::TooShort, "periodicity needs T >= 5, got " + std::to_string(n));
  Periodicity p;
  const int max_lag = n / 2;
  for (int k = 1; k <= max_lag; ++k) {
    double sum = 0.0;
    for (int t = 0; t + k < n; ++t) sum += point_distance(metric, points.row(t).transpose(), points.row(t + k).transpose());
    p.mean_dist.push_back(sum / (n - k));
  }
  for (int k = 2; k <= max_lag; ++k) p.period_scores[k] = p.mean_dist[0] - p.mean_dist[k - 1];
  p.period_2_score = p.period_scores.at(2);
  const auto best = std::min_element(p.mean_dist.begin(), p.mean_dist.end());
  p.best_period = static_cast<int>(best - p.mean_dist.begin()) + 1;
  return p;
}

Dispersion dispersion_drift(const std::vector<Eigen::MatrixXd>& runs) {
  check_ensemble(runs);
  const auto T = static_cast<int>(runs[0].rows());
  require(T >= 2, ErrorCode::TooShort, "dispersion needs T >= 2");
  const auto n = runs.size();

  std::vector<double> spread(T);
  std::vector<Eigen::VectorXd> centroid(T);
  for (int t = 0; t < T; ++t) {
    const Eigen::MatrixXd x = step_slice(runs, t);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        sum += (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
    spread[t] = sum / (static_cast<double>(n) * (n - 1) / 2.0);
    centroid[t] = x.colwise().mean().transpose();
  }

  const int early_end = std::max(1, (T + 3) / 4);
  const int late_begin = std::min(T - 1, 3 * T / 4);
  Dispersion d;
  d.initial = std::accumulate(spread.begin(), spread.begin() + early_end, 0.0) / early_end;
  d.final_ = std::accumulate(spread.begin() + late_begin, spread.end(), 0.0) / (T - late_begin);
  if (d.initial > 0.0) {
    d.growth = (d.final_ - d.initial) / d.initial;
  } else {
    d.zero_initial = true;
  }
  d.drift = (centroid[T - 1] - centroid[0]).norm();
  std::vector<double> steps(T), displacement(T);
  for (int t = 0; t < T; ++t) {
    steps[t] = t;
    displacement[t] = (centroid[t] - centroid[0]).norm();
  }
  d.monotonicity = pearson(steps, displacement);
  return d;
}

Eigen::VectorXd step_spread(const std::vector<Eigen::MatrixXd>& runs, int step) {
  check_ensemble(runs);
  require(step >= 0 && step < runs[0].rows(), ErrorCode::BadParams, "step outside trajectory");
  const Eigen::MatrixXd x = step_slice(runs, step);
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::VectorXd sv = centered.jacobiSvd().singularValues();  // descending
  return sv.array().square() / static_cast<double>(runs.size() - 1);
}

std::vector<double> spread_exponents(const std::vector<Eigen::MatrixXd>& runs, int from, int to, int* excluded) {
  require(from < to, ErrorCode::BadParams, "spread window must have from < to");
  const Eigen::VectorXd mu_from = step_spread(runs, from);
  const Eigen::VectorXd mu_to = step_spread(runs, to);
  const int rank_cap = static_cast<int>(std::min<std::size_t>(runs.size() - 1, static_cast<std::size_t>(runs[0].cols())));
  int usable = 0;
  while (usable < mu_from.size() && usable < rank_cap && mu_from[usable] >= kEigenFloor) ++usable;
  require(usable > 0, ErrorCode::RankZero, "ensemble covariance vanishes at step " + std::to_string(from));
  std::vector<double> lambdas;
  int dropped = static_cast<int>(std::min<Eigen::Index>(mu_from.size(), rank_cap)) - usable;
  for (int k = 0; k < usable; ++k) {
    if (mu_to[k] < kEigenFloor) {
      ++dropped;
      continue;
    }
    lambdas.push_back(std::log(mu_to[k] / mu_from[k]) / (2.0 * (to - from)));
  }
  if (excluded) *excluded = dropped;
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  return lambdas;
}

SpreadSpectrum ensemble_spread_spectrum(const std::vector<Eigen::MatrixXd>& runs, int t_baseline) {
  check_ensemble(runs);
  const auto T = static_cast<int>(runs[0].rows());
  if (t_baseline < 0) t_baseline = T / 2;
  require(t_baseline < T - 1, ErrorCode::BadParams, "t_baseline must be < T-1");
  SpreadSpectrum s;
  s.window_bounds = {t_baseline, T - 1};
  s.lambdas_late = spread_exponents(runs, t_baseline, T - 1, &s.excluded_late);
  s.sharpness_dim = sharpness_dimension(s.lambdas_late);
  s.effective_rank = effective_rank(s.lambdas_late);

  s.early_bounds = {0, T / 4};
  if (T / 4 > 0) {
    try {
      s.lambdas_early = spread_exponents(runs, 0, T / 4, &s.excluded_early);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RankZero) throw;
      s.early_rank_zero = true;
    }
  }
  return s;
}

double sharpness_dimension(std::span<const double> spectrum) {
  if (spectrum.empty() || spectrum[0] < 0.0) return 0.0;
  double cumsum = 0.0;
  std::size_t j = 0;
  for (; j < spectrum.size(); ++j) {
    if (cumsum + spectrum[j] < 0.0) break;
    cumsum += spectrum[j];
  }
  if (j == spectrum.size()) return static_cast<double>(spectrum.size());
  return static_cast<double>(j) + cumsum / std::abs(spectrum[j]);
}

int effective_rank(std::span<const double> spectrum) {
  return static_cast<int>(std::count_if(spectrum.begin(), spectrum.end(), [](double l) { return l > -0.01; }));
}

RegimeDiagnostics regime_diagnostics(const Eigen::MatrixXd& points, std::span<const int> labels,
                                     const RecurrenceOptions& opt, double late_fraction) {
  require(static_cast<std::size_t>(points.rows()) == labels.size(), ErrorCode::RowMismatch,
          "points and labels differ in length");
  RegimeDiagnostics d;
  d.recurrence = recurrence(points, opt);
  d.late_recurrence = late_recurrence(points, opt);
  d.dwell = dwell_runs(labels);
  d.mean_dwell = mean_dwell(d.dwell);
  d.basin = basin_metrics(labels, late_fraction);
  d.period = periodicity(points, opt.metric);
  return d;
}

double metric_value(ShuffledMetric metric, const TrajectoryView& unit, const RecurrenceOptions& opt) {
  switch (metric) {
    case ShuffledMetric::Recurrence: return recurrence(unit.points, opt);
    case ShuffledMetric::LateRecurrence: return late_recurrence(unit.points, opt);
    case ShuffledMetric::MeanDwell: return mean_dwell(dwell_runs(unit.labels));
    case ShuffledMetric::BasinScore: return basin_metrics(unit.labels).basin_score;
    case ShuffledMetric::ExitReturn: return basin_metrics(unit.labels).exit_return ? 1.0 : 0.0;
    case ShuffledMetric::Period2Score: return periodicity(unit.points, opt.metric).period_2_score;
  }
  return 0.0;
}

ShuffleNull time_shuffled_baseline(ShuffledMetric metric, const std::vector<TrajectoryView>& units,
                                   std::uint64_t seed, int iterations, const RecurrenceOptions& opt) {
  require(iterations >= 1, ErrorCode::BadParams, "iterations must be positive");
  require(!units.empty(), ErrorCode::Empty, "no trajectories to shuffle");
  ShuffleNull out;
  for (const auto& u : units) out.per_unit_observed.push_back(metric_value(metric, u, opt));
  out.observed = std::accumulate(out.per_unit_observed.begin(), out.per_unit_observed.end(), 0.0) / units.size();
  out.per_unit_null.assign(units.size(), 0.0);

  Rng rng(combine_seed(seed, "time_shuffle"));
  for (int it = 0; it < iterations; ++it) {
    double total = 0.0;
    for (std::size_t u = 0; u < units.size(); ++u) {
      const auto& src = units[u];
      const auto T = std::max<std::size_t>(src.labels.size(), static_cast<std::size_t>(src.points.rows()));
      std::vector<int> perm(T);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = T; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
      TrajectoryView shuffled;
      if (src.points.rows() > 0) {
        shuffled.points.resize(src.points.rows(), src.points.cols());
        for (std::size_t i = 0; i < T; ++i)
          shuffled.points.row(static_cast<Eigen::Index>(i)) = src.points.row(perm[i]);
      }
      if (!src.labels.empty()) {
        shuffled.labels.resize(T);
        for (std::size_t i = 0; i < T; ++i) shuffled.labels[i] = src.labels[perm[i]];
      }
      const double v = metric_value(metric, shuffled, opt);
      out.per_unit_null[u] += v / iterations;
      total += v;
    }
    out.null_values.push_back(total / units.size());
  }
  const double n = static_cast<double>(iterations);
  out.null_mean = std::accumulate(out.null_values.begin(), out.null_values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : out.null_values) ss += (v - out.null_mean) * (v - out.null_mean);
  out.null_sd = iterations > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return out;
}

}  // namespace loopdyn
