#include "loopdyn/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "loopdyn/error.hpp"
#include "loopdyn/rng.hpp"

namespace loopdyn {

ProjectionModel fit_pca(const Eigen::MatrixXd& x, int k) {
  require(k >= 1, ErrorCode::ConfigInvalid, "projection k must be positive");
  require(x.rows() >= 2, ErrorCode::DegenerateInput, "PCA needs at least two rows");
  ProjectionModel model;
  model.requested_k = k;
  model.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
  const double top = evals.size() > 0 ? evals[evals.size() - 1] : 0.0;
  require(top > 0.0, ErrorCode::DegenerateInput, "all rows identical; nothing to project");

  int available = 0;
  for (Eigen::Index i = evals.size() - 1; i >= 0 && evals[i] > 1e-12 * top; --i) ++available;
  const int kept = std::min(k, available);
  model.rank_deficient = kept < k;
  model.components.resize(kept, x.cols());
  model.explained_variance.resize(kept);
  for (int c = 0; c < kept; ++c) {
    const Eigen::Index src = evals.size() - 1 - c;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    model.components.row(c) = v.transpose();
    model.explained_variance[c] = evals[src];
  }
  return model;
}

ProjectionModel fit_pca_joint(const EmbeddingMatrix& matrix, int k) {
  if (matrix.is_subset) {
    fail(ErrorCode::JointFitViolation, "projection must be fit on the full experiment cloud, not a subset");
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
    if (matrix.zero_flagged.empty() || !matrix.zero_flagged[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(keep.size()), matrix.dim());
  for (std::size_t r = 0; r < keep.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = matrix.vectors.row(keep[r]);
  return fit_pca(x, k);
}

std::string_view to_string(ClusterMethod method) noexcept {
  return method == ClusterMethod::KMeans ? "kmeans" : "density";
}

ClusterMethod parse_cluster_method(std::string_view text) {
  if (text == "kmeans") return ClusterMethod::KMeans;
  if (text == "density") return ClusterMethod::Density;
  fail(ErrorCode::ConfigInvalid, "unknown cluster method '" + std::string(text) + "'");
}

std::vector<int> assign_nearest(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points) {
  std::vector<int> labels(static_cast<std::size_t>(points.rows()), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
      }
    }
  }
  return labels;
}

namespace {

double inertia(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    s += (points.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return s;
}

}  // namespace

namespace {

ClusterModel kmeans_once(const Eigen::MatrixXd& points, int k_clusters, std::uint64_t seed, int max_iter) {
  require(k_clusters >= 1, ErrorCode::ConfigInvalid, "k must be positive");
  if (points.rows() < k_clusters) {
    fail(ErrorCode::DegenerateInput, "fewer points than clusters: " + std::to_string(points.rows()));
  }
  ClusterModel m;
  m.method = ClusterMethod::KMeans;
  m.k = k_clusters;
  m.centroids.resize(k_clusters, points.cols());
  m.empty.assign(static_cast<std::size_t>(k_clusters), false);
  const auto n = static_cast<std::size_t>(points.rows());

  // k-means++ seeding.
  Rng rng(combine_seed(seed, std::string_view("kmeans++")));
  m.centroids.row(0) = points.row(static_cast<Eigen::Index>(uniform_index(rng, n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (points.row(static_cast<Eigen::Index>(i)) - m.centroids.row(0)).squaredNorm();
  for (int c = 1; c < k_clusters; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      m.degenerate = true;
      pick = uniform_index(rng, n);
    } else {
      double target = uniform01(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    }
    m.centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(static_cast<Eigen::Index>(i)) - m.centroids.row(c)).squaredNorm());
    }
  }

  std::vector<int> labels;
  for (int it = 0; it < max_iter; ++it) {
    auto next = assign_nearest(m.centroids, points);
    m.inertia_history.push_back(inertia(m.centroids, points, next));
    m.iterations = it + 1;
    if (next == labels) {
      m.converged = true;
      break;
    }
    labels = std::move(next);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k_clusters, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k_clusters), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(labels[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    for (int c = 0; c < k_clusters; ++c) {
      // Empty clusters keep their previous centroid.
      if (counts[static_cast<std::size_t>(c)] > 0) m.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
  }
  std::vector<int> counts(static_cast<std::size_t>(k_clusters), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  for (int c = 0; c < k_clusters; ++c) m.empty[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] == 0;
  m.labels = std::move(labels);
  return m;
}

}  // namespace

ClusterModel fit_kmeans(const Eigen::MatrixXd& points, int k_clusters, std::uint64_t seed, int max_iter, int n_init) {
  require(n_init >= 1, ErrorCode::ConfigInvalid, "n_init must be positive");
  ClusterModel best;
  for (int r = 0; r < n_init; ++r) {
    auto m = kmeans_once(points, k_clusters, combine_seed(seed, static_cast<std::uint64_t>(r)), max_iter);
    // Strict improvement only, so the earliest restart wins ties.
    if (r == 0 || m.inertia_history.back() < best.inertia_history.back()) best = std::move(m);
  }
  return best;
}

ClusterModel density_cluster(const Eigen::MatrixXd& points, double radius, int min_pts) {
  require(radius > 0.0, ErrorCode::ConfigInvalid, "density radius must be positive");
  require(min_pts >= 1, ErrorCode::ConfigInvalid, "min_pts must be positive");
  const auto n = static_cast<std::size_t>(points.rows());
  const double r2 = radius * radius;
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if ((points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).squaredNorm() <= r2) {
        nbrs[i].push_back(j);
      }
    }
  }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = static_cast<int>(nbrs[i].size()) >= min_pts;

  std::vector<int> labels(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || labels[i] >= 0) continue;
    std::vector<std::size_t> stack{i};
    labels[i] = next;
    while (!stack.empty()) {
      const auto p = stack.back();
      stack.pop_back();
      for (auto q : nbrs[p]) {
        if (core[q] && labels[q] < 0) {
          labels[q] = next;
          stack.push_back(q);
        }
      }
    }
    ++next;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (auto q : nbrs[i]) {
      if (!core[q]) continue;
      const double d = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(q))).squaredNorm();
      if (d < best) {
        best = d;
        labels[i] = labels[q];
      }
    }
  }

  ClusterModel m;
  m.method = ClusterMethod::Density;
  m.k = next;
  m.radius = radius;
  m.min_pts = min_pts;
  m.centroids = Eigen::MatrixXd::Zero(next, points.cols());
  std::vector<int> counts(static_cast<std::size_t>(next), 0);
  std::size_t n_core = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= 0) {
      m.centroids.row(labels[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    n_core += core[i];
  }
  for (int c = 0; c < next; ++c) m.centroids.row(c) /= counts[static_cast<std::size_t>(c)];
  m.empty.assign(static_cast<std::size_t>(next), false);
  m.core_points.resize(static_cast<Eigen::Index>(n_core), points.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    m.core_points.row(r++) = points.row(static_cast<Eigen::Index>(i));
    m.core_labels.push_back(labels[i]);
  }
  m.labels = std::move(labels);
  m.converged = true;
  m.degenerate = next == 0;
  return m;
}

std::vector<int> assign_labels(const ClusterModel& model, const Eigen::MatrixXd& points) {
  const Eigen::Index dim = model.method == ClusterMethod::KMeans ? model.centroids.cols() : model.core_points.cols();
  if (points.cols() != dim) {
    fail(ErrorCode::DimMismatch, "points have " + std::to_string(points.cols()) + " columns, model expects " +
                                     std::to_string(dim));
  }
  if (model.method == ClusterMethod::KMeans) return assign_nearest(model.centroids, points);
  std::vector<int> labels(static_cast<std::size_t>(points.rows()), -1);
  const double r2 = model.radius * model.radius;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < model.core_points.rows(); ++c) {
      const double d = (points.row(i) - model.core_points.row(c)).squaredNorm();
      if (d <= r2 && d < best) {
        best = d;
        labels[static_cast<std::size_t>(i)] = model.core_labels[static_cast<std::size_t>(c)];
      }
    }
  }
  return labels;
}

MacroMerge hierarchical_macro_merge(const ClusterModel& clusters, int k_macro) {
  const int k = static_cast<int>(clusters.centroids.rows());
  require(k_macro >= 1 && k_macro <= k, ErrorCode::ConfigInvalid, "k_macro must lie in [1, k]");
  MacroMerge out;
  // Ward merge cost between groups, updated with the Lance-Williams recurrence.
  Eigen::MatrixXd cost(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) cost(i, j) = 0.5 * (clusters.centroids.row(i) - clusters.centroids.row(j)).squaredNorm();
  }
  std::vector<int> size(static_cast<std::size_t>(k), 1);
  std::vector<bool> active(static_cast<std::size_t>(k), true);
  std::vector<int> group(static_cast<std::size_t>(k));
  std::iota(group.begin(), group.end(), 0);

  for (int remaining = k; remaining > k_macro; --remaining) {
    int bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      for (int j = i + 1; j < k; ++j) {
        if (active[static_cast<std::size_t>(j)] && cost(i, j) < best) {
          best = cost(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    const double ni = size[static_cast<std::size_t>(bi)], nj = size[static_cast<std::size_t>(bj)];
    for (int m = 0; m < k; ++m) {
      if (!active[static_cast<std::size_t>(m)] || m == bi || m == bj) continue;
      const double nm = size[static_cast<std::size_t>(m)];
      const double t = ni + nj + nm;
      const double v = ((ni + nm) * cost(m, bi) + (nj + nm) * cost(m, bj) - nm * cost(bi, bj)) / t;
      cost(m, bi) = cost(bi, m) = v;
    }
    size[static_cast<std::size_t>(bi)] += size[static_cast<std::size_t>(bj)];
    active[static_cast<std::size_t>(bj)] = false;
    for (auto& g : group) {
      if (g == bj) g = bi;
    }
    out.merges.emplace_back(bi, bj);
    out.heights.push_back(best);
  }
  // Macro ids in order of each group's lowest micro index.
  std::map<int, int> relabel;
  out.mapping.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto [it, inserted] = relabel.emplace(group[static_cast<std::size_t>(i)], static_cast<int>(relabel.size()));
    out.mapping[static_cast<std::size_t>(i)] = it->second;
  }
  return out;
}

std::optional<int> BasinPartition::label(const std::string& trajectory_id, int step) const {
  const auto* ls = trajectory_labels(trajectory_id);
  if (!ls || step < 0 || step >= static_cast<int>(ls->size())) return std::nullopt;
  const int l = (*ls)[static_cast<std::size_t>(step)];
  if (l == std::numeric_limits<int>::min()) return std::nullopt;
  return l;
}

const std::vector<int>* BasinPartition::trajectory_labels(const std::string& trajectory_id) const {
  const auto it = labels.find(trajectory_id);
  return it == labels.end() ? nullptr : &it->second;
}

nlohmann::json to_json(const ProjectionModel& p) {
  nlohmann::json j;
  j["requested_k"] = p.requested_k;
  j["k"] = p.k();
  j["rank_deficient"] = p.rank_deficient;
  j["mean"] = std::vector<double>(p.mean.data(), p.mean.data() + p.mean.size());
  j["explained_variance"] =
      std::vector<double>(p.explained_variance.data(), p.explained_variance.data() + p.explained_variance.size());
  auto& rows = j["components"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < p.components.rows(); ++r) {
    const Eigen::VectorXd v = p.components.row(r).transpose();
    rows.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  return j;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Eigen::VectorXd v = m.row(r).transpose();
    rows.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols_hint) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_hint;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto v = j[static_cast<std::size_t>(r)].get<std::vector<double>>();
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(c)];
  }
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const ClusterModel& c) {
  nlohmann::json j;
  j["method"] = to_string(c.method);
  j["k"] = c.k;
  j["centroids"] = matrix_json(c.centroids);
  j["empty"] = c.empty;
  j["radius"] = c.radius;
  j["min_pts"] = c.min_pts;
  j["core_points"] = matrix_json(c.core_points);
  j["core_labels"] = c.core_labels;
  j["iterations"] = c.iterations;
  j["converged"] = c.converged;
  j["degenerate"] = c.degenerate;
  return j;
}

namespace {

nlohmann::json model_json(const BasinPartition& p) {
  nlohmann::json j;
  j["version"] = 1;
  j["projection"] = to_json(p.projection);
  j["clusters"] = to_json(p.clusters);
  j["late_window_fraction"] = p.late_window_fraction;
  j["macro_mapping"] = p.macro_mapping ? nlohmann::json(*p.macro_mapping) : nlohmann::json(nullptr);
  return j;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string BasinPartition::hash() const { return hex64(fnv1a64(model_json(*this).dump())); }

namespace {

void fill_labels(BasinPartition& p, const EmbeddingMatrix& matrix, const std::vector<int>& row_labels) {
  p.labels.clear();
  for (std::size_t i = 0; i < matrix.meta.size(); ++i) {
    const auto& m = matrix.meta[i];
    auto& ls = p.labels[m.trajectory_id];
    if (static_cast<int>(ls.size()) <= m.step) ls.resize(static_cast<std::size_t>(m.step) + 1, std::numeric_limits<int>::min());
    ls[static_cast<std::size_t>(m.step)] = row_labels[i];
  }
}

}  // namespace

BasinPartition fit_partition(const EmbeddingMatrix& matrix, const PartitionSpec& spec) {
  require(matrix.meta.size() == static_cast<std::size_t>(matrix.rows()), ErrorCode::RowMismatch,
          "embedding metadata does not align with rows");
  BasinPartition p;
  p.late_window_fraction = spec.late_window_fraction;
  p.projection = fit_pca_joint(matrix, spec.projection_k);
  const Eigen::MatrixXd all = p.projection.transform(matrix.vectors);

  std::vector<Eigen::Index> fit_rows;
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    if (matrix.zero_flagged.empty() || !matrix.zero_flagged[static_cast<std::size_t>(i)]) fit_rows.push_back(i);
  }
  Eigen::MatrixXd fit(static_cast<Eigen::Index>(fit_rows.size()), all.cols());
  for (std::size_t r = 0; r < fit_rows.size(); ++r) fit.row(static_cast<Eigen::Index>(r)) = all.row(fit_rows[r]);

  p.clusters = spec.method == ClusterMethod::KMeans ? fit_kmeans(fit, spec.k, spec.seed)
                                                    : density_cluster(fit, spec.radius, spec.min_pts);
  fill_labels(p, matrix, assign_labels(p.clusters, all));
  return p;
}

std::vector<int> frozen_basis_assign(const BasinPartition& frozen, const EmbeddingMatrix& matrix) {
  if (matrix.dim() != frozen.projection.mean.size()) {
    fail(ErrorCode::DimMismatch, "embedding dim " + std::to_string(matrix.dim()) + " vs frozen basis " +
                                     std::to_string(frozen.projection.mean.size()));
  }
  auto labels = assign_labels(frozen.clusters, frozen.projection.transform(matrix.vectors));
  if (frozen.macro_mapping) {
    for (auto& l : labels) {
      if (l >= 0) l = (*frozen.macro_mapping)[static_cast<std::size_t>(l)];
    }
  }
  return labels;
}

BasinPartition relabel(const BasinPartition& frozen, const EmbeddingMatrix& matrix) {
  BasinPartition p = frozen;
  fill_labels(p, matrix, frozen_basis_assign(frozen, matrix));
  return p;
}

BasinPartition coarsen(const BasinPartition& micro, const MacroMerge& merge) {
  BasinPartition p = micro;
  p.macro_mapping = merge.mapping;
  for (auto& [id, ls] : p.labels) {
    for (auto& l : ls) {
      if (l >= 0) l = merge.mapping[static_cast<std::size_t>(l)];
    }
  }
  return p;
}

int late_window_target(std::span<const int> labels, double late_fraction) {
  const int n = static_cast<int>(labels.size());
  require(n >= 4, ErrorCode::TooShort, "late-window target needs at least 4 steps");
  const int start = std::clamp(static_cast<int>(std::ceil(late_fraction * n - 1e-9)), 0, n - 1);
  std::map<int, std::pair<int, int>> tally;  // label -> (count, last index)
  for (int t = start; t < n; ++t) {
    auto& e = tally[labels[static_cast<std::size_t>(t)]];
    ++e.first;
    e.second = t;
  }
  int best = labels[static_cast<std::size_t>(n - 1)];
  std::pair<int, int> key{-1, -1};
  for (const auto& [label, e] : tally) {
    if (e > key) {
      key = e;
      best = label;
    }
  }
  return best;
}

int late_window_target(const BasinPartition& partition, const std::string& trajectory_id) {
  const auto* ls = partition.trajectory_labels(trajectory_id);
  if (!ls) fail(ErrorCode::PartitionMissingLabels, "no labels for trajectory '" + trajectory_id + "'");
  return late_window_target(std::span<const int>(*ls), partition.late_window_fraction);
}

void save_partition(const BasinPartition& p, const std::filesystem::path& stem) {
  auto js = stem;
  js += ".json";
  auto bin = stem;
  bin += ".labels.bin";
  nlohmann::json j = model_json(p);
  j["hash"] = p.hash();
  auto& index = j["trajectories"] = nlohmann::json::array();
  std::vector<std::int32_t> flat;
  for (const auto& [id, ls] : p.labels) {
    index.push_back({{"id", id}, {"offset", flat.size()}, {"steps", ls.size()}});
    for (int l : ls) flat.push_back(static_cast<std::int32_t>(l));
  }
  {
    std::ofstream os(bin, std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + bin.string());
    os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(std::int32_t)));
  }
  std::ofstream os(js);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + js.string());
  os << j.dump(1) << '\n';
}

BasinPartition load_partition(const std::filesystem::path& stem) {
  auto js = stem;
  js += ".json";
  auto bin = stem;
  bin += ".labels.bin";
  std::ifstream is(js);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot read " + js.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const std::exception& e) {
    fail(ErrorCode::SchemaMismatch, js.string() + ": " + e.what());
  }
  BasinPartition p;
  try {
    const auto& pj = j.at("projection");
    p.projection.requested_k = pj.at("requested_k").get<int>();
    p.projection.rank_deficient = pj.at("rank_deficient").get<bool>();
    p.projection.mean = vector_from_json(pj.at("mean"));
    p.projection.explained_variance = vector_from_json(pj.at("explained_variance"));
    p.projection.components = matrix_from_json(pj.at("components"), p.projection.mean.size());
    const auto& cj = j.at("clusters");
    p.clusters.method = parse_cluster_method(cj.at("method").get<std::string>());
    p.clusters.k = cj.at("k").get<int>();
    p.clusters.centroids = matrix_from_json(cj.at("centroids"), p.projection.k());
    p.clusters.empty = cj.at("empty").get<std::vector<bool>>();
    p.clusters.radius = cj.at("radius").get<double>();
    p.clusters.min_pts = cj.at("min_pts").get<int>();
    p.clusters.core_points = matrix_from_json(cj.at("core_points"), p.projection.k());
    p.clusters.core_labels = cj.at("core_labels").get<std::vector<int>>();
    p.clusters.iterations = cj.at("iterations").get<int>();
    p.clusters.converged = cj.at("converged").get<bool>();
    p.clusters.degenerate = cj.at("degenerate").get<bool>();
    p.late_window_fraction = j.at("late_window_fraction").get<double>();
    if (!j.at("macro_mapping").is_null()) p.macro_mapping = j.at("macro_mapping").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaMismatch, js.string() + ": " + e.what());
  }
  std::ifstream bs(bin, std::ios::binary);
  require(static_cast<bool>(bs), ErrorCode::Io, "cannot read " + bin.string());
  bs.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(bs.tellg());
  bs.seekg(0);
  std::vector<std::int32_t> raw(bytes / sizeof(std::int32_t));
  bs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(std::int32_t)));
  for (const auto& e : j.at("trajectories")) {
    const auto off = e.at("offset").get<std::size_t>();
    const auto n = e.at("steps").get<std::size_t>();
    require(off + n <= raw.size(), ErrorCode::SchemaMismatch, "label array shorter than index");
    p.labels[e.at("id").get<std::string>()] = std::vector<int>(raw.begin() + static_cast<std::ptrdiff_t>(off),
                                                               raw.begin() + static_cast<std::ptrdiff_t>(off + n));
  }
  if (j.contains("hash")) {
    require(j["hash"].get<std::string>() == p.hash(), ErrorCode::SchemaMismatch,
            "partition bundle hash does not match its contents");
  }
  return p;
}

}  // namespace loopdyn
