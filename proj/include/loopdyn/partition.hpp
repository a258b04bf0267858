#pragma once

// Joint projections, clusterings and the basin partition every endpoint is
// defined against.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "loopdyn/embedding.hpp"

namespace loopdyn {

struct ProjectionModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // k x m, orthonormal rows
  Eigen::VectorXd explained_variance;
  int requested_k = 0;
  bool rank_deficient = false;

  int k() const noexcept { return static_cast<int>(components.rows()); }

  template <class Derived>
  Eigen::MatrixXd transform(const Eigen::MatrixBase<Derived>& x) const {
    return (x.rowwise() - mean.transpose()) * components.transpose();
  }
};

/// PCA through the covariance eigendecomposition. Each component's
/// largest-magnitude coordinate is made positive. Fewer than k nonzero
/// eigenvalues truncates to the available rank and sets rank_deficient.
ProjectionModel fit_pca(const Eigen::MatrixXd& x, int k);

/// Joint fit over a full experiment matrix; refuses subset views and skips
/// zero-flagged rows.
ProjectionModel fit_pca_joint(const EmbeddingMatrix& matrix, int k);

enum class ClusterMethod { KMeans, Density };
std::string_view to_string(ClusterMethod method) noexcept;
ClusterMethod parse_cluster_method(std::string_view text);

struct ClusterModel {
  ClusterMethod method = ClusterMethod::KMeans;
  int k = 0;
  Eigen::MatrixXd centroids;  // k x dim
  std::vector<bool> empty;
  // density method
  double radius = 0.0;
  int min_pts = 0;
  Eigen::MatrixXd core_points;
  std::vector<int> core_labels;
  // fit record
  std::vector<int> labels;
  std::vector<double> inertia_history;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
};

/// Nearest centroid per row; ties go to the lowest index.
std::vector<int> assign_nearest(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points);

/// k-means++ seeding then Lloyd iterations until assignments stop changing
/// or max_iter; the lowest-inertia of n_init restarts is kept. Identical
/// points give a degenerate model with one occupied cluster.
ClusterModel fit_kmeans(const Eigen::MatrixXd& points, int k_clusters, std::uint64_t seed, int max_iter = 300,
                        int n_init = 10);

/// Radius-graph density clustering. Neighborhoods include the point itself.
/// Border points join the cluster of their nearest core neighbor, others get -1.
ClusterModel density_cluster(const Eigen::MatrixXd& points, double radius, int min_pts);

/// Labels for new points under a fitted model (no refit).
std::vector<int> assign_labels(const ClusterModel& model, const Eigen::MatrixXd& points);

struct MacroMerge {
  std::vector<int> mapping;  // micro -> macro
  std::vector<std::pair<int, int>> merges;  // cluster ids as in the agglomeration record
  std::vector<double> heights;
};

/// Ward agglomeration over unit-weight centroids down to k_macro groups.
MacroMerge hierarchical_macro_merge(const ClusterModel& clusters, int k_macro);

struct PartitionSpec {
  int projection_k = 10;
  ClusterMethod method = ClusterMethod::KMeans;
  int k = 12;
  double radius = 0.3;
  int min_pts = 5;
  std::uint64_t seed = 0;
  double late_window_fraction = 0.7;
};

struct BasinPartition {
  ProjectionModel projection;
  ClusterModel clusters;
  double late_window_fraction = 0.7;
  std::optional<std::vector<int>> macro_mapping;
  std::map<std::string, std::vector<int>> labels;  // trajectory id -> label per step

  std::optional<int> label(const std::string& trajectory_id, int step) const;
  const std::vector<int>* trajectory_labels(const std::string& trajectory_id) const;
  /// Content hash of the fitted model (projection, clusters, merge).
  std::string hash() const;
};

BasinPartition fit_partition(const EmbeddingMatrix& matrix, const PartitionSpec& spec);

/// Projects new rows through the frozen model and assigns frozen clusters.
std::vector<int> frozen_basis_assign(const BasinPartition& frozen, const EmbeddingMatrix& matrix);

/// Same model, labels recomputed for every trajectory in the matrix.
BasinPartition relabel(const BasinPartition& frozen, const EmbeddingMatrix& matrix);

/// Partition whose labels are the macro groups of a merge.
BasinPartition coarsen(const BasinPartition& micro, const MacroMerge& merge);

/// Modal label over t >= ceil(fraction * T); ties go to the tied label seen latest.
int late_window_target(std::span<const int> labels, double late_fraction = 0.7);
int late_window_target(const BasinPartition& partition, const std::string& trajectory_id);

nlohmann::json to_json(const ProjectionModel& p);
nlohmann::json to_json(const ClusterModel& c);

/// <stem>.json (model, hash, trajectory index) + <stem>.labels.bin (int32 labels).
void save_partition(const BasinPartition& p, const std::filesystem::path& stem);
BasinPartition load_partition(const std::filesystem::path& stem);

}  // namespace loopdyn
