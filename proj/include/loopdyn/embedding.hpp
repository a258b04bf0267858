#pragma once

// Observable text views of a trajectory and their lift to unit-norm vectors.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "loopdyn/loop.hpp"

namespace loopdyn {

enum class ObservableName {
  Output,
  RollingK3,
  ContextTail,
  ContextFull,
  LastUserTurn,
  LastAgentTurn,
  RollingUserK3,
  RollingAgentK3,
  TurnPair,
};

struct ObservableKind {
  ObservableName name = ObservableName::Output;
  std::optional<int> window_param;

  bool dialog_only() const noexcept;
  std::string label() const;
};

std::string_view to_string(ObservableName name) noexcept;
ObservableKind parse_observable(std::string_view text);

inline constexpr std::size_t kContextTailChars = 4000;
inline constexpr std::size_t kContextFullChars = 8000;

/// Text view of one step. Dialog kinds treat role A as the user side.
std::string observable_view(const Trajectory& trajectory, const ObservableKind& kind, int step);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
};

/// Signed hashing of character n-grams. Texts carrying a synthetic latent
/// payload z get the block [z, sqrt(R^2 - |z|^2)] / R written into the
/// leading coordinates, so after normalization the first coordinates equal
/// z / R exactly when filler_weight is 0.
class FeatureHashEmbedder final : public Embedder {
 public:
  struct Options {
    int dim = 64;
    int ngram = 3;
    double payload_radius = 8.0;
    double filler_weight = 0.0;
    std::uint64_t salt = 0;
  };

  explicit FeatureHashEmbedder(Options options);
  Eigen::VectorXd embed(std::string_view text) const override;
  int dim() const override { return options_.dim; }
  std::string id() const override;
  const Options& options() const noexcept { return options_; }

  /// Hash features only, unnormalized.
  Eigen::VectorXd hash_features(std::string_view text, int width) const;

 private:
  Options options_;
};

std::unique_ptr<FeatureHashEmbedder> feature_hash_embedder(int dim);

struct RowMeta {
  std::string trajectory_id;
  int step = 0;
  std::string family;
  std::string ic;
  int run = 0;
  std::string condition;
  std::string arm;

  bool operator==(const RowMeta&) const = default;
};

struct EmbeddingMatrix {
  ObservableKind observable;
  std::string embedder_id;
  Eigen::MatrixXd vectors;  // N x m, unit rows
  std::vector<RowMeta> meta;
  std::vector<bool> zero_flagged;
  // Set when the rows are a filtered view of a larger experiment matrix.
  bool is_subset = false;

  Eigen::Index rows() const noexcept { return vectors.rows(); }
  Eigen::Index dim() const noexcept { return vectors.cols(); }
};

/// Embeds and L2-normalizes; zero vectors become e_1 and are flagged.
EmbeddingMatrix embed_batch(const std::vector<std::string>& texts, const Embedder& embedder,
                            std::vector<RowMeta> meta = {}, ObservableKind observable = {});

/// One row per (trajectory, step), in trajectory order.
EmbeddingMatrix embed_trajectories(const std::vector<const Trajectory*>& trajectories, const ObservableKind& kind,
                                   const Embedder& embedder);

/// Rows whose metadata satisfy the predicate; result is marked as a subset.
template <class Pred>
EmbeddingMatrix select_rows(const EmbeddingMatrix& m, Pred pred) {
  EmbeddingMatrix out;
  out.observable = m.observable;
  out.embedder_id = m.embedder_id;
  out.is_subset = true;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (pred(m.meta[static_cast<std::size_t>(i)])) keep.push_back(i);
  }
  out.vectors.resize(static_cast<Eigen::Index>(keep.size()), m.dim());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.vectors.row(static_cast<Eigen::Index>(r)) = m.vectors.row(keep[r]);
    out.meta.push_back(m.meta[static_cast<std::size_t>(keep[r])]);
    out.zero_flagged.push_back(m.zero_flagged[static_cast<std::size_t>(keep[r])]);
  }
  return out;
}

nlohmann::json to_json(const RowMeta& meta);
RowMeta row_meta_from_json(const nlohmann::json& j);

/// Flat little-endian float64 array (<stem>.bin) plus JSON sidecar (<stem>.json).
void save_embedding(const EmbeddingMatrix& m, const std::filesystem::path& stem);
EmbeddingMatrix load_embedding(const std::filesystem::path& stem);

}  // namespace loopdyn
