#pragma once

// Generators with analytically known latent dynamics. The latent point is
// carried in the text itself as a payload token, so the generator is
// stateless and the loop's nudge rule decides what it sees next.

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "loopdyn/loop.hpp"

namespace loopdyn {

enum class Regime { Contractive, Period2, Absorbing, Drift, MultiBasin };

std::string_view to_string(Regime regime) noexcept;
Regime parse_regime(std::string_view text);

struct SyntheticSpec {
  Regime regime = Regime::Contractive;
  int latent_dim = 2;
  double contraction_rate = 0.9;
  double noise_scale = 0.05;
  std::vector<Eigen::VectorXd> basin_centers;
  std::uint64_t vocabulary_seed = 0;

  // Gaussian jitter added to the starting latent at step 0 (scaled by temperature).
  double initial_jitter = 0.0;
  // Absorbing regime: noise is switched off from this step on.
  int burn_in = 5;
  // Drift regime: per-step displacement; zero vector means (0.25, 0, ...).
  Eigen::VectorXd drift_velocity;
  // Trailing non-payload tokens pull the latent toward the text's hash point;
  // weight n / (n + dilution_half_tokens). Zero disables dilution.
  double dilution_half_tokens = 60.0;
  // Scale of hash-derived starting points when the text has no payload.
  double hash_scale = 4.0;
  int filler_words = 12;
  bool quantize_payload = false;

  void validate() const;
};

/// "<<z:v1,v2,...>>" with shortest round-trip formatting, or 6 fixed decimals.
std::string encode_payload(const Eigen::VectorXd& z, bool quantized = false);

struct PayloadMatch {
  Eigen::VectorXd latent;
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the closing delimiter
};

/// Last well-formed payload in the text, if any. Malformed blocks are skipped.
std::optional<PayloadMatch> find_last_payload(std::string_view text);

/// Strict decode of the last payload; throws PayloadMalformed if none parses.
Eigen::VectorXd latent_roundtrip(std::string_view text);

/// Deterministic point derived from a text hash (a basin center plus offset
/// when centers exist, otherwise a point in the hash_scale box).
Eigen::VectorXd hash_point(const SyntheticSpec& spec, std::string_view text);

/// Latent the generator reads from a context: last payload, diluted toward
/// the hash point of any trailing text.
Eigen::VectorXd read_latent(const SyntheticSpec& spec, std::string_view state);

/// One application of the regime map without noise.
Eigen::VectorXd regime_map(const SyntheticSpec& spec, const Eigen::VectorXd& z);

/// Index of the nearest basin center (lowest index on ties).
int nearest_center(const SyntheticSpec& spec, const Eigen::VectorXd& z);

class SyntheticGenerator final : public Generator {
 public:
  explicit SyntheticGenerator(SyntheticSpec spec);
  std::string generate(const GenerationRequest& request, Rng& rng) const override;
  std::string id() const override;
  const SyntheticSpec& spec() const noexcept { return spec_; }

 private:
  SyntheticSpec spec_;
  std::vector<std::string> vocabulary_;
};

std::unique_ptr<SyntheticGenerator> make_synthetic_generator(const SyntheticSpec& spec);

/// Returns the same text for every call; handy for loop-mechanics tests.
class ConstantGenerator final : public Generator {
 public:
  explicit ConstantGenerator(std::string text) : text_(std::move(text)) {}
  std::string generate(const GenerationRequest&, Rng&) const override { return text_; }
  std::string id() const override { return "constant"; }

 private:
  std::string text_;
};

}  // namespace loopdyn
