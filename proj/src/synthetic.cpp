#include "loopdyn/synthetic.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>

#include "loopdyn/error.hpp"

namespace loopdyn {

namespace {

constexpr std::string_view kOpen = "<<z:";
constexpr std::string_view kClose = ">>";

std::vector<std::string> make_vocabulary(std::uint64_t seed) {
  static constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ren", "tu", "sa", "vel", "no",
                                               "qi", "dar", "es", "pho", "lin", "gu", "ta", "mor"};
  Rng rng(combine_seed(seed, std::string_view("vocabulary")));
  std::vector<std::string> words;
  words.reserve(64);
  for (int i = 0; i < 64; ++i) {
    const int parts = 2 + static_cast<int>(uniform_index(rng, 2));
    std::string w;
    for (int p = 0; p < parts; ++p) w += kSyllables[uniform_index(rng, 16)];
    words.push_back(std::move(w));
  }
  return words;
}

std::optional<Eigen::VectorXd> parse_body(std::string_view body) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto comma = body.find(',', pos);
    if (comma == std::string_view::npos) comma = body.size();
    const auto item = body.substr(pos, comma - pos);
    if (item.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || !std::isfinite(v)) return std::nullopt;
    values.push_back(v);
    pos = comma + 1;
    if (comma == body.size()) break;
  }
  if (values.empty()) return std::nullopt;
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

int count_tokens(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

std::string_view to_string(Regime regime) noexcept {
  switch (regime) {
    case Regime::Contractive: return "contractive";
    case Regime::Period2: return "period2";
    case Regime::Absorbing: return "absorbing";
    case Regime::Drift: return "drift";
    case Regime::MultiBasin: return "multi_basin";
  }
  return "contractive";
}

Regime parse_regime(std::string_view text) {
  if (text == "contractive") return Regime::Contractive;
  if (text == "period2") return Regime::Period2;
  if (text == "absorbing") return Regime::Absorbing;
  if (text == "drift") return Regime::Drift;
  if (text == "multi_basin") return Regime::MultiBasin;
  fail(ErrorCode::SpecInvalid, "unknown regime '" + std::string(text) + "'");
}

void SyntheticSpec::validate() const {
  require(latent_dim >= 1, ErrorCode::SpecInvalid, "latent_dim must be positive");
  require(contraction_rate > 0.0 && contraction_rate <= 1.0, ErrorCode::SpecInvalid,
          "contraction_rate must lie in (0, 1]");
  require(noise_scale >= 0.0 && initial_jitter >= 0.0, ErrorCode::SpecInvalid, "scales must be non-negative");
  require(filler_words >= 0, ErrorCode::SpecInvalid, "filler_words must be non-negative");
  for (const auto& c : basin_centers) {
    require(c.size() == latent_dim, ErrorCode::SpecInvalid, "basin center dimension mismatch");
  }
  if (drift_velocity.size() != 0) {
    require(drift_velocity.size() == latent_dim, ErrorCode::SpecInvalid, "drift velocity dimension mismatch");
  }
  switch (regime) {
    case Regime::Contractive:
      require(contraction_rate < 1.0, ErrorCode::SpecInvalid, "contractive regime needs contraction_rate < 1");
      break;
    case Regime::Period2:
      require(basin_centers.size() >= 2, ErrorCode::SpecInvalid, "period2 regime needs two basin centers");
      break;
    case Regime::MultiBasin:
      require(basin_centers.size() >= 2, ErrorCode::SpecInvalid, "multi_basin regime needs two basin centers");
      break;
    case Regime::Absorbing:
      require(!basin_centers.empty(), ErrorCode::SpecInvalid, "absorbing regime needs a basin center");
      break;
    case Regime::Drift:
      break;
  }
}

std::string encode_payload(const Eigen::VectorXd& z, bool quantized) {
  std::string out(kOpen);
  char buf[64];
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (i > 0) out += ',';
    if (quantized) {
      std::snprintf(buf, sizeof buf, "%.6f", z[i]);
      out += buf;
    } else {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, z[i]);
      out.append(buf, ptr);
    }
  }
  out += kClose;
  return out;
}

std::optional<PayloadMatch> find_last_payload(std::string_view text) {
  std::size_t search_end = text.size();
  while (true) {
    const auto open = text.rfind(kOpen, search_end);
    if (open == std::string_view::npos) return std::nullopt;
    const auto body_begin = open + kOpen.size();
    const auto close = text.find(kClose, body_begin);
    if (close != std::string_view::npos) {
      if (auto z = parse_body(text.substr(body_begin, close - body_begin))) {
        return PayloadMatch{std::move(*z), open, close + kClose.size()};
      }
    }
    if (open == 0) return std::nullopt;
    search_end = open - 1;
  }
}

Eigen::VectorXd latent_roundtrip(std::string_view text) {
  auto match = find_last_payload(text);
  if (!match) fail(ErrorCode::PayloadMalformed, "no well-formed latent payload in text");
  return std::move(match->latent);
}

Eigen::VectorXd hash_point(const SyntheticSpec& spec, std::string_view text) {
  Rng rng(combine_seed(spec.vocabulary_seed, fnv1a64(text)));
  Eigen::VectorXd z(spec.latent_dim);
  if (!spec.basin_centers.empty()) {
    const auto idx = uniform_index(rng, spec.basin_centers.size());
    for (int i = 0; i < spec.latent_dim; ++i) z[i] = 0.25 * (2.0 * uniform01(rng) - 1.0);
    return spec.basin_centers[idx] + z;
  }
  for (int i = 0; i < spec.latent_dim; ++i) z[i] = spec.hash_scale * (2.0 * uniform01(rng) - 1.0);
  return z;
}

Eigen::VectorXd read_latent(const SyntheticSpec& spec, std::string_view state) {
  auto match = find_last_payload(state);
  if (!match || match->latent.size() != spec.latent_dim) return hash_point(spec, state);
  const auto tail = state.substr(match->end);
  const int n = count_tokens(tail);
  if (n == 0 || spec.dilution_half_tokens <= 0.0) return match->latent;
  const double w = n / (n + spec.dilution_half_tokens);
  return (1.0 - w) * match->latent + w * hash_point(spec, tail);
}

int nearest_center(const SyntheticSpec& spec, const Eigen::VectorXd& z) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spec.basin_centers.size(); ++i) {
    const double d = (spec.basin_centers[i] - z).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Eigen::VectorXd regime_map(const SyntheticSpec& spec, const Eigen::VectorXd& z) {
  const double c = spec.contraction_rate;
  switch (spec.regime) {
    case Regime::Contractive:
      return c * z;
    case Regime::Period2: {
      const Eigen::VectorXd mid = 0.5 * (spec.basin_centers[0] + spec.basin_centers[1]);
      return 2.0 * mid - z;
    }
    case Regime::Absorbing:
    case Regime::MultiBasin: {
      const auto& b = spec.basin_centers[static_cast<std::size_t>(nearest_center(spec, z))];
      return b + c * (z - b);
    }
    case Regime::Drift: {
      if (spec.drift_velocity.size() == spec.latent_dim) return z + spec.drift_velocity;
      Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.latent_dim);
      v[0] = 0.25;
      return z + v;
    }
  }
  return z;
}

SyntheticGenerator::SyntheticGenerator(SyntheticSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  vocabulary_ = make_vocabulary(spec_.vocabulary_seed);
}

std::string SyntheticGenerator::id() const {
  return "synthetic:" + std::string(to_string(spec_.regime)) + ":d" + std::to_string(spec_.latent_dim);
}

std::string SyntheticGenerator::generate(const GenerationRequest& request, Rng& rng) const {
  Eigen::VectorXd z = read_latent(spec_, request.state);
  const double amp = request.temperature;
  if (request.step == 0 && spec_.initial_jitter > 0.0 && amp > 0.0) {
    for (int i = 0; i < spec_.latent_dim; ++i) z[i] += amp * spec_.initial_jitter * standard_normal(rng);
  }
  Eigen::VectorXd next = regime_map(spec_, z);
  double noise = amp * spec_.noise_scale;
  if (spec_.regime == Regime::Absorbing && request.step >= spec_.burn_in) noise = 0.0;
  if (noise > 0.0) {
    for (int i = 0; i < spec_.latent_dim; ++i) next[i] += noise * standard_normal(rng);
  }

  const std::string payload = encode_payload(next, spec_.quantize_payload);
  const int budget = std::max(0, std::min(spec_.filler_words, request.max_output_tokens - 2));
  // At temperature 0 the filler is a function of the payload alone.
  Rng greedy(combine_seed(spec_.vocabulary_seed, fnv1a64(payload)));
  Rng& words = amp > 0.0 ? rng : greedy;
  std::string out = payload;
  for (int i = 0; i < budget; ++i) {
    out += ' ';
    out += vocabulary_[uniform_index(words, vocabulary_.size())];
  }
  // Payload at both ends so head truncation of the context keeps one intact.
  out += ' ';
  out += payload;
  return out;
}

std::unique_ptr<SyntheticGenerator> make_synthetic_generator(const SyntheticSpec& spec) {
  return std::make_unique<SyntheticGenerator>(spec);
}

}  // namespace loopdyn
