#include "loopdyn/embedding.hpp"

#include <cmath>
#include <fstream>

#include "loopdyn/error.hpp"
#include "loopdyn/synthetic.hpp"

namespace loopdyn {

namespace {

struct NameEntry {
  ObservableName name;
  std::string_view text;
};

constexpr NameEntry kNames[] = {
    {ObservableName::Output, "output"},
    {ObservableName::RollingK3, "rolling_k3"},
    {ObservableName::ContextTail, "context_tail"},
    {ObservableName::ContextFull, "context_full"},
    {ObservableName::LastUserTurn, "last_user_turn"},
    {ObservableName::LastAgentTurn, "last_agent_turn"},
    {ObservableName::RollingUserK3, "rolling_user_k3"},
    {ObservableName::RollingAgentK3, "rolling_agent_k3"},
    {ObservableName::TurnPair, "turn_pair"},
};

std::string rolling(const Trajectory& t, int step, int window, const std::optional<std::string>& role) {
  std::vector<const std::string*> picked;
  for (int s = step; s >= 0 && static_cast<int>(picked.size()) < window; --s) {
    const auto& rec = t.steps[static_cast<std::size_t>(s)];
    if (!role || rec.role == role) picked.push_back(&rec.output);
  }
  std::string out;
  for (auto it = picked.rbegin(); it != picked.rend(); ++it) out += **it;
  return out;
}

}  // namespace

std::string_view to_string(ObservableName name) noexcept {
  for (const auto& e : kNames) {
    if (e.name == name) return e.text;
  }
  return "output";
}

bool ObservableKind::dialog_only() const noexcept {
  switch (name) {
    case ObservableName::LastUserTurn:
    case ObservableName::LastAgentTurn:
    case ObservableName::RollingUserK3:
    case ObservableName::RollingAgentK3:
    case ObservableName::TurnPair:
      return true;
    default:
      return false;
  }
}

std::string ObservableKind::label() const {
  std::string s(to_string(name));
  if (window_param) s += ":" + std::to_string(*window_param);
  return s;
}

ObservableKind parse_observable(std::string_view text) {
  ObservableKind kind;
  std::string_view base = text;
  if (const auto colon = text.find(':'); colon != std::string_view::npos) {
    base = text.substr(0, colon);
    try {
      kind.window_param = std::stoi(std::string(text.substr(colon + 1)));
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigInvalid, "bad observable window in '" + std::string(text) + "'");
    }
    require(*kind.window_param >= 1, ErrorCode::ConfigInvalid, "observable window must be positive");
  }
  for (const auto& e : kNames) {
    if (e.text == base) {
      kind.name = e.name;
      return kind;
    }
  }
  fail(ErrorCode::ConfigInvalid, "unknown observable '" + std::string(text) + "'");
}

std::string observable_view(const Trajectory& trajectory, const ObservableKind& kind, int step) {
  require(step >= 0 && step <= trajectory.terminal_step(), ErrorCode::ConfigInvalid,
          "observable step out of range: " + std::to_string(step));
  if (kind.dialog_only() && trajectory.config.nudge_kind != NudgeKind::Dialog) {
    fail(ErrorCode::KindInapplicable, std::string(to_string(kind.name)) + " needs a dialog trajectory");
  }
  const auto& rec = trajectory.steps[static_cast<std::size_t>(step)];
  const int window = kind.window_param.value_or(3);
  switch (kind.name) {
    case ObservableName::Output:
      return rec.output;
    case ObservableName::RollingK3:
      return rolling(trajectory, step, window, std::nullopt);
    case ObservableName::ContextTail:
      return clip(rec.state_after, static_cast<int>(kind.window_param.value_or(kContextTailChars)));
    case ObservableName::ContextFull:
      return clip(rec.state_after, static_cast<int>(kind.window_param.value_or(kContextFullChars)));
    case ObservableName::LastUserTurn:
      return rolling(trajectory, step, 1, trajectory.config.role_a_name);
    case ObservableName::LastAgentTurn:
      return rolling(trajectory, step, 1, trajectory.config.role_b_name);
    case ObservableName::RollingUserK3:
      return rolling(trajectory, step, window, trajectory.config.role_a_name);
    case ObservableName::RollingAgentK3:
      return rolling(trajectory, step, window, trajectory.config.role_b_name);
    case ObservableName::TurnPair:
      return rolling(trajectory, step, 2, std::nullopt);
  }
  return rec.output;
}

FeatureHashEmbedder::FeatureHashEmbedder(Options options) : options_(options) {
  require(options_.dim >= 8, ErrorCode::ConfigInvalid, "feature hash dim must be >= 8");
  require(options_.ngram >= 1, ErrorCode::ConfigInvalid, "ngram must be positive");
  require(options_.payload_radius > 0.0, ErrorCode::ConfigInvalid, "payload radius must be positive");
}

std::string FeatureHashEmbedder::id() const {
  return "feature_hash:d" + std::to_string(options_.dim) + ":n" + std::to_string(options_.ngram) + ":s" +
         std::to_string(options_.salt);
}

Eigen::VectorXd FeatureHashEmbedder::hash_features(std::string_view text, int width) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(width);
  if (text.empty() || width <= 0) return v;
  const auto n = static_cast<std::size_t>(options_.ngram);
  const std::uint64_t basis = combine_seed(0xcbf29ce484222325ULL, options_.salt);
  const std::size_t count = text.size() >= n ? text.size() - n + 1 : 1;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t h = mix64(fnv1a64(text.substr(i, n), basis));
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(width));
    v[bucket] += (h >> 63) ? 1.0 : -1.0;
  }
  return v;
}

Eigen::VectorXd FeatureHashEmbedder::embed(std::string_view text) const {
  const auto payload = find_last_payload(text);
  if (!payload) return hash_features(text, options_.dim);

  const Eigen::Index d = payload->latent.size();
  if (d + 1 > options_.dim) {
    fail(ErrorCode::EmbedderFailure, "payload dimension " + std::to_string(d) + " does not fit embedding dim");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(options_.dim);
  Eigen::VectorXd u = payload->latent / options_.payload_radius;
  const double r = u.norm();
  if (r > 1.0) u /= r;
  v.head(d) = u;
  v[d] = std::sqrt(std::max(0.0, 1.0 - u.squaredNorm()));
  const int rest = options_.dim - static_cast<int>(d) - 1;
  if (options_.filler_weight > 0.0 && rest > 0) {
    Eigen::VectorXd h = hash_features(text, rest);
    const double hn = h.norm();
    if (hn > 0.0) v.tail(rest) = options_.filler_weight * h / hn;
  }
  return v;
}

std::unique_ptr<FeatureHashEmbedder> feature_hash_embedder(int dim) {
  FeatureHashEmbedder::Options o;
  o.dim = dim;
  return std::make_unique<FeatureHashEmbedder>(o);
}

EmbeddingMatrix embed_batch(const std::vector<std::string>& texts, const Embedder& embedder,
                            std::vector<RowMeta> meta, ObservableKind observable) {
  if (!meta.empty()) {
    require(meta.size() == texts.size(), ErrorCode::RowMismatch, "metadata rows do not match texts");
  } else {
    meta.resize(texts.size());
  }
  EmbeddingMatrix out;
  out.observable = observable;
  out.embedder_id = embedder.id();
  const int m = embedder.dim();
  out.vectors.resize(static_cast<Eigen::Index>(texts.size()), m);
  out.zero_flagged.assign(texts.size(), false);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Eigen::VectorXd v;
    try {
      v = embedder.embed(texts[i]);
    } catch (const std::exception& e) {
      fail(ErrorCode::EmbedderFailure, "row " + std::to_string(i) + ": " + e.what());
    }
    if (v.size() != m || !v.allFinite()) {
      fail(ErrorCode::EmbedderFailure, "row " + std::to_string(i) + ": bad vector from embedder");
    }
    const double norm = v.norm();
    if (norm == 0.0) {
      v.setZero();
      v[0] = 1.0;
      out.zero_flagged[i] = true;
    } else {
      v /= norm;
    }
    out.vectors.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  out.meta = std::move(meta);
  return out;
}

EmbeddingMatrix embed_trajectories(const std::vector<const Trajectory*>& trajectories, const ObservableKind& kind,
                                   const Embedder& embedder) {
  std::vector<std::string> texts;
  std::vector<RowMeta> meta;
  for (const Trajectory* t : trajectories) {
    for (int s = 0; s <= t->terminal_step(); ++s) {
      texts.push_back(observable_view(*t, kind, s));
      meta.push_back(RowMeta{t->id, s, t->config.family_id, t->config.ic_id, t->config.run_id, t->condition, t->arm});
    }
  }
  return embed_batch(texts, embedder, std::move(meta), kind);
}

nlohmann::json to_json(const RowMeta& m) {
  return nlohmann::json{{"trajectory_id", m.trajectory_id}, {"step", m.step}, {"family", m.family},
                        {"ic", m.ic},  {"run", m.run},  {"condition", m.condition}, {"arm", m.arm}};
}

RowMeta row_meta_from_json(const nlohmann::json& j) {
  RowMeta m;
  m.trajectory_id = j.at("trajectory_id").get<std::string>();
  m.step = j.at("step").get<int>();
  m.family = j.value("family", "");
  m.ic = j.value("ic", "");
  m.run = j.value("run", 0);
  m.condition = j.value("condition", "");
  m.arm = j.value("arm", "");
  return m;
}

void save_embedding(const EmbeddingMatrix& m, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  {
    std::ofstream os(bin, std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + bin.string());
    // Row-major on disk regardless of Eigen's storage order.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m.vectors;
    os.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  }
  nlohmann::json j;
  j["format"] = "float64-le-rowmajor";
  j["rows"] = m.rows();
  j["cols"] = m.dim();
  j["observable"] = m.observable.label();
  j["embedder_id"] = m.embedder_id;
  j["is_subset"] = m.is_subset;
  j["zero_flagged"] = m.zero_flagged;
  auto& rows = j["meta"] = nlohmann::json::array();
  for (const auto& r : m.meta) rows.push_back(to_json(r));
  std::ofstream os(side);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + side.string());
  os << j.dump(1) << '\n';
}

EmbeddingMatrix load_embedding(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  std::ifstream js(side);
  require(static_cast<bool>(js), ErrorCode::Io, "cannot read " + side.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const std::exception& e) {
    fail(ErrorCode::SchemaMismatch, side.string() + ": " + e.what());
  }
  EmbeddingMatrix m;
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  m.observable = parse_observable(j.at("observable").get<std::string>());
  m.embedder_id = j.at("embedder_id").get<std::string>();
  m.is_subset = j.value("is_subset", false);
  m.zero_flagged = j.at("zero_flagged").get<std::vector<bool>>();
  for (const auto& r : j.at("meta")) m.meta.push_back(row_meta_from_json(r));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  std::ifstream bs(bin, std::ios::binary);
  require(static_cast<bool>(bs), ErrorCode::Io, "cannot read " + bin.string());
  bs.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  require(bs.gcount() == static_cast<std::streamsize>(rm.size() * sizeof(double)), ErrorCode::SchemaMismatch,
          "embedding array shorter than sidecar shape");
  m.vectors = rm;
  require(static_cast<Eigen::Index>(m.meta.size()) == rows, ErrorCode::SchemaMismatch, "metadata row count mismatch");
  return m;
}

}  // namespace loopdyn
