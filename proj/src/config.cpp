#include "loopdyn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "loopdyn/error.hpp"

namespace loopdyn {

namespace {

[[noreturn]] void bad(const std::string& path, const YAML::Node& node, const std::string& what) {
  std::string where = path;
  if (node && node.Mark().line >= 0) where += " (line " + std::to_string(node.Mark().line + 1) + ")";
  fail(ErrorCode::ConfigInvalid, where + ": " + what);
}

std::string child(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string item(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void expect_map(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
  if (!node.IsMap()) bad(path.empty() ? "<root>" : path, node, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) bad(child(path, key), kv.first, "unknown key");
  }
}

template <class T>
T scalar(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) bad(path, node, "expected a scalar");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    bad(path, node, "cannot read '" + node.Scalar() + "'");
  }
}

template <class T>
void read(const YAML::Node& map, const std::string& path, const char* key, T& out) {
  if (const auto n = map[key]) out = scalar<T>(n, child(path, key));
}

template <class T>
std::vector<T> sequence(const YAML::Node& node, const std::string& path) {
  if (!node.IsSequence()) bad(path, node, "expected a list");
  std::vector<T> out;
  for (std::size_t i = 0; i < node.size(); ++i) out.push_back(scalar<T>(node[i], item(path, i)));
  return out;
}

template <class F>
auto parsed(const YAML::Node& node, const std::string& path, F&& parse) {
  const auto text = scalar<std::string>(node, path);
  try {
    return parse(text);
  } catch (const Error& e) {
    bad(path, node, e.what());
  }
}

Eigen::VectorXd vector_of(const std::vector<double>& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

void read_loop(const YAML::Node& n, const std::string& path, LoopConfig& c) {
  expect_map(n, path, {"nudge", "instruction", "max_context_chars", "steps", "max_output_tokens", "temperature",
                       "roles"});
  if (const auto k = n["nudge"]) c.nudge_kind = parsed(k, child(path, "nudge"), parse_nudge_kind);
  read(n, path, "instruction", c.operator_instruction);
  read(n, path, "max_context_chars", c.max_context_chars);
  read(n, path, "steps", c.steps);
  read(n, path, "max_output_tokens", c.max_output_tokens);
  read(n, path, "temperature", c.temperature);
  if (const auto r = n["roles"]) {
    const auto roles = sequence<std::string>(r, child(path, "roles"));
    if (roles.size() != 2) bad(child(path, "roles"), r, "expected exactly two role names");
    c.role_a_name = roles[0];
    c.role_b_name = roles[1];
  }
}

void read_generator(const YAML::Node& n, const std::string& path, SyntheticSpec& s) {
  expect_map(n, path, {"kind", "regime", "latent_dim", "contraction_rate", "noise_scale", "basin_centers",
                       "vocabulary_seed", "initial_jitter", "burn_in", "drift_velocity", "dilution_half_tokens",
                       "hash_scale", "filler_words", "quantize_payload"});
  if (const auto k = n["kind"]; k && scalar<std::string>(k, child(path, "kind")) != "synthetic")
    bad(child(path, "kind"), k, "only the synthetic generator is available");
  if (const auto r = n["regime"]) {
    s.regime = parsed(r, child(path, "regime"), [](const std::string& t) {
      try {
        return parse_regime(t);
      } catch (const Error& e) {
        throw Error(ErrorCode::ConfigInvalid, e.what());
      }
    });
  }
  read(n, path, "latent_dim", s.latent_dim);
  read(n, path, "contraction_rate", s.contraction_rate);
  read(n, path, "noise_scale", s.noise_scale);
  read(n, path, "vocabulary_seed", s.vocabulary_seed);
  read(n, path, "initial_jitter", s.initial_jitter);
  read(n, path, "burn_in", s.burn_in);
  read(n, path, "dilution_half_tokens", s.dilution_half_tokens);
  read(n, path, "hash_scale", s.hash_scale);
  read(n, path, "filler_words", s.filler_words);
  read(n, path, "quantize_payload", s.quantize_payload);
  if (const auto b = n["basin_centers"]) {
    const auto p = child(path, "basin_centers");
    if (!b.IsSequence()) bad(p, b, "expected a list of points");
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto v = sequence<double>(b[i], item(p, i));
      if (static_cast<int>(v.size()) != s.latent_dim) bad(item(p, i), b[i], "point does not match latent_dim");
      s.basin_centers.push_back(vector_of(v));
    }
  }
  if (const auto d = n["drift_velocity"]) {
    const auto v = sequence<double>(d, child(path, "drift_velocity"));
    if (static_cast<int>(v.size()) != s.latent_dim) bad(child(path, "drift_velocity"), d, "does not match latent_dim");
    s.drift_velocity = vector_of(v);
  }
  try {
    s.validate();
  } catch (const Error& e) {
    bad(path, n, e.what());
  }
}

FeatureHashEmbedder::Options read_embedder(const YAML::Node& n, const std::string& path) {
  expect_map(n, path, {"dim", "ngram", "payload_radius", "filler_weight", "salt"});
  FeatureHashEmbedder::Options o;
  read(n, path, "dim", o.dim);
  read(n, path, "ngram", o.ngram);
  read(n, path, "payload_radius", o.payload_radius);
  read(n, path, "filler_weight", o.filler_weight);
  read(n, path, "salt", o.salt);
  if (o.dim < 4) bad(child(path, "dim"), n["dim"], "must be >= 4");
  if (o.ngram < 1) bad(child(path, "ngram"), n["ngram"], "must be >= 1");
  if (o.payload_radius <= 0) bad(child(path, "payload_radius"), n["payload_radius"], "must be positive");
  return o;
}

void read_partition(const YAML::Node& n, const std::string& path, PartitionSpec& p) {
  expect_map(n, path, {"projection_k", "method", "k", "radius", "min_pts", "seed", "late_window_fraction"});
  read(n, path, "projection_k", p.projection_k);
  if (const auto m = n["method"]) p.method = parsed(m, child(path, "method"), parse_cluster_method);
  read(n, path, "k", p.k);
  read(n, path, "radius", p.radius);
  read(n, path, "min_pts", p.min_pts);
  read(n, path, "seed", p.seed);
  read(n, path, "late_window_fraction", p.late_window_fraction);
  if (p.projection_k < 1) bad(child(path, "projection_k"), n["projection_k"], "must be >= 1");
  if (p.k < 1) bad(child(path, "k"), n["k"], "must be >= 1");
  if (p.late_window_fraction <= 0 || p.late_window_fraction >= 1)
    bad(child(path, "late_window_fraction"), n["late_window_fraction"], "must lie in (0, 1)");
}

void read_analysis(const YAML::Node& n, const std::string& path, AnalysisConfig& a) {
  expect_map(n, path, {"decision_step", "bootstrap_iterations", "null_iterations", "recurrence_epsilon",
                       "recurrence_tau", "recurrence_metric", "period_threshold", "landscape",
                       "landscape_resolution", "landscape_sigma", "landscape_basins", "declared_inapplicable",
                       "destination_lag"});
  read(n, path, "decision_step", a.decision_step);
  read(n, path, "bootstrap_iterations", a.bootstrap_iterations);
  read(n, path, "null_iterations", a.null_iterations);
  read(n, path, "recurrence_epsilon", a.recurrence_epsilon);
  read(n, path, "recurrence_tau", a.recurrence_tau);
  read(n, path, "period_threshold", a.period_threshold);
  read(n, path, "landscape", a.landscape);
  read(n, path, "landscape_resolution", a.landscape_resolution);
  read(n, path, "landscape_sigma", a.landscape_sigma);
  read(n, path, "landscape_basins", a.landscape_basins);
  read(n, path, "destination_lag", a.destination_lag);
  if (const auto m = n["recurrence_metric"]) {
    const auto p = child(path, "recurrence_metric");
    const auto t = scalar<std::string>(m, p);
    if (t == "cosine") a.recurrence_metric = PointMetric::Cosine;
    else if (t == "euclidean") a.recurrence_metric = PointMetric::Euclidean;
    else bad(p, m, "expected cosine or euclidean");
  }
  if (const auto d = n["declared_inapplicable"]) {
    const auto p = child(path, "declared_inapplicable");
    const auto names = sequence<std::string>(d, p);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& s = names[i];
      if (s.size() != 2 || s[0] != 'c' || s[1] < '1' || s[1] > '4') bad(item(p, i), d[i], "expected c1..c4");
      a.declared_inapplicable[static_cast<std::size_t>(s[1] - '1')] = true;
    }
  }
  if (a.bootstrap_iterations < 0) bad(child(path, "bootstrap_iterations"), n, "must be >= 0");
  if (a.null_iterations < 2) bad(child(path, "null_iterations"), n, "must be >= 2");
  if (a.destination_lag < 1) bad(child(path, "destination_lag"), n, "must be >= 1");
}

ConditionConfig read_condition(const YAML::Node& n, const std::string& path) {
  expect_map(n, path, {"kind", "mode", "doses", "source_experiment", "homogeneous"});
  ConditionConfig c;
  if (!n["kind"]) bad(path, n, "missing kind");
  c.kind = parsed(n["kind"], child(path, "kind"), [](const std::string& t) {
    try {
      return parse_perturbation_kind(t);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigInvalid, e.what());
    }
  });
  if (const auto m = n["mode"]) c.mode = parsed(m, child(path, "mode"), parse_injection_mode);
  if (const auto d = n["doses"]) {
    c.doses = sequence<int>(d, child(path, "doses"));
    for (std::size_t i = 0; i < c.doses.size(); ++i) {
      if (c.doses[i] <= 0) bad(item(child(path, "doses"), i), d[i], "dose must be positive");
      if (i && c.doses[i] <= c.doses[i - 1]) bad(item(child(path, "doses"), i), d[i], "doses must be strictly increasing");
    }
  }
  read(n, path, "homogeneous", c.homogeneous);
  if (const auto s = n["source_experiment"]) c.source_experiment = scalar<std::string>(s, child(path, "source_experiment"));
  if (c.kind != PerturbationKind::Control && !c.mode) c.mode = InjectionMode::Overwrite;
  try {
    for (const auto& e : c.expand()) e.validate();
  } catch (const Error& e) {
    bad(path, n, e.what());
  }
  return c;
}

}  // namespace

std::vector<PerturbationCondition> ConditionConfig::expand() const {
  PerturbationCondition base{kind, mode, std::nullopt, source_experiment, homogeneous};
  if (doses.empty()) return {base};
  std::vector<PerturbationCondition> out;
  for (int d : doses) {
    auto c = base;
    c.dose_tokens = d;
    out.push_back(c);
  }
  return out;
}

std::vector<PerturbationCondition> ExperimentConfig::expanded_conditions() const {
  std::vector<PerturbationCondition> out;
  for (const auto& c : conditions)
    if (c.kind == PerturbationKind::Control) out.push_back(c.expand().front());
  for (const auto& c : conditions)
    if (c.kind != PerturbationKind::Control)
      for (const auto& e : c.expand()) out.push_back(e);
  return out;
}

bool ExperimentConfig::has_perturbation() const {
  for (const auto& c : conditions)
    if (c.kind != PerturbationKind::Control) return true;
  return false;
}

void ExperimentConfig::validate() const {
  const auto check = [](bool ok, const std::string& path, const std::string& what) {
    if (!ok) fail(ErrorCode::ConfigInvalid, path + ": " + what);
  };
  check(!experiment_id.empty(), "experiment_id", "required");
  check(!families.empty(), "families", "at least one family is required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < families.size(); ++i) {
    check(!families[i].id.empty() && families[i].id.find('/') == std::string::npos, item("families", i) + ".id",
          "must be non-empty and free of '/'");
    check(ids.insert(families[i].id).second, item("families", i) + ".id", "duplicate family id");
    check(!families[i].seed_texts.empty(), item("families", i), "needs at least one initial condition");
  }
  check(runs >= 1, "runs", "must be >= 1");
  try {
    loop.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, std::string("loop: ") + e.what());
  }
  check(injection_step >= 1 && injection_step + 1 < loop.steps, "injection_step",
        "must leave a pre-injection step and a post-injection step");
  bool control = false;
  std::set<std::string> labels;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    control = control || conditions[i].kind == PerturbationKind::Control;
    for (const auto& e : conditions[i].expand())
      check(labels.insert(e.label()).second, item("conditions", i), "duplicate condition label " + e.label());
  }
  check(!has_perturbation() || control, "conditions", "a control condition is required alongside perturbations");
  check(!observables.empty(), "observables", "at least one observable is required");
  for (std::size_t i = 0; i < observables.size(); ++i)
    check(!observables[i].dialog_only() || loop.nudge_kind == NudgeKind::Dialog, item("observables", i),
          "dialog observable on a non-dialog loop");
  check(analysis.decision_step >= 0 && analysis.decision_step < loop.steps, "analysis.decision_step",
        "must lie inside the trajectory");
}

ExperimentConfig parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::ConfigInvalid, std::string("malformed config: ") + e.what());
  }
  expect_map(root, "", {"experiment_id", "seed", "loop", "generator", "families", "runs", "injection_step",
                        "conditions", "observables", "embedder", "alt_embedders", "partition", "analysis"});
  ExperimentConfig c;
  read(root, "", "experiment_id", c.experiment_id);
  read(root, "", "seed", c.seed);
  read(root, "", "runs", c.runs);
  read(root, "", "injection_step", c.injection_step);
  if (const auto n = root["loop"]) read_loop(n, "loop", c.loop);
  if (const auto n = root["generator"]) read_generator(n, "generator", c.generator);
  if (const auto f = root["families"]) {
    if (!f.IsSequence()) bad("families", f, "expected a list");
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto p = item("families", i);
      expect_map(f[i], p, {"id", "seed_texts", "ics"});
      FamilyConfig fam;
      read(f[i], p, "id", fam.id);
      if (f[i]["seed_texts"] && f[i]["ics"]) bad(p, f[i], "give either seed_texts or ics, not both");
      if (const auto s = f[i]["seed_texts"]) fam.seed_texts = sequence<std::string>(s, child(p, "seed_texts"));
      if (const auto n = f[i]["ics"]) {
        const int ics = scalar<int>(n, child(p, "ics"));
        if (ics < 1) bad(child(p, "ics"), n, "must be >= 1");
        for (int k = 0; k < ics; ++k)
          fam.seed_texts.push_back("family " + fam.id + " initial condition " + std::to_string(k));
      }
      c.families.push_back(std::move(fam));
    }
  }
  if (const auto n = root["conditions"]) {
    if (!n.IsSequence()) bad("conditions", n, "expected a list");
    for (std::size_t i = 0; i < n.size(); ++i) c.conditions.push_back(read_condition(n[i], item("conditions", i)));
  }
  if (const auto n = root["observables"]) {
    c.observables.clear();
    const auto names = sequence<std::string>(n, "observables");
    for (std::size_t i = 0; i < names.size(); ++i)
      c.observables.push_back(parsed(n[i], item("observables", i), parse_observable));
  }
  if (const auto n = root["embedder"]) c.embedder = read_embedder(n, "embedder");
  if (const auto n = root["alt_embedders"]) {
    if (!n.IsSequence()) bad("alt_embedders", n, "expected a list");
    for (std::size_t i = 0; i < n.size(); ++i) c.alt_embedders.push_back(read_embedder(n[i], item("alt_embedders", i)));
  }
  if (const auto n = root["partition"]) read_partition(n, "partition", c.partition);
  if (const auto n = root["analysis"]) read_analysis(n, "analysis", c.analysis);
  c.loop.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

namespace {

nlohmann::json embedder_json(const FeatureHashEmbedder::Options& o) {
  return {{"dim", o.dim}, {"ngram", o.ngram}, {"payload_radius", o.payload_radius},
          {"filler_weight", o.filler_weight}, {"salt", o.salt}};
}

FeatureHashEmbedder::Options embedder_from(const nlohmann::json& j) {
  FeatureHashEmbedder::Options o;
  o.dim = j.at("dim");
  o.ngram = j.at("ngram");
  o.payload_radius = j.at("payload_radius");
  o.filler_weight = j.at("filler_weight");
  o.salt = j.at("salt");
  return o;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment_id"] = c.experiment_id;
  j["seed"] = c.seed;
  j["loop"] = to_json(c.loop);
  const auto& g = c.generator;
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& b : g.basin_centers) centers.push_back(vec_json(b));
  j["generator"] = {{"kind", "synthetic"},
                    {"regime", to_string(g.regime)},
                    {"latent_dim", g.latent_dim},
                    {"contraction_rate", g.contraction_rate},
                    {"noise_scale", g.noise_scale},
                    {"basin_centers", centers},
                    {"vocabulary_seed", g.vocabulary_seed},
                    {"initial_jitter", g.initial_jitter},
                    {"burn_in", g.burn_in},
                    {"drift_velocity", vec_json(g.drift_velocity)},
                    {"dilution_half_tokens", g.dilution_half_tokens},
                    {"hash_scale", g.hash_scale},
                    {"filler_words", g.filler_words},
                    {"quantize_payload", g.quantize_payload}};
  for (const auto& f : c.families) j["families"].push_back({{"id", f.id}, {"seed_texts", f.seed_texts}});
  j["runs"] = c.runs;
  j["injection_step"] = c.injection_step;
  j["conditions"] = nlohmann::json::array();
  for (const auto& cc : c.conditions) {
    nlohmann::json e{{"kind", to_string(cc.kind)}, {"doses", cc.doses}, {"homogeneous", cc.homogeneous}};
    e["mode"] = cc.mode ? nlohmann::json(to_string(*cc.mode)) : nlohmann::json(nullptr);
    e["source_experiment"] = cc.source_experiment ? nlohmann::json(*cc.source_experiment) : nlohmann::json(nullptr);
    j["conditions"].push_back(e);
  }
  for (const auto& o : c.observables) j["observables"].push_back(o.label());
  j["embedder"] = embedder_json(c.embedder);
  j["alt_embedders"] = nlohmann::json::array();
  for (const auto& o : c.alt_embedders) j["alt_embedders"].push_back(embedder_json(o));
  const auto& p = c.partition;
  j["partition"] = {{"projection_k", p.projection_k}, {"method", to_string(p.method)},
                    {"k", p.k},
                    {"radius", p.radius},
                    {"min_pts", p.min_pts},
                    {"seed", p.seed},
                    {"late_window_fraction", p.late_window_fraction}};
  const auto& a = c.analysis;
  std::vector<std::string> inapplicable;
  for (int i = 0; i < 4; ++i)
    if (a.declared_inapplicable[static_cast<std::size_t>(i)]) inapplicable.push_back("c" + std::to_string(i + 1));
  j["analysis"] = {{"decision_step", a.decision_step},
                   {"bootstrap_iterations", a.bootstrap_iterations},
                   {"null_iterations", a.null_iterations},
                   {"recurrence_epsilon", a.recurrence_epsilon},
                   {"recurrence_tau", a.recurrence_tau},
                   {"recurrence_metric", a.recurrence_metric == PointMetric::Cosine ? "cosine" : "euclidean"},
                   {"period_threshold", a.period_threshold},
                   {"landscape", a.landscape},
                   {"landscape_resolution", a.landscape_resolution},
                   {"landscape_sigma", a.landscape_sigma},
                   {"landscape_basins", a.landscape_basins},
                   {"declared_inapplicable", inapplicable},
                   {"destination_lag", a.destination_lag}};
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.experiment_id = j.at("experiment_id");
    c.seed = j.at("seed");
    c.loop = loop_config_from_json(j.at("loop"));
    const auto& g = j.at("generator");
    c.generator.regime = parse_regime(g.at("regime").get<std::string>());
    c.generator.latent_dim = g.at("latent_dim");
    c.generator.contraction_rate = g.at("contraction_rate");
    c.generator.noise_scale = g.at("noise_scale");
    for (const auto& b : g.at("basin_centers")) c.generator.basin_centers.push_back(vector_of(b.get<std::vector<double>>()));
    c.generator.vocabulary_seed = g.at("vocabulary_seed");
    c.generator.initial_jitter = g.at("initial_jitter");
    c.generator.burn_in = g.at("burn_in");
    c.generator.drift_velocity = vector_of(g.at("drift_velocity").get<std::vector<double>>());
    c.generator.dilution_half_tokens = g.at("dilution_half_tokens");
    c.generator.hash_scale = g.at("hash_scale");
    c.generator.filler_words = g.at("filler_words");
    c.generator.quantize_payload = g.at("quantize_payload");
    for (const auto& f : j.at("families")) c.families.push_back({f.at("id"), f.at("seed_texts")});
    c.runs = j.at("runs");
    c.injection_step = j.at("injection_step");
    for (const auto& e : j.at("conditions")) {
      ConditionConfig cc;
      cc.kind = parse_perturbation_kind(e.at("kind").get<std::string>());
      if (!e.at("mode").is_null()) cc.mode = parse_injection_mode(e.at("mode").get<std::string>());
      cc.doses = e.at("doses").get<std::vector<int>>();
      cc.homogeneous = e.at("homogeneous");
      if (!e.at("source_experiment").is_null()) cc.source_experiment = e.at("source_experiment").get<std::string>();
      c.conditions.push_back(cc);
    }
    c.observables.clear();
    for (const auto& o : j.at("observables")) c.observables.push_back(parse_observable(o.get<std::string>()));
    c.embedder = embedder_from(j.at("embedder"));
    for (const auto& o : j.at("alt_embedders")) c.alt_embedders.push_back(embedder_from(o));
    const auto& p = j.at("partition");
    c.partition.projection_k = p.at("projection_k");
    c.partition.method = parse_cluster_method(p.at("method").get<std::string>());
    c.partition.k = p.at("k");
    c.partition.radius = p.at("radius");
    c.partition.min_pts = p.at("min_pts");
    c.partition.seed = p.at("seed");
    c.partition.late_window_fraction = p.at("late_window_fraction");
    const auto& a = j.at("analysis");
    c.analysis.decision_step = a.at("decision_step");
    c.analysis.bootstrap_iterations = a.at("bootstrap_iterations");
    c.analysis.null_iterations = a.at("null_iterations");
    c.analysis.recurrence_epsilon = a.at("recurrence_epsilon");
    c.analysis.recurrence_tau = a.at("recurrence_tau");
    c.analysis.recurrence_metric = a.at("recurrence_metric") == "cosine" ? PointMetric::Cosine : PointMetric::Euclidean;
    c.analysis.period_threshold = a.at("period_threshold");
    c.analysis.landscape = a.at("landscape");
    c.analysis.landscape_resolution = a.at("landscape_resolution");
    c.analysis.landscape_sigma = a.at("landscape_sigma");
    c.analysis.landscape_basins = a.at("landscape_basins");
    for (const auto& s : a.at("declared_inapplicable"))
      c.analysis.declared_inapplicable[static_cast<std::size_t>(s.get<std::string>()[1] - '1')] = true;
    c.analysis.destination_lag = a.at("destination_lag");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigInvalid, std::string("resolved config: ") + e.what());
  }
}

PartitionSpec apply_partition_override(PartitionSpec spec, std::string_view overrides) {
  std::string text(overrides);
  std::istringstream in(text);
  std::string pair;
  while (std::getline(in, pair, ',')) {
    if (pair.empty()) continue;
    const auto eq = pair.find('=');
    require(eq != std::string::npos, ErrorCode::ConfigInvalid, "partition override '" + pair + "' lacks '='");
    const auto key = pair.substr(0, eq);
    const auto value = pair.substr(eq + 1);
    try {
      if (key == "projection_k") spec.projection_k = std::stoi(value);
      else if (key == "method") spec.method = parse_cluster_method(value);
      else if (key == "k") spec.k = std::stoi(value);
      else if (key == "radius") spec.radius = std::stod(value);
      else if (key == "min_pts") spec.min_pts = std::stoi(value);
      else if (key == "seed") spec.seed = std::stoull(value);
      else if (key == "late_window_fraction") spec.late_window_fraction = std::stod(value);
      else fail(ErrorCode::ConfigInvalid, "partition." + key + ": unknown key");
    } catch (const std::logic_error&) {
      fail(ErrorCode::ConfigInvalid, "partition." + key + ": cannot read '" + value + "'");
    }
  }
  require(spec.projection_k >= 1, ErrorCode::ConfigInvalid, "partition.projection_k: must be >= 1");
  require(spec.k >= 1, ErrorCode::ConfigInvalid, "partition.k: must be >= 1");
  require(spec.radius > 0, ErrorCode::ConfigInvalid, "partition.radius: must be positive");
  require(spec.min_pts >= 1, ErrorCode::ConfigInvalid, "partition.min_pts: must be >= 1");
  require(spec.late_window_fraction > 0 && spec.late_window_fraction < 1, ErrorCode::ConfigInvalid,
          "partition.late_window_fraction: must lie in (0, 1)");
  return spec;
}

}  // namespace loopdyn
