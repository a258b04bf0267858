#include "loopdyn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "loopdyn/audit.hpp"
#include "loopdyn/dose_response.hpp"
#include "loopdyn/dynamics.hpp"
#include "loopdyn/error.hpp"
#include "loopdyn/landscape.hpp"
#include "loopdyn/predictability.hpp"
#include "loopdyn/stats.hpp"

namespace loopdyn {

namespace fs = std::filesystem;

std::string_view to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::Generate: return "generate";
    case Phase::Embed: return "embed";
    case Phase::Partition: return "partition";
    case Phase::Analyze: return "analyze";
    case Phase::Report: return "report";
  }
  return "generate";
}

std::vector<Phase> all_phases() { return {Phase::Generate, Phase::Embed, Phase::Partition, Phase::Analyze, Phase::Report}; }

std::vector<Phase> parse_phases(std::string_view text) {
  if (text == "all") return all_phases();
  std::set<Phase> picked;
  std::istringstream in{std::string(text)};
  std::string name;
  while (std::getline(in, name, ',')) {
    bool found = false;
    for (auto p : all_phases()) {
      if (to_string(p) == name) {
        picked.insert(p);
        found = true;
      }
    }
    require(found, ErrorCode::ConfigInvalid, "phases: unknown phase '" + name + "'");
  }
  require(!picked.empty(), ErrorCode::ConfigInvalid, "phases: none selected");
  return {picked.begin(), picked.end()};
}

std::pair<std::string, std::optional<int>> split_condition_label(std::string_view label) {
  static const std::regex dose_re("_dose([0-9]+)");
  const std::string s(label);
  std::smatch m;
  if (!std::regex_search(s, m, dose_re)) return {s, std::nullopt};
  return {m.prefix().str() + m.suffix().str(), std::stoi(m[1].str())};
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(os.str());
  return hex.str();
}

namespace {

// ---------------------------------------------------------------------------
// files

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), ErrorCode::SchemaMismatch, "missing column " + name);
    return static_cast<int>(it - header.begin());
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

CsvTable read_csv(const fs::path& path) {
  CsvTable t;
  std::istringstream in(read_text(path));
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      require(fields.size() == t.header.size(), ErrorCode::SchemaMismatch,
              path.string() + ": row width does not match header");
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

std::string join_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + quote_field(fields[i]);
  return out + "\n";
}

std::string num(double v) {
  if (!std::isfinite(v)) return "null";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "null"; }

std::optional<double> to_number(const std::string& s) {
  if (s.empty() || s == "null") return std::nullopt;
  return std::stod(s);
}

// ---------------------------------------------------------------------------
// provenance

class Provenance {
 public:
  explicit Provenance(fs::path dir) : dir_(std::move(dir)) {
    const auto p = dir_ / artifact::kProvenance;
    if (fs::exists(p)) doc_ = read_json(p);
    if (!doc_.contains("files")) doc_["files"] = nlohmann::json::object();
  }

  void record(const std::string& rel, std::string_view phase, const std::vector<std::string>& inputs) {
    nlohmann::json in = nlohmann::json::object();
    for (const auto& i : inputs) in[i] = file_hash(dir_ / i);
    doc_["files"][rel] = {{"hash", file_hash(dir_ / rel)}, {"phase", phase}, {"inputs", in}};
  }

  void set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }
  const nlohmann::json& doc() const { return doc_; }
  void save() const { write_json(dir_ / artifact::kProvenance, doc_); }

 private:
  fs::path dir_;
  nlohmann::json doc_;
};

// ---------------------------------------------------------------------------
// parallel work with results in index order

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// units manifest

nlohmann::json optional_id(const std::optional<Trajectory>& t) {
  return t ? nlohmann::json(t->id) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json unit_manifest_entry(const PairedUnit& u) {
  nlohmann::json j{{"family", u.family}, {"ic", u.ic}, {"run", u.run}, {"condition", u.condition}};
  j["dose"] = u.dose ? nlohmann::json(*u.dose) : nlohmann::json(nullptr);
  j["a"] = optional_id(u.a);
  j["b"] = optional_id(u.b);
  j["z"] = optional_id(u.z);
  if (u.injection) {
    j["injection"] = {{"step", u.injection->step}, {"mode", to_string(u.injection->mode)}, {"text", u.injection->text}};
  } else {
    j["injection"] = nullptr;
  }
  j["source_ids"] = u.source_ids;
  j["source_rule_violation"] = u.source_rule_violation;
  return j;
}

void write_units_jsonl(const fs::path& path, const std::vector<PairedUnit>& units) {
  std::string text;
  for (const auto& u : units) text += unit_manifest_entry(u).dump() + "\n";
  write_text(path, text);
}

UnitSet read_units_jsonl(const fs::path& path, const std::vector<Trajectory>& trajectories) {
  std::map<std::string, const Trajectory*> by_id;
  for (const auto& t : trajectories) by_id[t.id] = &t;
  const auto lookup = [&](const nlohmann::json& id) -> std::optional<Trajectory> {
    if (id.is_null()) return std::nullopt;
    const auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) return std::nullopt;
    return *it->second;
  };
  UnitSet set;
  std::istringstream in(read_text(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PairedUnit u;
      u.family = j.at("family");
      u.ic = j.at("ic");
      u.run = j.at("run");
      u.condition = j.at("condition");
      if (!j.at("dose").is_null()) u.dose = j.at("dose").get<int>();
      u.a = lookup(j.at("a"));
      u.b = lookup(j.at("b"));
      u.z = lookup(j.at("z"));
      if (!j.at("injection").is_null()) {
        const auto& inj = j.at("injection");
        u.injection = InjectionSpec{inj.at("step"), parse_injection_mode(inj.at("mode").get<std::string>()),
                                    inj.at("text")};
      }
      u.source_ids = j.at("source_ids").get<std::vector<std::string>>();
      u.source_rule_violation = j.at("source_rule_violation");
      set.units.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SchemaMismatch, path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

UnitSet reconstruct_units(const std::vector<Trajectory>& trajectories) {
  using Key = std::tuple<std::string, std::string, int>;
  std::map<Key, std::map<std::string, const Trajectory*>> controls;
  std::vector<Key> order;
  std::vector<const Trajectory*> treated;
  for (const auto& t : trajectories) {
    const Key key{t.config.family_id, t.config.ic_id, t.config.run_id};
    if (t.arm == "Z") {
      treated.push_back(&t);
      continue;
    }
    if (!controls.count(key)) order.push_back(key);
    controls[key][t.arm] = &t;
  }
  for (const auto* z : treated) {
    const Key key{z->config.family_id, z->config.ic_id, z->config.run_id};
    if (!controls.count(key)) order.push_back(key), controls[key];
  }
  const auto arm = [](const std::map<std::string, const Trajectory*>& m, const char* name) -> std::optional<Trajectory> {
    const auto it = m.find(name);
    if (it == m.end()) return std::nullopt;
    return *it->second;
  };
  UnitSet set;
  set.injection_text_recorded = false;
  for (const auto& key : order) {
    const auto& arms = controls[key];
    PairedUnit control;
    std::tie(control.family, control.ic, control.run) = key;
    control.condition = "control";
    control.a = arm(arms, "A");
    control.b = arm(arms, "B");
    control.z = control.a;
    set.units.push_back(control);
    for (const auto* z : treated) {
      if (Key{z->config.family_id, z->config.ic_id, z->config.run_id} != key) continue;
      PairedUnit u = control;
      std::tie(u.condition, u.dose) = split_condition_label(z->condition);
      u.z = *z;
      for (const auto& s : z->steps) {
        if (!s.injected) continue;
        const auto mode = s.injection_mode.value_or(InjectionMode::Overwrite);
        // overwrite arms carry the injected text as the step output
        u.injection = InjectionSpec{s.step, mode, mode == InjectionMode::Overwrite ? s.output : "[unrecorded]"};
        break;
      }
      set.units.push_back(std::move(u));
    }
  }
  return set;
}

namespace {

// ---------------------------------------------------------------------------
// generate

struct SeedUnit {
  std::string family;
  std::string ic;
  int run = 0;
  std::string seed_text;
};

std::vector<SeedUnit> seed_units(const ExperimentConfig& c) {
  std::vector<SeedUnit> out;
  for (const auto& f : c.families)
    for (std::size_t i = 0; i < f.seed_texts.size(); ++i)
      for (int r = 0; r < c.runs; ++r) out.push_back({f.id, "ic" + std::to_string(i), r, f.seed_texts[i]});
  return out;
}

LoopConfig unit_loop(const ExperimentConfig& c, const SeedUnit& s) {
  LoopConfig l = c.loop;
  l.seed = c.seed;
  l.family_id = s.family;
  l.ic_id = s.ic;
  l.run_id = s.run;
  l.seed_text = s.seed_text;
  return l;
}

std::vector<AdversarialSource> sources_from(const std::vector<Trajectory>& trajectories) {
  std::vector<AdversarialSource> pool;
  for (const auto& t : trajectories)
    if (t.arm == "A" && !t.steps.empty())
      pool.push_back({t.id, t.config.family_id, t.config.ic_id, t.steps.back().output});
  return pool;
}

void phase_generate(const ExperimentConfig& c, const fs::path& out, int jobs, Provenance& prov) {
  const auto gen = make_synthetic_generator(c.generator);
  const auto units = seed_units(c);
  std::vector<Trajectory> a(units.size()), b(units.size());
  parallel_for(units.size(), jobs, [&](std::size_t i) {
    const auto l = unit_loop(c, units[i]);
    a[i] = run_trajectory(l, *gen, std::nullopt, "A");
    a[i].id = trajectory_id(l, "A", "");
    b[i] = run_trajectory(l, *gen, std::nullopt, "B");
    b[i].id = trajectory_id(l, "B", "");
  });

  std::map<std::string, std::vector<AdversarialSource>> pools;
  std::vector<std::string> inputs{artifact::kConfig};
  for (const auto& cond : c.expanded_conditions()) {
    if (cond.kind != PerturbationKind::Adversarial || pools.count(*cond.source_experiment)) continue;
    if (*cond.source_experiment == "self") {
      pools["self"] = sources_from(a);
    } else {
      pools[*cond.source_experiment] = sources_from(read_trajectories_jsonl(*cond.source_experiment));
    }
  }

  std::vector<PerturbationCondition> treatments;
  for (const auto& cond : c.expanded_conditions())
    if (cond.kind != PerturbationKind::Control) treatments.push_back(cond);
  const auto n_t = treatments.size();
  std::vector<PairedUnit> treated(units.size() * n_t);
  parallel_for(treated.size(), jobs, [&](std::size_t k) {
    const auto i = k / n_t;
    const auto& cond = treatments[k % n_t];
    const auto l = unit_loop(c, units[i]);
    const auto label = cond.label();
    PairedUnit u;
    u.family = l.family_id;
    u.ic = l.ic_id;
    u.run = l.run_id;
    std::tie(u.condition, u.dose) = split_condition_label(label);
    Rng rng(combine_seed(combine_seed(c.seed, a[i].id), label));
    static const std::vector<AdversarialSource> none;
    const auto& pool = cond.kind == PerturbationKind::Adversarial ? pools.at(*cond.source_experiment) : none;
    std::optional<InjectionSpec> run_with;
    try {
      const auto plan = build_perturbation_text(cond, {a[i].id, l.family_id, l.ic_id}, rng, pool, c.injection_step);
      u.injection = InjectionSpec{c.injection_step, cond.mode.value_or(InjectionMode::Overwrite), plan.resolved_text};
      u.source_ids = plan.source_ids;
      run_with = u.injection;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SourceRuleViolation) {
        u.source_rule_violation = true;
      } else if (e.code() == ErrorCode::EmptyAfterTokenization) {
        u.injection = InjectionSpec{c.injection_step, cond.mode.value_or(InjectionMode::Overwrite), ""};
      } else {
        throw;
      }
    }
    Trajectory z = run_trajectory(l, *gen, run_with, "A");
    z.arm = "Z";
    z.condition = label;
    z.id = trajectory_id(l, "Z", label);
    u.a = a[i];
    u.b = b[i];
    u.z = std::move(z);
    treated[k] = std::move(u);
  });

  std::vector<Trajectory> all;
  std::vector<PairedUnit> manifest;
  for (std::size_t i = 0; i < units.size(); ++i) {
    all.push_back(a[i]);
    all.push_back(b[i]);
    PairedUnit control;
    control.family = a[i].config.family_id;
    control.ic = a[i].config.ic_id;
    control.run = a[i].config.run_id;
    control.condition = "control";
    control.a = a[i];
    control.b = b[i];
    control.z = a[i];
    manifest.push_back(control);
    for (std::size_t j = 0; j < n_t; ++j) {
      auto& u = treated[i * n_t + j];
      all.push_back(*u.z);
      manifest.push_back(std::move(u));
    }
  }
  write_trajectories_jsonl(out / artifact::kSteps, all);
  write_units_jsonl(out / artifact::kUnits, manifest);
  prov.record(artifact::kSteps, "generate", inputs);
  prov.record(artifact::kUnits, "generate", {artifact::kConfig, artifact::kSteps});
}

// ---------------------------------------------------------------------------
// embed

std::string observable_stem(const ObservableKind& kind) {
  auto s = kind.label();
  std::replace(s.begin(), s.end(), ':', '-');
  return s;
}

std::string embedding_rel(const ObservableKind& kind, const std::string& tag) {
  return "embeddings/" + observable_stem(kind) + "." + tag;
}

EmbeddingMatrix embed_parallel(const std::vector<const Trajectory*>& ts, const ObservableKind& kind,
                               const Embedder& embedder, int jobs) {
  const auto chunks = static_cast<std::size_t>(std::max(1, std::min<int>(jobs, static_cast<int>(ts.size()))));
  std::vector<EmbeddingMatrix> parts(chunks);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const auto lo = ts.size() * c / chunks, hi = ts.size() * (c + 1) / chunks;
    parts[c] = embed_trajectories({ts.begin() + static_cast<std::ptrdiff_t>(lo), ts.begin() + static_cast<std::ptrdiff_t>(hi)},
                                  kind, embedder);
  });
  EmbeddingMatrix out = parts.front();
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  out.vectors.resize(rows, parts.front().dim());
  out.meta.clear();
  out.zero_flagged.clear();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.vectors.middleRows(r, p.rows()) = p.vectors;
    r += p.rows();
    out.meta.insert(out.meta.end(), p.meta.begin(), p.meta.end());
    out.zero_flagged.insert(out.zero_flagged.end(), p.zero_flagged.begin(), p.zero_flagged.end());
  }
  return out;
}

void save_recorded_embedding(const EmbeddingMatrix& m, const fs::path& out, const std::string& rel,
                             Provenance& prov) {
  fs::create_directories((out / rel).parent_path());
  save_embedding(m, out / rel);
  prov.record(rel + ".bin", "embed", {artifact::kSteps});
  prov.record(rel + ".json", "embed", {artifact::kSteps});
}

void phase_embed(const ExperimentConfig& c, const fs::path& out, int jobs, Provenance& prov) {
  const auto trajectories = read_trajectories_jsonl(out / artifact::kSteps);
  std::vector<const Trajectory*> all, controls;
  for (const auto& t : trajectories) {
    all.push_back(&t);
    if (t.arm == "A") controls.push_back(&t);
  }
  const FeatureHashEmbedder canonical(c.embedder);
  for (const auto& kind : c.observables)
    save_recorded_embedding(embed_parallel(all, kind, canonical, jobs), out, embedding_rel(kind, "canonical"), prov);
  // alternative embedders feed the embedder-robustness check on the control arms
  for (std::size_t k = 0; k < c.alt_embedders.size(); ++k) {
    const FeatureHashEmbedder alt(c.alt_embedders[k]);
    save_recorded_embedding(embed_parallel(controls, c.observables.front(), alt, jobs), out,
                            embedding_rel(c.observables.front(), "alt" + std::to_string(k + 1)), prov);
  }
}

// ---------------------------------------------------------------------------
// partition

void phase_partition(const ExperimentConfig& c, const fs::path& out, Provenance& prov) {
  const auto rel = embedding_rel(c.observables.front(), "canonical");
  const auto matrix = load_embedding(out / rel);
  const auto partition = fit_partition(matrix, c.partition);
  fs::create_directories((out / artifact::kPartition).parent_path());
  save_partition(partition, out / artifact::kPartition);
  const std::string stem = artifact::kPartition;
  prov.record(stem + ".json", "partition", {rel + ".bin", rel + ".json", artifact::kConfig});
  prov.record(stem + ".labels.bin", "partition", {rel + ".bin", rel + ".json", artifact::kConfig});
  auto parts = prov.doc().value("partitions", nlohmann::json::array());
  nlohmann::json kept = nlohmann::json::array();
  for (const auto& p : parts)
    if (p.value("role", "") != "fit") kept.push_back(p);
  kept.push_back({{"role", "fit"}, {"hash", partition.hash()}, {"spec", to_json(c)["partition"]}});
  prov.set("partitions", kept);
}

// ---------------------------------------------------------------------------
// analyze

struct RowIndex {
  std::map<std::string, std::vector<Eigen::Index>> rows;

  explicit RowIndex(const EmbeddingMatrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows[m.meta[static_cast<std::size_t>(i)].trajectory_id].push_back(i);
  }

  Eigen::MatrixXd take(const Eigen::MatrixXd& x, const std::string& id) const {
    const auto it = rows.find(id);
    require(it != rows.end(), ErrorCode::RowMismatch, "no embedding rows for " + id);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(it->second.size()), x.cols());
    for (std::size_t r = 0; r < it->second.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(it->second[r]);
    return out;
  }
};

struct Gate {
  double z = 0.0;
  double d = 0.0;
  bool pass = false;
};

// z >= 2 and d >= 0.5 against a time-shuffled null. A null without spread
// counts as exceeded only when the observation lies strictly above it.
Gate null_gate(const ShuffleNull& n) {
  Gate g;
  const double diff = n.observed - n.null_mean;
  const double inf = std::numeric_limits<double>::infinity();
  g.z = n.null_sd > 0.0 ? diff / n.null_sd : (diff > 0.0 ? inf : 0.0);
  try {
    g.d = cohens_d(n.per_unit_observed, n.per_unit_null);
  } catch (const Error&) {
    g.d = diff > 0.0 ? inf : 0.0;
  }
  g.pass = g.z >= 2.0 && g.d >= 0.5;
  return g;
}

nlohmann::json null_json(const ShuffleNull& n, const Gate& g) {
  return {{"observed", n.observed}, {"null_mean", n.null_mean}, {"null_sd", n.null_sd},
          {"z", std::isfinite(g.z) ? nlohmann::json(g.z) : nlohmann::json("inf")},
          {"d", std::isfinite(g.d) ? nlohmann::json(g.d) : nlohmann::json("inf")},
          {"pass", g.pass}};
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return sorted_quantile(v, 0.5);
}

nlohmann::json axis_json(const AxisVerdict& v) {
  return {{"signals", v.signals}, {"available", v.available}, {"strength", to_string(v.strength)}};
}

RecurrenceOptions recurrence_options(const AnalysisConfig& a) {
  RecurrenceOptions o;
  o.epsilon = a.recurrence_epsilon;
  o.tau = a.recurrence_tau;
  o.metric = a.recurrence_metric;
  return o;
}

struct ControlView {
  const Trajectory* trajectory;
  Eigen::MatrixXd points;
  std::vector<int> labels;
};

// Mean recurrence of the control arms after a projection fitted on `m` alone.
double embedder_recurrence(const EmbeddingMatrix& m, const std::vector<ControlView>& controls, int k,
                           const RecurrenceOptions& opt) {
  const auto proj = fit_pca_joint(m, k);
  const RowIndex idx(m);
  const Eigen::MatrixXd all = proj.transform(m.vectors);
  double sum = 0.0;
  for (const auto& c : controls) sum += recurrence(idx.take(all, c.trajectory->id), opt);
  return sum / static_cast<double>(controls.size());
}

// Ensemble centroid displacement from its start grows through the whole
// window instead of levelling off.
bool outward_drift(const std::vector<Eigen::MatrixXd>& runs) {
  const auto T = runs.front().rows();
  std::vector<double> disp(static_cast<std::size_t>(T));
  Eigen::RowVectorXd start = Eigen::RowVectorXd::Zero(runs.front().cols());
  for (const auto& r : runs) start += r.row(0);
  start /= static_cast<double>(runs.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(runs.front().cols());
    for (const auto& r : runs) c += r.row(t);
    c /= static_cast<double>(runs.size());
    disp[static_cast<std::size_t>(t)] = (c - start).norm();
  }
  const double mid = disp[static_cast<std::size_t>((T - 1) / 2)];
  return mid > 0.0 && disp.back() >= 1.5 * mid;
}

struct RegimeResult {
  nlohmann::json json;
  AttractorScorecard scorecard;
};

RegimeResult analyze_regime(const ExperimentConfig& c, const std::vector<ControlView>& controls,
                            const fs::path& out, int jobs, std::string& diagnostics_csv,
                            std::string& predictability_csv) {
  const auto& a = c.analysis;
  const auto opt = recurrence_options(a);
  const double late = c.partition.late_window_fraction;
  std::vector<RegimeDiagnostics> diag(controls.size());
  parallel_for(controls.size(), jobs, [&](std::size_t i) {
    diag[i] = regime_diagnostics(controls[i].points, controls[i].labels, opt, late);
  });

  std::ostringstream csv;
  csv << "trajectory,family,ic,run,recurrence,late_recurrence,mean_dwell,basin_target,basin_score,basin_entry,"
         "exit_return,best_period,period_2_score\n";
  double rec = 0, late_rec = 0, dwell = 0, basin = 0, p2 = 0;
  int meaningful_period = 0;
  std::map<int, int> period_votes;
  for (std::size_t i = 0; i < controls.size(); ++i) {
    const auto& d = diag[i];
    const auto& t = *controls[i].trajectory;
    csv << t.id << ',' << t.config.family_id << ',' << t.config.ic_id << ',' << t.config.run_id << ','
        << num(d.recurrence) << ',' << num(d.late_recurrence) << ',' << num(d.mean_dwell) << ',' << d.basin.target
        << ',' << num(d.basin.basin_score) << ','
        << (d.basin.basin_entry ? std::to_string(*d.basin.basin_entry) : std::string("null")) << ','
        << (d.basin.exit_return ? 1 : 0) << ',' << d.period.best_period << ',' << num(d.period.period_2_score) << '\n';
    rec += d.recurrence;
    late_rec += d.late_recurrence;
    dwell += d.mean_dwell;
    basin += d.basin.basin_score;
    p2 += d.period.period_2_score;
    ++period_votes[d.period.best_period];
    const int bp = d.period.best_period;
    if (bp > 1 && d.period.period_scores.count(bp) && d.period.period_scores.at(bp) > a.period_threshold)
      ++meaningful_period;
  }
  diagnostics_csv = csv.str();
  const double n = static_cast<double>(controls.size());
  rec /= n;
  late_rec /= n;
  dwell /= n;
  basin /= n;
  p2 /= n;
  int best_period = 1, votes = -1;
  for (const auto& [p, v] : period_votes)
    if (v > votes) best_period = p, votes = v;

  // time-shuffled nulls
  std::vector<TrajectoryView> views;
  for (const auto& cv : controls) views.push_back({cv.points, cv.labels});
  const std::vector<std::pair<std::string, ShuffledMetric>> metrics{{"recurrence", ShuffledMetric::Recurrence},
                                                                    {"late_recurrence", ShuffledMetric::LateRecurrence},
                                                                    {"mean_dwell", ShuffledMetric::MeanDwell},
                                                                    {"exit_return", ShuffledMetric::ExitReturn}};
  std::vector<ShuffleNull> nulls(metrics.size());
  parallel_for(metrics.size(), jobs, [&](std::size_t i) {
    nulls[i] = time_shuffled_baseline(metrics[i].second, views, combine_seed(c.seed, metrics[i].first),
                                      a.null_iterations, opt);
  });
  std::map<std::string, Gate> gates;
  nlohmann::json null_doc;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    gates[metrics[i].first] = null_gate(nulls[i]);
    null_doc[metrics[i].first] = null_json(nulls[i], gates[metrics[i].first]);
  }

  // ensembles of runs per (family, ic)
  std::map<std::pair<std::string, std::string>, std::vector<Eigen::MatrixXd>> ensembles;
  for (const auto& cv : controls)
    ensembles[{cv.trajectory->config.family_id, cv.trajectory->config.ic_id}].push_back(cv.points);
  std::vector<double> lambdas, sharpness, growth;
  int outward = 0, ensembles_used = 0, spectrum_failures = 0;
  for (const auto& [key, runs] : ensembles) {
    if (runs.size() < 2) continue;
    ++ensembles_used;
    try {
      const auto s = ensemble_spread_spectrum(runs);
      // an ensemble that collapses in every direction has no exponent but
      // still has sharpness dimension zero
      if (!s.lambdas_late.empty()) lambdas.push_back(s.lambdas_late.front());
      sharpness.push_back(s.sharpness_dim);
    } catch (const Error&) {
      ++spectrum_failures;
    }
    const auto disp = dispersion_drift(runs);
    if (disp.growth) growth.push_back(*disp.growth);
    outward += outward_drift(runs);
  }
  std::optional<double> lambda_late, sharp, growth_median;
  if (!lambdas.empty()) lambda_late = median_of(lambdas);
  if (!sharpness.empty()) sharp = median_of(sharpness);
  if (!growth.empty()) growth_median = median_of(growth);

  // predictability of the late-window basin from the state at each step
  const int T = static_cast<int>(controls.front().points.rows());
  std::vector<int> steps(static_cast<std::size_t>(T)), y;
  std::iota(steps.begin(), steps.end(), 0);
  std::vector<std::string> families;
  std::vector<Eigen::MatrixXd> x_per_step(static_cast<std::size_t>(T),
                                          Eigen::MatrixXd(static_cast<Eigen::Index>(controls.size()),
                                                          controls.front().points.cols()));
  for (std::size_t i = 0; i < controls.size(); ++i) {
    y.push_back(late_window_target(controls[i].labels, late));
    families.push_back(controls[i].trajectory->config.family_id);
    for (int s = 0; s < T; ++s)
      x_per_step[static_cast<std::size_t>(s)].row(static_cast<Eigen::Index>(i)) = controls[i].points.row(s);
  }
  PredictabilityCurve strat, group;
  strat.scheme = CvScheme::Stratified;
  group.scheme = CvScheme::GroupByFamily;
  strat.steps = group.steps = steps;
  strat.accuracy.assign(steps.size(), std::nullopt);
  group.accuracy.assign(steps.size(), std::nullopt);
  nlohmann::json pred_doc;
  try {
    strat = stratified_cv_accuracy(x_per_step, steps, y, combine_seed(c.seed, "predictability"));
    group = group_kfold_accuracy(x_per_step, steps, y, families);
  } catch (const Error& e) {
    pred_doc["note"] = e.what();
  }
  {
    std::ostringstream p;
    write_curve_csv(p, {strat, group});
    predictability_csv = p.str();
  }
  const auto verdict = predictability_claim(strat, group, a.decision_step);
  pred_doc["decision_step"] = a.decision_step;
  pred_doc["stratified"] = num(verdict.acc_stratified);
  pred_doc["group"] = num(verdict.acc_group);
  pred_doc["delta"] = num(verdict.delta);
  pred_doc["pass"] = verdict.pass;

  // criteria
  std::array<CriterionResult, 4> crit;
  crit[0] = criterion_c1(verdict.acc_group);
  try {
    NullMoments m;
    m.recurrence_mean = nulls[0].null_mean;
    m.recurrence_sd = nulls[0].null_sd;
    m.dwell_mean = nulls[2].null_mean;
    m.dwell_sd = nulls[2].null_sd;
    m.recurrence_d = gates["recurrence"].d;
    m.dwell_d = gates["mean_dwell"].d;
    crit[1] = criterion_c2({rec, dwell, m, std::nullopt, c.loop.nudge_kind == NudgeKind::Dialog});
  } catch (const Error&) {
    // shuffling cannot move a statistic whose null has no spread
    crit[1].verdict = Verdict::Missing;
    crit[1].clause = "degenerate_null";
  }
  std::map<std::string, double> by_embedder;
  if (!c.alt_embedders.empty()) {
    std::vector<const Trajectory*> ts;
    for (const auto& cv : controls) ts.push_back(cv.trajectory);
    const auto canonical = embed_trajectories(ts, c.observables.front(), FeatureHashEmbedder(c.embedder));
    by_embedder["canonical"] = embedder_recurrence(canonical, controls, c.partition.projection_k, opt);
    for (std::size_t k = 0; k < c.alt_embedders.size(); ++k) {
      const auto m = load_embedding(out / embedding_rel(c.observables.front(), "alt" + std::to_string(k + 1)));
      by_embedder["alt" + std::to_string(k + 1)] = embedder_recurrence(m, controls, c.partition.projection_k, opt);
    }
  }
  try {
    crit[2] = criterion_c3(by_embedder, "canonical");
  } catch (const Error& e) {
    crit[2].verdict = Verdict::Missing;
    crit[2].clause = e.what();
  }
  C4Input c4;
  c4.lambda_late = lambda_late;
  c4.best_period = best_period;
  c4.period_2_score = p2;
  c4.recurrence = rec;
  c4.sharpness_dim = sharp;
  c4.exit_return_gate = gates["exit_return"].pass;
  crit[3] = criterion_c4(c4);
  for (int i = 0; i < 4; ++i)
    if (c.analysis.declared_inapplicable[static_cast<std::size_t>(i)]) crit[static_cast<std::size_t>(i)].verdict = Verdict::NotApplicable;
  auto card = make_scorecard(c.experiment_id, crit, c.analysis.declared_inapplicable);

  AxisSignals sig;
  sig.basin_positive = basin >= kRecurrenceHigh;
  sig.dwell_above_null = gates["mean_dwell"].pass;
  sig.late_recurrence_above_null = gates["late_recurrence"].pass;
  sig.period_2_above_threshold = p2 > a.period_threshold;
  sig.best_period_majority_above_1 = 2 * meaningful_period > static_cast<int>(controls.size());
  sig.dispersion_growth = growth_median && *growth_median > 0.0;
  sig.outward_monotone_drift = ensembles_used > 0 && 2 * outward > ensembles_used;
  sig.no_stable_basin = basin < kRecurrenceHigh;
  const auto axes = three_axis_classifier(sig);

  nlohmann::json j;
  j["regime"] = c.experiment_id;
  j["generator"] = to_string(c.generator.regime);
  j["trajectories"] = controls.size();
  j["summary"] = {{"recurrence", rec},
                  {"late_recurrence", late_rec},
                  {"mean_dwell", dwell},
                  {"basin_score", basin},
                  {"period_2_score", p2},
                  {"best_period", best_period},
                  {"meaningful_period_fraction", meaningful_period / n},
                  {"lambda_late", num(lambda_late)},
                  {"sharpness_dim", num(sharp)},
                  {"dispersion_growth", num(growth_median)},
                  {"outward_fraction", ensembles_used ? static_cast<double>(outward) / ensembles_used : 0.0},
                  {"ensembles", ensembles_used},
                  {"spectrum_failures", spectrum_failures}};
  j["nulls"] = null_doc;
  j["predictability"] = pred_doc;
  j["embedder_recurrence"] = by_embedder;
  j["scorecard"] = to_json(card);
  j["signals"] = {{"basin_positive", sig.basin_positive},
                  {"dwell_above_null", sig.dwell_above_null},
                  {"late_recurrence_above_null", sig.late_recurrence_above_null},
                  {"period_2_above_threshold", sig.period_2_above_threshold},
                  {"best_period_majority_above_1", sig.best_period_majority_above_1},
                  {"dispersion_growth", sig.dispersion_growth},
                  {"outward_monotone_drift", sig.outward_monotone_drift},
                  {"no_stable_basin", sig.no_stable_basin}};
  j["axes"] = {{"convergence", axis_json(axes.convergence)},
               {"recurrence", axis_json(axes.recurrence)},
               {"divergence", axis_json(axes.divergence)}};
  return {j, card};
}

// Endpoint CSV with the floor and net columns blanked when no B arm exists.
std::string endpoints_text(const std::vector<EndpointSummary>& cells, bool floor_measured) {
  std::ostringstream os;
  write_endpoints_csv(os, cells);
  if (floor_measured) return os.str();
  std::istringstream in(os.str());
  std::string line, text;
  bool header = true;
  while (std::getline(in, line)) {
    if (!header) {
      std::size_t pos = 0;
      std::vector<std::size_t> commas;
      while (commas.size() < 8 && (pos = line.find(',', pos)) != std::string::npos) commas.push_back(pos++);
      line = line.substr(0, commas[5] + 1) + "null,null" + line.substr(commas[7]);
    }
    header = false;
    text += line + "\n";
  }
  return text;
}

struct SeriesCounts {
  // series -> family -> counts per dose
  std::map<std::string, std::map<std::string, std::vector<DoseCount>>> raw, persist;
};

void dose_response(const ExperimentConfig& c, const std::vector<EndpointSummary>& cells,
                   const std::vector<PairedUnit>& kept, const BasinPartition& partition, const EndpointOptions& eo,
                   std::string& fits_csv, std::string& curves_csv) {
  std::map<std::string, std::vector<const EndpointSummary*>> series;
  for (const auto& cell : cells)
    if (cell.dose && cell.n > 0 && cell.condition != "control") series[cell.condition].push_back(&cell);

  SeriesCounts counts;
  std::map<std::string, std::vector<PairedUnit>> by_family;
  for (const auto& u : kept) by_family[u.family].push_back(u);
  for (const auto& [family, units] : by_family) {
    for (const auto& cell : compute_endpoints(units, partition, eo)) {
      if (!cell.dose || !series.count(cell.condition)) continue;
      counts.raw[cell.condition][family].push_back({static_cast<double>(*cell.dose), cell.raw.successes, cell.n});
      counts.persist[cell.condition][family].push_back(
          {static_cast<double>(*cell.dose), cell.persist_dst.successes, cell.n});
    }
  }

  std::ostringstream fits, curves;
  fits << "series,endpoint,doses,upper,lower,slope,ed50,rss,converged,at_bound,crossing,boot_median,boot_lo,"
          "boot_hi,boot_dropped,status\n";
  curves << "series,endpoint,dose,fitted\n";
  const std::vector<std::string> endpoints{"raw", "net", "persist_dst"};
  for (const auto& [name, cs] : series) {
    for (const auto& ep : endpoints) {
      std::vector<double> d, r, w;
      for (const auto* cell : cs) {
        d.push_back(*cell->dose);
        r.push_back(ep == "raw" ? cell->raw.rate : ep == "net" ? cell->net : cell->persist_dst.rate);
        w.push_back(cell->n);
      }
      const auto crossing = ed50_empirical_crossing(d, r);
      std::set<double> distinct(d.begin(), d.end());
      std::vector<std::string> row{name, ep, std::to_string(d.size())};
      if (distinct.size() < 4) {
        for (int k = 0; k < 7; ++k) row.push_back("null");
        row.push_back(num(crossing));
        for (int k = 0; k < 4; ++k) row.push_back("null");
        row.push_back("too_few_doses");
        fits << join_row(row);
        continue;
      }
      const auto fit = fit_4pl(d, r, w);
      std::optional<Ed50Bootstrap> boot;
      std::string status = fit.converged ? "fitted" : "not_converged";
      const auto& table = ep == "raw" ? counts.raw[name] : counts.persist[name];
      if (ep != "net" && c.analysis.bootstrap_iterations > 0) {
        try {
          boot = bootstrap_ed50(table, c.analysis.bootstrap_iterations, combine_seed(c.seed, name + "/" + ep));
        } catch (const Error& e) {
          status += std::string(";bootstrap:") + std::string(to_string(e.code()));
        }
      }
      row.insert(row.end(), {num(fit.upper), num(fit.lower), num(fit.slope), num(fit.ed50), num(fit.rss),
                             fit.converged ? "1" : "0", fit.at_bound ? "1" : "0", num(crossing)});
      if (boot) {
        row.insert(row.end(), {num(boot->median), num(boot->interval.lo), num(boot->interval.hi),
                               std::to_string(boot->dropped)});
      } else {
        row.insert(row.end(), {"null", "null", "null", "null"});
      }
      row.push_back(status);
      fits << join_row(row);
      std::ostringstream samples;
      write_curve_samples(samples, fit, d.front(), d.back(), 25);
      std::istringstream in(samples.str());
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) curves << name << ',' << ep << ',' << line << '\n';
    }
  }
  fits_csv = fits.str();
  curves_csv = curves.str();
}

std::string landscape_table(const ExperimentConfig& c, const std::vector<Trajectory>& trajectories,
                            const Eigen::MatrixXd& projected, const RowIndex& idx, const fs::path& out,
                            Provenance& prov, const std::vector<std::string>& inputs) {
  std::map<std::string, std::vector<Eigen::Index>> by_condition;
  for (const auto& t : trajectories) {
    std::string key;
    if (t.arm == "A") key = "control";
    else if (t.arm == "Z") key = t.condition;
    else continue;
    const auto& rows = idx.rows.at(t.id);
    by_condition[key].insert(by_condition[key].end(), rows.begin(), rows.end());
  }
  std::vector<Eigen::MatrixXd> sets;
  std::vector<std::string> names;
  for (const auto& [name, rows] : by_condition) {
    Eigen::MatrixXd p(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t r = 0; r < rows.size(); ++r) p.row(static_cast<Eigen::Index>(r)) = projected.row(rows[r]).head(2);
    sets.push_back(p);
    names.push_back(name);
  }
  const int res = c.analysis.landscape_resolution;
  const auto grid = grid_for(sets, res, res);
  std::ostringstream csv;
  csv << "condition,points,minima,v_star\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto pot = build_potential(sets[i], grid, c.analysis.landscape_sigma);
    const auto centers = local_minima(pot.potential, c.analysis.landscape_basins);
    const auto v = mean_pairwise_barrier(pot.potential, centers);
    csv << names[i] << ',' << sets[i].rows() << ',' << centers.size() << ',' << num(v) << '\n';
    if (names[i] == "control") {
      fs::create_directories(out / "landscape");
      save_potential(pot, out / "landscape/control");
      std::ostringstream svg;
      write_potential_svg(svg, pot, centers);
      write_text(out / "landscape/control.svg", svg.str());
      for (const char* f : {"landscape/control.density.bin", "landscape/control.potential.bin", "landscape/control.json",
                            "landscape/control.svg"})
        prov.record(f, "analyze", inputs);
    }
  }
  return csv.str();
}

void phase_analyze(const ExperimentConfig& c, const fs::path& out, int jobs, Provenance& prov) {
  const auto trajectories = read_trajectories_jsonl(out / artifact::kSteps);
  const auto units_path = out / artifact::kUnits;
  auto unit_set = fs::exists(units_path) ? read_units_jsonl(units_path, trajectories) : reconstruct_units(trajectories);
  const auto emb_rel = embedding_rel(c.observables.front(), "canonical");
  const auto matrix = load_embedding(out / (emb_rel));
  const auto partition = load_partition(out / artifact::kPartition);
  const std::string pstem = artifact::kPartition;
  std::vector<std::string> inputs{artifact::kConfig, artifact::kSteps, emb_rel + ".bin", emb_rel + ".json",
                                  pstem + ".json", pstem + ".labels.bin"};
  if (fs::exists(units_path)) inputs.push_back(artifact::kUnits);

  const RowIndex idx(matrix);
  const Eigen::MatrixXd projected = partition.projection.transform(matrix.vectors);
  std::vector<ControlView> controls;
  for (const auto& t : trajectories) {
    if (t.arm != "A") continue;
    const auto* labels = partition.trajectory_labels(t.id);
    require(labels != nullptr, ErrorCode::PartitionMissingLabels, "no labels for " + t.id);
    controls.push_back({&t, idx.take(projected, t.id), *labels});
  }
  require(!controls.empty(), ErrorCode::Empty, "no control trajectories to analyze");

  std::string diagnostics, predictability;
  auto regime = analyze_regime(c, controls, out, jobs, diagnostics, predictability);
  write_text(out / artifact::kDiagnostics, diagnostics);
  write_text(out / artifact::kPredictability, predictability);
  write_json(out / artifact::kRegime, regime.json);
  write_json(out / artifact::kScorecardJson, to_json(regime.scorecard));
  {
    std::ostringstream s;
    write_scorecards_csv(s, {regime.scorecard});
    write_text(out / artifact::kScorecardCsv, s.str());
  }
  std::vector<std::string> regime_inputs = inputs;
  for (std::size_t k = 0; k < c.alt_embedders.size(); ++k) {
    const auto rel = embedding_rel(c.observables.front(), "alt" + std::to_string(k + 1));
    regime_inputs.push_back(rel + ".bin");
    regime_inputs.push_back(rel + ".json");
  }
  for (const char* f : {artifact::kDiagnostics, artifact::kPredictability, artifact::kRegime, artifact::kScorecardJson,
                        artifact::kScorecardCsv})
    prov.record(f, "analyze", regime_inputs);

  // endpoints
  auto& units = unit_set.units;
  const bool floor_measured = std::any_of(units.begin(), units.end(), [](const PairedUnit& u) { return u.b.has_value(); });
  if (!floor_measured)
    for (auto& u : units) u.b = u.a;  // placeholder arm; the floor columns are blanked below
  EndpointOptions eo;
  eo.t_inj = c.injection_step;
  eo.terminal = c.loop.steps - 1;
  eo.destination_lag = c.analysis.destination_lag;
  const auto cells = filtered_endpoints(units, partition, eo);
  write_text(out / artifact::kEndpoints, endpoints_text(cells, floor_measured));
  prov.record(artifact::kEndpoints, "analyze", inputs);

  const auto filter = exclusion_filter(units, &partition, eo);
  std::vector<PairedUnit> kept;
  for (auto i : filter.kept) kept.push_back(units[i]);
  std::string fits, curves;
  dose_response(c, cells, kept, partition, eo, fits, curves);
  write_text(out / artifact::kFits, fits);
  write_text(out / artifact::kCurves, curves);
  prov.record(artifact::kFits, "analyze", inputs);
  prov.record(artifact::kCurves, "analyze", inputs);

  if (c.analysis.landscape && projected.cols() >= 2) {
    write_text(out / artifact::kLandscape, landscape_table(c, trajectories, projected, idx, out, prov, inputs));
    prov.record(artifact::kLandscape, "analyze", inputs);
  }
  prov.set("floor_measured", floor_measured);
  prov.set("injection_text_recorded", unit_set.injection_text_recorded);
}

// ---------------------------------------------------------------------------
// orchestration

void run_phases(const ExperimentConfig& c, const fs::path& out, const std::vector<Phase>& phases, int jobs) {
  Provenance prov(out);
  prov.set("experiment_id", c.experiment_id);
  const auto has = [&](Phase p) { return std::find(phases.begin(), phases.end(), p) != phases.end(); };
  if (has(Phase::Generate)) phase_generate(c, out, jobs, prov), prov.save();
  if (has(Phase::Embed)) phase_embed(c, out, jobs, prov), prov.save();
  if (has(Phase::Partition)) phase_partition(c, out, prov), prov.save();
  if (has(Phase::Analyze)) phase_analyze(c, out, jobs, prov), prov.save();
  if (has(Phase::Report)) {
    emit_report(out);
    Provenance after(out);
    for (const char* f : {artifact::kReportText, artifact::kReportJson})
      after.record(f, "report", {artifact::kConfig, artifact::kEndpoints, artifact::kFits});
    after.save();
  }
}

void write_config(const ExperimentConfig& c, const fs::path& out) {
  fs::create_directories(out);
  write_json(out / artifact::kConfig, to_json(c));
  Provenance prov(out);
  prov.record(artifact::kConfig, "config", {});
  prov.save();
}

}  // namespace

void run_experiment(ExperimentConfig config, const fs::path& out, const RunOptions& options) {
  if (options.seed) config.seed = config.loop.seed = *options.seed;
  if (options.partition_override) config.partition = apply_partition_override(config.partition, *options.partition_override);
  config.validate();
  const bool generating = std::find(options.phases.begin(), options.phases.end(), Phase::Generate) != options.phases.end();
  if (generating || !fs::exists(out / artifact::kConfig)) {
    write_config(config, out);
  } else {
    // later phases keep the recorded config unless the partition was overridden
    const auto recorded = config_from_json(read_json(out / artifact::kConfig));
    if (to_json(recorded) != to_json(config)) write_config(config, out);
  }
  run_phases(config, out, options.phases, options.jobs);
}

void run_experiment(const fs::path& config_path, const fs::path& out, const RunOptions& options) {
  run_experiment(load_config(config_path), out, options);
}

void replay(const fs::path& steps, const fs::path& out, const ReplayOptions& options) {
  const auto trajectories = read_trajectories_jsonl(steps);
  const auto source_dir = steps.parent_path();
  ExperimentConfig c;
  if (options.config) {
    c = options.config->extension() == ".json" ? config_from_json(read_json(*options.config)) : load_config(*options.config);
  } else {
    const auto p = source_dir / artifact::kConfig;
    require(fs::exists(p), ErrorCode::ConfigInvalid, "replay needs --config or a config.json beside the steps file");
    c = config_from_json(read_json(p));
  }
  if (options.partition_override) c.partition = apply_partition_override(c.partition, *options.partition_override);
  c.validate();
  fs::create_directories(out);
  require(!fs::exists(out / artifact::kSteps) || !fs::equivalent(out / artifact::kSteps, steps), ErrorCode::GuardRail,
          "replay output directory must differ from the source directory");
  write_config(c, out);
  write_text(out / artifact::kSteps, read_text(steps));
  const auto manifest = source_dir / artifact::kUnits;
  const bool have_manifest = fs::exists(manifest);
  if (have_manifest) {
    write_text(out / artifact::kUnits, read_text(manifest));
  } else {
    fs::remove(out / artifact::kUnits);
  }
  {
    Provenance prov(out);
    prov.record(artifact::kSteps, "replay", {});
    if (have_manifest) prov.record(artifact::kUnits, "replay", {artifact::kSteps});
    nlohmann::json parts = nlohmann::json::array();
    const auto source_partition = source_dir / (std::string(artifact::kPartition) + ".json");
    if (fs::exists(source_partition))
      parts.push_back({{"role", "source"}, {"hash", read_json(source_partition).at("hash")}});
    prov.set("partitions", parts);
    prov.set("replayed_from", fs::weakly_canonical(steps).filename().string());
    prov.save();
  }
  run_phases(c, out, {Phase::Embed, Phase::Partition, Phase::Analyze, Phase::Report}, options.jobs);
}

// ---------------------------------------------------------------------------
// report

namespace {

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

const std::vector<std::string>& scope_caveats() {
  static const std::vector<std::string> caveats{
      "only the synthetic latent-payload generator was run; no hosted or open-weight language model was tested",
      "doses beyond the configured grid were not tested",
      "other languages, production agent scaffolds and tool environments were not tested",
      "safety prompts, jailbreak attacks and human users were not tested",
      "factuality-grounded tasks and domain-specific agent benchmarks were not tested"};
  return caveats;
}

}  // namespace

nlohmann::json emit_report(const fs::path& dir) {
  const auto endpoints_path = dir / artifact::kEndpoints;
  require(fs::exists(endpoints_path), ErrorCode::MissingEndpoints, "no endpoint table in " + dir.string());
  const auto c = config_from_json(read_json(dir / artifact::kConfig));
  const auto table = read_csv(endpoints_path);
  const int ci = table.column("condition"), di = table.column("dose"), ni = table.column("n"),
            ri = table.column("raw"), fi = table.column("floor"), nti = table.column("net"),
            pi = table.column("persist_dst"), si = table.column("persist_src");

  nlohmann::json j;
  j["experiment_id"] = c.experiment_id;
  const SyntheticGenerator gen(c.generator);
  j["generator"] = {{"id", gen.id()},
                    {"regime", to_string(c.generator.regime)},
                    {"temperature", c.loop.temperature},
                    {"max_output_tokens", c.loop.max_output_tokens},
                    {"max_context_chars", c.loop.max_context_chars},
                    {"changes_across_conditions", "none"}};
  j["nudge"] = to_string(c.loop.nudge_kind);
  j["observable"] = c.observables.front().label();
  std::string partition_hash = "unknown";
  if (const auto p = dir / (std::string(artifact::kPartition) + ".json"); fs::exists(p))
    partition_hash = read_json(p).at("hash").get<std::string>();
  std::ostringstream rule;
  rule << "cluster label of the " << c.observables.front().label() << " view embedded by "
       << FeatureHashEmbedder(c.embedder).id() << ", projected to " << c.partition.projection_k << " components and "
       << (c.partition.method == ClusterMethod::KMeans ? "clustered by k-means with k=" + std::to_string(c.partition.k)
                                                       : "clustered by density with radius " + fmt(c.partition.radius))
       << " (partition " << partition_hash << ")";
  j["equivalence_rule"] = rule.str();

  // floor: one comparison per seed unit, read from the control cell
  nlohmann::json floor;
  for (const auto& row : table.rows) {
    if (row[static_cast<std::size_t>(ci)] != "control") continue;
    const auto rate = to_number(row[static_cast<std::size_t>(fi)]);
    const int n = std::stoi(row[static_cast<std::size_t>(ni)]);
    if (rate && n > 0) {
      const auto k = static_cast<long long>(std::llround(*rate * n));
      const auto w = wilson_interval(k, n);
      floor = {{"measured", true}, {"rate", *rate}, {"n", n}, {"ci_lo", w.lo}, {"ci_hi", w.hi}};
    }
  }
  if (floor.is_null()) floor = {{"measured", false}, {"status", "floor not measured"}};
  j["floor"] = floor;

  nlohmann::json cells = nlohmann::json::array();
  std::map<std::pair<std::string, std::optional<int>>, double> persist_by;
  for (const auto& row : table.rows) {
    const auto& cond = row[static_cast<std::size_t>(ci)];
    if (cond == "control") continue;
    nlohmann::json e{{"condition", cond}, {"n", std::stoi(row[static_cast<std::size_t>(ni)])}};
    const auto& dose = row[static_cast<std::size_t>(di)];
    e["dose"] = dose.empty() ? nlohmann::json(nullptr) : nlohmann::json(std::stoi(dose));
    for (const auto& [key, col] : std::vector<std::pair<std::string, int>>{{"raw", ri}, {"net", nti}, {"persist_dst", pi}, {"persist_src", si}}) {
      const auto v = to_number(row[static_cast<std::size_t>(col)]);
      e[key] = v ? nlohmann::json(*v) : nlohmann::json("not measured");
    }
    if (const auto v = to_number(row[static_cast<std::size_t>(pi)])) persist_by[{cond, dose.empty() ? std::nullopt : std::optional<int>(std::stoi(dose))}] = *v;
    cells.push_back(e);
  }
  j["rates"] = cells;

  nlohmann::json ed50 = {{"reported_endpoint", "ED50_persist"}, {"fits", nlohmann::json::array()}};
  if (const auto p = dir / artifact::kFits; fs::exists(p)) {
    const auto fits = read_csv(p);
    const int s = fits.column("series"), e = fits.column("endpoint"), v = fits.column("ed50"),
              cr = fits.column("crossing"), lo = fits.column("boot_lo"), hi = fits.column("boot_hi"),
              st = fits.column("status");
    for (const auto& row : fits.rows) {
      const auto& ep = row[static_cast<std::size_t>(e)];
      const std::string type = ep == "raw" ? "ED50_raw" : ep == "net" ? "ED50_net" : "ED50_persist";
      nlohmann::json f{{"series", row[static_cast<std::size_t>(s)]}, {"endpoint_type", type},
                       {"status", row[static_cast<std::size_t>(st)]}};
      for (const auto& [key, col] : std::vector<std::pair<std::string, int>>{{"ed50", v}, {"crossing", cr}, {"boot_lo", lo}, {"boot_hi", hi}}) {
        const auto x = to_number(row[static_cast<std::size_t>(col)]);
        f[key] = x ? nlohmann::json(*x) : nlohmann::json(nullptr);
      }
      ed50["fits"].push_back(f);
    }
  } else {
    ed50["status"] = "no dose-response table";
  }
  j["ed50"] = ed50;

  if (c.loop.nudge_kind == NudgeKind::Append) {
    j["overwrite_vs_insert_gap"] = "not applicable";
  } else {
    nlohmann::json gaps = nlohmann::json::array();
    for (const auto& [key, insert_rate] : persist_by) {
      const auto& [cond, dose] = key;
      const auto at = cond.find("_insert");
      if (at == std::string::npos) continue;
      const auto overwrite = cond.substr(0, at) + cond.substr(at + 7);
      const auto it = persist_by.find({overwrite, dose});
      if (it == persist_by.end()) continue;
      gaps.push_back({{"condition", overwrite}, {"dose", dose ? nlohmann::json(*dose) : nlohmann::json(nullptr)},
                      {"overwrite_persist_dst", it->second}, {"insert_persist_dst", insert_rate},
                      {"gap", it->second - insert_rate}});
    }
    if (gaps.empty()) {
      j["overwrite_vs_insert_gap"] = "not measured: no matched overwrite and insert conditions";
    } else {
      j["overwrite_vs_insert_gap"] = gaps;
    }
  }
  j["scope_caveats"] = scope_caveats();

  std::ostringstream t;
  t << "Reporting checklist: " << c.experiment_id << "\n\n";
  t << "1. Generator and version: " << j["generator"]["id"].get<std::string>() << ", temperature "
    << fmt(c.loop.temperature, 2) << ", max output tokens " << c.loop.max_output_tokens << ", context cap "
    << c.loop.max_context_chars << " chars, no generator change across conditions\n";
  t << "2. Nudge / memory policy: " << j["nudge"].get<std::string>() << "\n";
  t << "3. Observable and equivalence rule: " << j["equivalence_rule"].get<std::string>() << "\n";
  t << "4. Control-vs-control stochastic floor: ";
  if (floor["measured"].get<bool>()) {
    t << fmt(floor["rate"].get<double>()) << " [" << fmt(floor["ci_lo"].get<double>()) << ", "
      << fmt(floor["ci_hi"].get<double>()) << "], n=" << floor["n"].get<int>() << "\n";
  } else {
    t << "floor not measured\n";
  }
  t << "5. Raw, net and persistent rates:\n";
  for (const auto& e : cells) {
    t << "   " << e["condition"].get<std::string>();
    if (!e["dose"].is_null()) t << " dose " << e["dose"].get<int>();
    t << " (n=" << e["n"].get<int>() << "):";
    for (const char* k : {"raw", "net", "persist_dst", "persist_src"}) {
      t << ' ' << k << '=';
      if (e[k].is_number()) t << fmt(e[k].get<double>());
      else t << e[k].get<std::string>();
    }
    t << "\n";
  }
  if (cells.empty()) t << "   no perturbation conditions\n";
  t << "6. Dose-response curve and ED50 endpoint type: reported endpoint ED50_persist\n";
  for (const auto& f : ed50["fits"]) {
    t << "   " << f["series"].get<std::string>() << ' ' << f["endpoint_type"].get<std::string>() << ": ";
    if (f["ed50"].is_number()) t << fmt(f["ed50"].get<double>(), 1);
    else t << "not fitted";
    t << " (" << f["status"].get<std::string>() << ")";
    if (f["boot_lo"].is_number()) t << " 95% CI [" << fmt(f["boot_lo"].get<double>(), 1) << ", " << fmt(f["boot_hi"].get<double>(), 1) << "]";
    t << "\n";
  }
  if (ed50["fits"].empty()) t << "   no dose series\n";
  t << "7. Overwrite-vs-insert gap: ";
  if (j["overwrite_vs_insert_gap"].is_string()) {
    t << j["overwrite_vs_insert_gap"].get<std::string>() << "\n";
  } else {
    t << "\n";
    for (const auto& g : j["overwrite_vs_insert_gap"]) {
      t << "   " << g["condition"].get<std::string>();
      if (!g["dose"].is_null()) t << " dose " << g["dose"].get<int>();
      t << ": " << fmt(g["gap"].get<double>()) << "\n";
    }
  }
  t << "8. Scope caveat:\n";
  for (const auto& s : scope_caveats()) t << "   - " << s << "\n";

  write_text(dir / artifact::kReportText, t.str());
  write_json(dir / artifact::kReportJson, j);
  return j;
}

// ---------------------------------------------------------------------------
// aggregate

void aggregate(const std::vector<fs::path>& dirs, const fs::path& out, bool merged_curve) {
  require(!dirs.empty(), ErrorCode::ConfigInvalid, "aggregate needs at least one directory");
  struct Source {
    std::string id;
    fs::path dir;
    std::string partition;
  };
  std::vector<Source> sources;
  for (const auto& d : dirs) {
    const auto c = read_json(d / artifact::kConfig);
    std::string hash = "none";
    if (const auto p = d / (std::string(artifact::kPartition) + ".json"); fs::exists(p))
      hash = read_json(p).at("hash").get<std::string>();
    sources.push_back({c.at("experiment_id").get<std::string>(), d, hash});
  }
  if (merged_curve) {
    std::set<std::string> hashes;
    for (const auto& s : sources) hashes.insert(s.partition);
    if (hashes.size() > 1) {
      std::string detail;
      for (const auto& s : sources) detail += " " + s.id + "=" + s.partition;
      fail(ErrorCode::GuardRail, "refusing to merge curves across different partitions:" + detail);
    }
  }
  fs::create_directories(out);

  // stacked tables with an experiment column
  const std::vector<std::pair<const char*, const char*>> tables{{artifact::kEndpoints, "endpoints.csv"},
                                                                {artifact::kFits, "dose_response.csv"},
                                                                {artifact::kScorecardCsv, "scorecards.csv"},
                                                                {artifact::kPredictability, "predictability.csv"}};
  for (const auto& [rel, name] : tables) {
    std::string text;
    std::vector<std::string> header;
    for (const auto& s : sources) {
      const auto p = s.dir / rel;
      if (!fs::exists(p)) continue;
      const auto t = read_csv(p);
      if (header.empty()) {
        header = t.header;
        std::vector<std::string> h{"experiment_id"};
        h.insert(h.end(), header.begin(), header.end());
        text += join_row(h);
      }
      require(t.header == header, ErrorCode::SchemaMismatch, std::string(rel) + " columns differ in " + s.dir.string());
      for (const auto& row : t.rows) {
        std::vector<std::string> r{s.id};
        r.insert(r.end(), row.begin(), row.end());
        text += join_row(r);
      }
    }
    if (!text.empty()) write_text(out / name, text);
  }

  // persist_dst on the union dose grid
  std::set<int> doses;
  std::map<std::pair<std::string, std::string>, std::map<int, std::pair<double, int>>> grid;
  for (const auto& s : sources) {
    const auto p = s.dir / artifact::kEndpoints;
    if (!fs::exists(p)) continue;
    const auto t = read_csv(p);
    const int ci = t.column("condition"), di = t.column("dose"), pi = t.column("persist_dst"), ni = t.column("n");
    for (const auto& row : t.rows) {
      const auto& d = row[static_cast<std::size_t>(di)];
      if (d.empty()) continue;
      const int dose = std::stoi(d);
      doses.insert(dose);
      const auto v = to_number(row[static_cast<std::size_t>(pi)]);
      grid[{s.id, row[static_cast<std::size_t>(ci)]}][dose] = {v.value_or(std::nan("")),
                                                                std::stoi(row[static_cast<std::size_t>(ni)])};
    }
  }
  {
    std::vector<std::string> h{"experiment_id", "condition"};
    for (int d : doses) h.push_back("dose" + std::to_string(d));
    std::string text = join_row(h);
    for (const auto& [key, by_dose] : grid) {
      std::vector<std::string> r{key.first, key.second};
      for (int d : doses) {
        const auto it = by_dose.find(d);
        r.push_back(it == by_dose.end() ? "null" : num(it->second.first));
      }
      text += join_row(r);
    }
    write_text(out / "dose_grid.csv", text);
  }

  if (merged_curve) {
    std::map<std::string, std::map<int, std::pair<double, int>>> pooled;  // successes, n
    for (const auto& [key, by_dose] : grid)
      for (const auto& [d, v] : by_dose) {
        if (std::isnan(v.first) || v.second == 0) continue;
        auto& cell = pooled[key.second][d];
        cell.first += std::round(v.first * v.second);
        cell.second += v.second;
      }
    std::string text = "condition,doses,upper,lower,slope,ed50,converged,crossing,status\n";
    for (const auto& [cond, by_dose] : pooled) {
      std::vector<double> d, r, w;
      for (const auto& [dose, v] : by_dose) {
        d.push_back(dose);
        r.push_back(v.first / v.second);
        w.push_back(v.second);
      }
      std::vector<std::string> row{cond, std::to_string(d.size())};
      if (d.size() < 4) {
        row.insert(row.end(), {"null", "null", "null", "null", "null", num(ed50_empirical_crossing(d, r)), "too_few_doses"});
      } else {
        const auto f = fit_4pl(d, r, w);
        row.insert(row.end(), {num(f.upper), num(f.lower), num(f.slope), num(f.ed50), f.converged ? "1" : "0",
                               num(ed50_empirical_crossing(d, r)), f.converged ? "fitted" : "not_converged"});
      }
      text += join_row(row);
    }
    write_text(out / "merged_curve.csv", text);
  }

  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& s : sources) manifest.push_back({{"experiment_id", s.id}, {"partition", s.partition}});
  write_json(out / "aggregate.json", {{"experiments", manifest}, {"merged_curve", merged_curve}});
}

// ---------------------------------------------------------------------------
// provenance audit

ProvenanceAudit audit_provenance(const fs::path& dir) {
  ProvenanceAudit r;
  const auto p = dir / artifact::kProvenance;
  if (!fs::exists(p)) {
    r.ok = false;
    r.problems.push_back("no provenance record");
    return r;
  }
  const auto doc = read_json(p);
  const auto& files = doc.at("files");
  std::map<std::string, std::vector<std::string>> edges;
  for (const auto& [rel, entry] : files.items()) {
    ++r.files;
    const auto path = dir / rel;
    if (!fs::exists(path)) {
      r.problems.push_back(rel + ": missing");
      continue;
    }
    if (file_hash(path) != entry.at("hash").get<std::string>()) r.problems.push_back(rel + ": content changed");
    for (const auto& [input, hash] : entry.at("inputs").items()) {
      edges[rel].push_back(input);
      if (!files.contains(input)) {
        r.problems.push_back(rel + ": input " + input + " is not recorded");
      } else if (files.at(input).at("hash") != hash) {
        r.problems.push_back(rel + ": input " + input + " changed after it was derived");
      }
    }
  }
  // the derivation graph must be acyclic
  std::map<std::string, int> state;
  std::function<bool(const std::string&)> cyclic = [&](const std::string& n) {
    if (state[n] == 1) return true;
    if (state[n] == 2) return false;
    state[n] = 1;
    for (const auto& m : edges[n])
      if (cyclic(m)) return true;
    state[n] = 2;
    return false;
  };
  for (const auto& [n, _] : edges)
    if (cyclic(n)) {
      r.problems.push_back(n + ": derivation cycle");
      break;
    }
  r.ok = r.problems.empty();
  return r;
}

}  // namespace loopdyn
