#include "loopdyn/perturbation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "loopdyn/error.hpp"

namespace loopdyn {

namespace {

constexpr std::array<std::string_view, 70> kWordPool{
    "table",   "river",   "window",  "pencil",  "garden",  "bottle",  "ladder",  "carpet",  "basket",  "candle",
    "meadow",  "harbor",  "kettle",  "button",  "feather", "marble",  "saddle",  "lantern", "pebble",  "blanket",
    "chimney", "orchard", "tunnel",  "violin",  "compass", "granite", "mirror",  "thimble", "hammock", "cabinet",
    "walnut",  "ribbon",  "helmet",  "anchor",  "barrel",  "cottage", "drawer",  "fountain", "gravel", "hinge",
    "island",  "jacket",  "kitchen", "lemon",   "maple",   "napkin",  "oyster",  "paddle",  "quarry",  "rafter",
    "shovel",  "teapot",  "valley",  "wagon",   "yarn",    "zipper",  "acorn",   "bridge",  "canvas",  "dial",
    "engine",  "fabric",  "glacier", "hollow",  "iron",    "jar",     "kayak",   "lumber",  "mosaic",  "needle"};

constexpr std::array<std::string_view, 5> kNeutralParagraphs{
    "The river delta forms where sediment carried downstream settles as the current slows near the coast. Over "
    "centuries the deposits build broad plains of silt and clay, and the main channel often splits into smaller "
    "distributaries that shift position after large floods.",
    "Granite is an igneous rock composed mainly of quartz and feldspar with minor amounts of mica. It forms from "
    "magma that cools slowly beneath the surface, which allows large crystals to grow, and it is widely used for "
    "building stone and countertops.",
    "The lighthouse on the northern headland was completed in the late nineteenth century. Its lamp was originally "
    "fueled by oil and rotated by a clockwork mechanism that keepers wound by hand every few hours during the night.",
    "Maple trees are common across temperate regions of the northern hemisphere. Their leaves are usually lobed and "
    "palmate, and several species are tapped in early spring for sap that is boiled down into syrup.",
    "A standard railway gauge measures the distance between the inner faces of the two rails. Many networks adopted "
    "the same gauge during the nineteenth century so that rolling stock could move between lines without changing "
    "axles."};

constexpr int kDefaultLoremWords = 70;

std::vector<std::string> fill_to(const std::vector<std::vector<std::string>>& pieces, std::size_t dose,
                                 bool cycle_single) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (out.size() < dose) {
    const auto& p = pieces[cycle_single ? 0 : i % pieces.size()];
    out.insert(out.end(), p.begin(), p.end());
    ++i;
  }
  out.resize(dose);
  return out;
}

std::string quote_csv(const std::string& field) {
  std::string q = "\"";
  for (char c : field) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

using CellKey = std::pair<std::string, std::optional<int>>;

CellKey key_of(const PairedUnit& u) { return {u.condition, u.dose}; }

const std::vector<int>& labels_for(const BasinPartition& p, const std::optional<Trajectory>& t) {
  const auto* labels = p.trajectory_labels(t->id);
  if (!labels) fail(ErrorCode::PartitionMissingLabels, "no labels for trajectory " + t->id);
  return *labels;
}

RateCell rate_cell(int successes, int n) {
  RateCell c;
  c.successes = successes;
  c.rate = n > 0 ? static_cast<double>(successes) / n : 0.0;
  if (n > 0) c.ci = wilson_interval(successes, n);
  return c;
}

void finalize(EndpointSummary& cell) {
  int raw = 0, floor = 0, jump = 0, dst = 0, src = 0;
  cell.persisted = cell.returned_to_source = cell.drifted_elsewhere = 0;
  for (const auto& u : cell.units) {
    raw += u.raw;
    floor += u.floor;
    jump += u.jump;
    dst += u.persist_dst;
    src += u.persist_src;
    if (!u.jump) continue;
    if (u.c_term == u.c_post) {
      ++cell.persisted;
    } else if (u.c_term == u.c_pre) {
      ++cell.returned_to_source;
    } else {
      ++cell.drifted_elsewhere;
    }
  }
  cell.n = static_cast<int>(cell.units.size());
  cell.raw = rate_cell(raw, cell.n);
  cell.floor = rate_cell(floor, cell.n);
  cell.jump = rate_cell(jump, cell.n);
  cell.persist_dst = rate_cell(dst, cell.n);
  cell.persist_src = rate_cell(src, cell.n);
  cell.net = cell.raw.rate - cell.floor.rate;
}

}  // namespace

std::string_view to_string(PerturbationKind kind) noexcept {
  switch (kind) {
    case PerturbationKind::Control: return "control";
    case PerturbationKind::Neutral: return "neutral";
    case PerturbationKind::Lorem: return "lorem";
    case PerturbationKind::Adversarial: return "adversarial";
  }
  return "control";
}

PerturbationKind parse_perturbation_kind(std::string_view text) {
  for (auto k : {PerturbationKind::Control, PerturbationKind::Neutral, PerturbationKind::Lorem,
                 PerturbationKind::Adversarial})
    if (to_string(k) == text) return k;
  fail(ErrorCode::ConfigInvalid, "unknown perturbation kind '" + std::string(text) + "'");
}

void PerturbationCondition::validate() const {
  if (kind == PerturbationKind::Control) {
    require(!dose_tokens && !mode, ErrorCode::ConfigInvalid, "control condition takes no dose or mode");
    return;
  }
  require(!dose_tokens || *dose_tokens > 0, ErrorCode::ConfigInvalid, "dose must be a positive token count");
  if (kind == PerturbationKind::Adversarial)
    require(source_experiment.has_value() && !source_experiment->empty(), ErrorCode::ConfigInvalid,
            "adversarial condition needs a source experiment");
}

std::string PerturbationCondition::label() const {
  std::string s(to_string(kind));
  if (kind == PerturbationKind::Control) return s;
  if (mode == InjectionMode::Insert) s += "_insert";
  if (dose_tokens) s += "_dose" + std::to_string(*dose_tokens);
  if (homogeneous) s += "_homogeneous";
  return s;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::span<const std::string_view> lorem_word_pool() { return kWordPool; }
std::span<const std::string_view> neutral_paragraphs() { return kNeutralParagraphs; }

InjectionPlan build_perturbation_text(const PerturbationCondition& condition, const InjectionTarget& target,
                                      Rng& rng, std::span<const AdversarialSource> pool, int step,
                                      const Tokenizer& tokenizer) {
  condition.validate();
  InjectionPlan plan;
  plan.step = step;
  plan.condition = condition;
  if (condition.kind == PerturbationKind::Control) return plan;

  std::vector<std::string> tokens;
  switch (condition.kind) {
    case PerturbationKind::Lorem: {
      const int n = condition.dose_tokens.value_or(kDefaultLoremWords);
      for (int i = 0; i < n; ++i) tokens.emplace_back(kWordPool[uniform_index(rng, kWordPool.size())]);
      break;
    }
    case PerturbationKind::Neutral: {
      const auto first = uniform_index(rng, kNeutralParagraphs.size());
      std::vector<std::vector<std::string>> pieces;
      for (std::size_t i = 0; i < kNeutralParagraphs.size(); ++i)
        pieces.push_back(tokenizer(kNeutralParagraphs[(first + i) % kNeutralParagraphs.size()]));
      tokens = condition.dose_tokens ? fill_to(pieces, static_cast<std::size_t>(*condition.dose_tokens), false)
                                     : pieces.front();
      break;
    }
    case PerturbationKind::Adversarial: {
      std::vector<const AdversarialSource*> eligible;
      bool saw_self_or_family = false;
      for (const auto& s : pool) {
        if (s.trajectory_id == target.trajectory_id || s.family == target.family) {
          saw_self_or_family = true;
          continue;
        }
        eligible.push_back(&s);
      }
      if (eligible.empty())
        fail(saw_self_or_family ? ErrorCode::SourceRuleViolation : ErrorCode::EmptyAfterTokenization,
             "no cross-family adversarial source for " + target.trajectory_id);
      std::vector<std::vector<std::string>> pieces;
      std::vector<const AdversarialSource*> used;
      for (std::size_t i = eligible.size(); i > 1; --i) std::swap(eligible[i - 1], eligible[uniform_index(rng, i)]);
      for (const auto* s : eligible) {
        auto t = tokenizer(s->text);
        if (t.empty()) continue;
        pieces.push_back(std::move(t));
        used.push_back(s);
      }
      if (pieces.empty())
        fail(ErrorCode::EmptyAfterTokenization, "every adversarial source is empty after tokenization");
      if (!condition.dose_tokens) {
        tokens = pieces.front();
        plan.source_ids.push_back(used.front()->trajectory_id);
        break;
      }
      const auto dose = static_cast<std::size_t>(*condition.dose_tokens);
      tokens = fill_to(pieces, dose, condition.homogeneous);
      // record the sources that contributed at least one token
      std::size_t covered = 0;
      for (std::size_t i = 0; covered < dose; ++i) {
        const auto idx = condition.homogeneous ? 0 : i % pieces.size();
        if (std::find(plan.source_ids.begin(), plan.source_ids.end(), used[idx]->trajectory_id) ==
            plan.source_ids.end())
          plan.source_ids.push_back(used[idx]->trajectory_id);
        covered += pieces[idx].size();
      }
      break;
    }
    case PerturbationKind::Control: break;
  }
  if (tokens.empty()) fail(ErrorCode::EmptyAfterTokenization, "perturbation text is empty");
  plan.resolved_text = join_tokens(tokens);
  plan.tokens = static_cast<int>(tokenizer(plan.resolved_text).size());
  return plan;
}

bool floor_event(const ControlPairLabels& pair, int terminal) {
  return pair.a[static_cast<std::size_t>(terminal)] != pair.b[static_cast<std::size_t>(terminal)];
}

bool raw_event(const TreatmentLabels& treatment, int terminal) {
  return treatment.z[static_cast<std::size_t>(terminal)] != treatment.a[static_cast<std::size_t>(terminal)];
}

UnitEndpoints unit_endpoints(std::span<const int> a, std::span<const int> b, std::span<const int> z, int t_inj,
                             int terminal, int destination_lag) {
  require(destination_lag >= 1 && destination_lag <= 3, ErrorCode::BadParams, "destination lag must be 1, 2 or 3");
  require(t_inj >= 1 && t_inj + destination_lag <= terminal, ErrorCode::BadParams,
          "need 1 <= t_inj and t_inj + lag <= terminal");
  const auto need = static_cast<std::size_t>(terminal) + 1;
  require(a.size() >= need && b.size() >= need && z.size() >= need, ErrorCode::PartitionMissingLabels,
          "labels stop before the terminal step");
  UnitEndpoints u;
  u.floor = floor_event({a, b}, terminal);
  u.raw = raw_event({z, a}, terminal);
  u.c_pre = z[static_cast<std::size_t>(t_inj - 1)];
  u.c_post = z[static_cast<std::size_t>(t_inj + destination_lag)];
  u.c_term = z[static_cast<std::size_t>(terminal)];
  u.a_term = a[static_cast<std::size_t>(terminal)];
  u.b_term = b[static_cast<std::size_t>(terminal)];
  u.jump = u.c_post != u.c_pre;
  u.persist_dst = u.jump && u.c_term == u.c_post;
  u.persist_src = u.jump && u.c_term != u.c_pre;
  return u;
}

int EndpointSummary::excluded_total() const {
  int total = 0;
  for (const auto& [reason, n] : excluded) total += n;
  return total;
}

std::vector<EndpointSummary> compute_endpoints(std::span<const PairedUnit> units, const BasinPartition& partition,
                                               const EndpointOptions& opt) {
  std::map<CellKey, EndpointSummary> cells;
  for (const auto& u : units) {
    require(u.a && u.b && u.z, ErrorCode::MissingEndpoints, "unit " + u.family + "/" + u.ic + " lacks an arm");
    auto& cell = cells[key_of(u)];
    cell.condition = u.condition;
    cell.dose = u.dose;
    cell.units.push_back(unit_endpoints(labels_for(partition, u.a), labels_for(partition, u.b),
                                        labels_for(partition, u.z), opt.t_inj, opt.terminal, opt.destination_lag));
  }
  std::vector<EndpointSummary> out;
  for (auto& [key, cell] : cells) {
    finalize(cell);
    out.push_back(std::move(cell));
  }
  return out;
}

ExclusionResult exclusion_filter(std::span<const PairedUnit> units, const BasinPartition* partition,
                                 const EndpointOptions& opt, const Tokenizer& tokenizer) {
  ExclusionResult r;
  const auto arms = [](const PairedUnit& u) { return std::array{&u.a, &u.b, &u.z}; };
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    std::string reason;
    if (!u.a || !u.b || !u.z) {
      reason = "missing_arm";
    } else {
      for (const auto* arm : arms(u)) {
        const auto& t = **arm;
        if (reason.empty() && (t.steps.empty() || static_cast<int>(t.steps.size()) < t.config.steps))
          reason = "missing_terminal";
      }
      if (reason.empty()) {
        for (const auto* arm : arms(u))
          if (static_cast<int>((*arm)->steps.size()) != opt.terminal + 1) reason = "horizon_mismatch";
        if (u.injection && u.injection->step != opt.t_inj) reason = "horizon_mismatch";
      }
      if (reason.empty() && partition) {
        for (const auto* arm : arms(u)) {
          const auto* labels = partition->trajectory_labels((*arm)->id);
          if (!labels || static_cast<int>(labels->size()) < opt.terminal + 1) reason = "missing_labels";
        }
      }
      if (reason.empty() && u.source_rule_violation) reason = "source_rule";
      const bool treated = !u.condition.empty() && u.condition != "control";
      if (reason.empty() && (u.injection ? tokenizer(u.injection->text).empty() : treated))
        reason = "empty_perturbation";
    }
    if (reason.empty()) {
      r.kept.push_back(i);
    } else {
      r.excluded.emplace_back(i, reason);
      ++r.counts[reason];
    }
  }
  return r;
}

std::vector<EndpointSummary> filtered_endpoints(std::span<const PairedUnit> units, const BasinPartition& partition,
                                                const EndpointOptions& opt) {
  const auto filter = exclusion_filter(units, &partition, opt);
  std::vector<PairedUnit> kept;
  kept.reserve(filter.kept.size());
  for (auto i : filter.kept) kept.push_back(units[i]);
  auto cells = compute_endpoints(kept, partition, opt);
  for (const auto& [i, reason] : filter.excluded) {
    const auto key = key_of(units[i]);
    auto it = std::find_if(cells.begin(), cells.end(),
                           [&](const EndpointSummary& c) { return c.condition == key.first && c.dose == key.second; });
    if (it == cells.end()) {
      EndpointSummary empty;
      empty.condition = key.first;
      empty.dose = key.second;
      cells.push_back(empty);
      it = cells.end() - 1;
    }
    ++it->excluded[reason];
  }
  std::sort(cells.begin(), cells.end(), [](const EndpointSummary& a, const EndpointSummary& b) {
    return std::tie(a.condition, a.dose) < std::tie(b.condition, b.dose);
  });
  return cells;
}

std::vector<GranularityRow> multi_granularity_persistence(
    std::span<const PairedUnit> units, const std::vector<std::pair<std::string, const BasinPartition*>>& partitions,
    const EndpointOptions& opt) {
  require(!partitions.empty(), ErrorCode::Empty, "no partitions given");
  std::set<std::string> reference;
  for (const auto& [id, labels] : partitions.front().second->labels) reference.insert(id);
  std::vector<GranularityRow> rows;
  for (const auto& [name, p] : partitions) {
    std::set<std::string> ids;
    for (const auto& [id, labels] : p->labels) ids.insert(id);
    require(ids == reference, ErrorCode::RowMismatch, "partition '" + name + "' labels a different trajectory set");
    for (const auto& cell : compute_endpoints(units, *p, opt)) {
      GranularityRow r;
      r.partition = name;
      r.condition = cell.condition;
      r.dose = cell.dose;
      r.n = cell.n;
      r.kicked = cell.jump.rate;
      r.persist_dst = cell.persist_dst.rate;
      r.persist_src = cell.persist_src.rate;
      rows.push_back(r);
    }
  }
  return rows;
}

double dip_contrast(double low, double mid, double high) { return mid - 0.5 * (low + high); }

double dip_contrast(const std::map<int, double>& rates, int low, int mid, int high) {
  for (int d : {low, mid, high})
    require(rates.count(d) == 1, ErrorCode::MissingDose, "dip contrast needs dose " + std::to_string(d));
  return dip_contrast(rates.at(low), rates.at(mid), rates.at(high));
}

double transition_entropy(std::span<const std::pair<int, int>> pairs) {
  require(!pairs.empty(), ErrorCode::NoKickedUnits, "no kicked units to condition on");
  std::map<int, std::map<int, int>> joint;
  for (const auto& [post, term] : pairs) ++joint[post][term];
  const double n = static_cast<double>(pairs.size());
  double h = 0.0;
  for (const auto& [post, terms] : joint) {
    double row = 0.0;
    for (const auto& [t, c] : terms) row += c;
    for (const auto& [t, c] : terms) h -= (c / n) * std::log2(c / row);
  }
  return h;
}

double transition_entropy(const EndpointSummary& cell) {
  std::vector<std::pair<int, int>> pairs;
  for (const auto& u : cell.units)
    if (u.jump) pairs.emplace_back(u.c_post, u.c_term);
  return transition_entropy(pairs);
}

std::vector<HorizonRow> horizon_rescore(std::span<const PairedUnit> units, const BasinPartition& frozen,
                                        const std::vector<int>& terminal_steps, const EndpointOptions& opt) {
  std::vector<HorizonRow> rows;
  for (int terminal : terminal_steps) {
    for (const auto& u : units) {
      for (const auto* arm : {&u.a, &u.b, &u.z}) {
        require(arm->has_value(), ErrorCode::MissingEndpoints, "unit lacks an arm");
        const auto& labels = labels_for(frozen, *arm);
        require(static_cast<int>(labels.size()) > terminal, ErrorCode::HorizonExceedsTrajectory,
                (*arm)->id + " has " + std::to_string(labels.size()) + " steps, horizon " + std::to_string(terminal));
      }
    }
    EndpointOptions at = opt;
    at.terminal = terminal;
    for (const auto& cell : compute_endpoints(units, frozen, at))
      rows.push_back({cell.condition, cell.dose, terminal, cell.n, cell.persist_dst.rate, cell.persist_src.rate});
  }
  return rows;
}

void write_endpoints_csv(std::ostream& out, const std::vector<EndpointSummary>& cells, bool header) {
  if (header)
    out << "condition,dose,n,raw,raw_lo,raw_hi,floor,net,kicked,persist_dst,persist_src,excluded_total,"
           "excluded_by_reason\n";
  for (const auto& c : cells) {
    nlohmann::json reasons = nlohmann::json::object();
    for (const auto& [reason, n] : c.excluded) reasons[reason] = n;
    out << c.condition << ',' << (c.dose ? std::to_string(*c.dose) : std::string()) << ',' << c.n << ','
        << c.raw.rate << ',' << c.raw.ci.lo << ',' << c.raw.ci.hi << ',' << c.floor.rate << ',' << c.net << ','
        << c.jump.rate << ',' << c.persist_dst.rate << ',' << c.persist_src.rate << ',' << c.excluded_total() << ','
        << quote_csv(reasons.dump()) << '\n';
  }
}

}  // namespace loopdyn
