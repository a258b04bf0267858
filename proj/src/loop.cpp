#include "loopdyn/loop.hpp"

#include <fstream>
#include <sstream>

#include "loopdyn/error.hpp"

namespace loopdyn {

std::string_view to_string(NudgeKind kind) noexcept {
  switch (kind) {
    case NudgeKind::Append: return "append";
    case NudgeKind::Replace: return "replace";
    case NudgeKind::Dialog: return "dialog";
  }
  return "append";
}

std::string_view to_string(InjectionMode mode) noexcept {
  return mode == InjectionMode::Overwrite ? "overwrite" : "insert";
}

std::string_view to_string(BaselineKind kind) noexcept {
  return kind == BaselineKind::NoFeedback ? "no_feedback" : "independent_regeneration";
}

NudgeKind parse_nudge_kind(std::string_view text) {
  if (text == "append") return NudgeKind::Append;
  if (text == "replace") return NudgeKind::Replace;
  if (text == "dialog") return NudgeKind::Dialog;
  fail(ErrorCode::ConfigInvalid, "unknown nudge kind '" + std::string(text) + "'");
}

InjectionMode parse_injection_mode(std::string_view text) {
  if (text == "overwrite") return InjectionMode::Overwrite;
  if (text == "insert") return InjectionMode::Insert;
  fail(ErrorCode::ConfigInvalid, "unknown injection mode '" + std::string(text) + "'");
}

void LoopConfig::validate() const {
  require(max_context_chars >= 1, ErrorCode::ConfigInvalid, "max_context_chars must be >= 1");
  require(steps >= 2, ErrorCode::ConfigInvalid, "steps must be >= 2");
  require(max_output_tokens >= 1, ErrorCode::ConfigInvalid, "max_output_tokens must be >= 1");
  require(temperature >= 0.0, ErrorCode::ConfigInvalid, "temperature must be non-negative");
  const bool has_roles = role_a_name.has_value() || role_b_name.has_value();
  if (nudge_kind == NudgeKind::Dialog) {
    require(role_a_name.has_value() && role_b_name.has_value(), ErrorCode::ConfigInvalid,
            "dialog configs need both role names");
  } else {
    require(!has_roles, ErrorCode::ConfigInvalid, "role names are only valid for dialog configs");
  }
}

std::string clip(std::string_view text, int cap) {
  const auto limit = static_cast<std::size_t>(cap < 1 ? 1 : cap);
  if (text.size() <= limit) return std::string(text);
  std::size_t start = text.size() - limit;
  // Never start inside a UTF-8 continuation sequence.
  while (start < text.size() && (static_cast<unsigned char>(text[start]) & 0xC0) == 0x80) ++start;
  return std::string(text.substr(start));
}

std::string format_turn(std::string_view role, std::string_view output) {
  std::string out;
  out.reserve(role.size() + output.size() + 5);
  out += "\n[";
  out += role;
  out += "]: ";
  out += output;
  return out;
}

std::optional<ParsedTurn> parse_turn(std::string_view rendered) {
  if (rendered.size() < 5 || rendered.substr(0, 2) != "\n[") return std::nullopt;
  const auto close = rendered.find("]: ", 2);
  if (close == std::string_view::npos) return std::nullopt;
  return ParsedTurn{std::string(rendered.substr(2, close - 2)), std::string(rendered.substr(close + 3))};
}

std::string apply_nudge(NudgeKind kind, std::string_view state, std::string_view output,
                        std::optional<std::string_view> role, int cap) {
  switch (kind) {
    case NudgeKind::Append: {
      std::string joined(state);
      joined += output;
      return clip(joined, cap);
    }
    case NudgeKind::Replace:
      return clip(output, cap);
    case NudgeKind::Dialog: {
      if (!role) fail(ErrorCode::MissingRole, "dialog nudge requires a role");
      std::string joined(state);
      joined += format_turn(*role, output);
      return clip(joined, cap);
    }
  }
  return clip(output, cap);
}

std::optional<std::string> role_for_step(const LoopConfig& config, int step) {
  if (config.nudge_kind != NudgeKind::Dialog) return std::nullopt;
  return step % 2 == 0 ? config.role_a_name : config.role_b_name;
}

std::string trajectory_id(const LoopConfig& config, std::string_view arm, std::string_view condition) {
  std::ostringstream os;
  os << config.family_id << '/' << config.ic_id << '/' << config.run_id << '/' << arm;
  if (!condition.empty()) os << '/' << condition;
  return os.str();
}

namespace {

std::string call_generator(const Generator& generator, const GenerationRequest& request, std::uint64_t stream) {
  Rng rng = step_rng(stream, request.step);
  try {
    return generator.generate(request, rng);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::GeneratorFailure, "step " + std::to_string(request.step) + ": " + e.what());
  }
}

std::uint64_t stream_for(const LoopConfig& config, std::string_view arm) {
  return derive_stream(config.seed, config.family_id, config.ic_id, config.run_id, arm);
}

}  // namespace

Trajectory run_trajectory(const LoopConfig& config, const Generator& generator,
                          const std::optional<InjectionSpec>& injection, std::string_view stream_arm) {
  config.validate();
  if (injection) {
    require(injection->step > 0 && injection->step < config.steps - 1, ErrorCode::ConfigInvalid,
            "injection step must satisfy 0 < step < steps - 1");
  }
  const std::uint64_t stream = stream_for(config, stream_arm);

  Trajectory traj;
  traj.config = config;
  traj.arm = std::string(stream_arm);
  traj.steps.reserve(static_cast<std::size_t>(config.steps));

  std::string state = clip(config.seed_text, config.max_context_chars);
  for (int t = 0; t < config.steps; ++t) {
    StepRecord rec;
    rec.step = t;
    rec.state_before = state;
    rec.role = role_for_step(config, t);
    const std::optional<std::string_view> role =
        rec.role ? std::optional<std::string_view>(*rec.role) : std::nullopt;

    GenerationRequest request{state, config.operator_instruction, role, config.temperature, t,
                              config.max_output_tokens};
    if (injection && injection->step == t) {
      rec.injected = true;
      rec.injection_mode = injection->mode;
      if (injection->mode == InjectionMode::Overwrite) {
        rec.output = injection->text;
      } else {
        std::string visible = injection->text;
        visible += "\n\n";
        visible += state;
        request.state = visible;
        rec.output = call_generator(generator, request, stream);
        rec.generator_call_count = 1;
      }
    } else {
      rec.output = call_generator(generator, request, stream);
      rec.generator_call_count = 1;
    }
    rec.state_after = apply_nudge(config.nudge_kind, state, rec.output, role, config.max_context_chars);
    state = rec.state_after;
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

Trajectory run_baseline(BaselineKind kind, const LoopConfig& config, const Generator& generator,
                        std::string_view stream_arm) {
  config.validate();
  const std::uint64_t stream = stream_for(config, std::string(stream_arm) + ":" + std::string(to_string(kind)));

  Trajectory traj;
  traj.config = config;
  traj.arm = std::string(stream_arm);
  traj.condition = std::string(to_string(kind));
  const std::string initial = clip(config.seed_text, config.max_context_chars);
  for (int t = 0; t < config.steps; ++t) {
    StepRecord rec;
    rec.step = t;
    rec.state_before = initial;
    rec.role = role_for_step(config, t);
    const std::optional<std::string_view> role =
        rec.role ? std::optional<std::string_view>(*rec.role) : std::nullopt;
    // Independent regeneration treats every step as a fresh first call; no-feedback
    // keeps the step index but never carries state forward.
    const int request_step = kind == BaselineKind::IndependentRegeneration ? 0 : t;
    GenerationRequest request{initial, config.operator_instruction, role, config.temperature, request_step,
                              config.max_output_tokens};
    Rng rng = step_rng(stream, t);
    try {
      rec.output = generator.generate(request, rng);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorCode::GeneratorFailure, "step " + std::to_string(t) + ": " + e.what());
    }
    rec.generator_call_count = 1;
    rec.state_after = apply_nudge(config.nudge_kind, initial, rec.output, role, config.max_context_chars);
    traj.steps.push_back(std::move(rec));
  }
  traj.id = trajectory_id(config, stream_arm, traj.condition);
  return traj;
}

PairedUnit run_paired_unit(const LoopConfig& config, const Generator& generator,
                           const std::optional<InjectionSpec>& injection, std::string_view condition) {
  PairedUnit unit;
  unit.condition = condition;
  unit.family = config.family_id;
  unit.ic = config.ic_id;
  unit.run = config.run_id;
  unit.injection = injection;
  unit.a = run_trajectory(config, generator, std::nullopt, "A");
  unit.a->id = trajectory_id(config, "A", "");
  unit.b = run_trajectory(config, generator, std::nullopt, "B");
  unit.b->id = trajectory_id(config, "B", "");
  unit.z = run_trajectory(config, generator, injection, "A");
  unit.z->arm = "Z";
  unit.z->condition = condition;
  unit.z->id = trajectory_id(config, "Z", condition);
  return unit;
}

// ---------------------------------------------------------------------------
// JSON Lines

nlohmann::json to_json(const LoopConfig& c) {
  nlohmann::json j;
  j["nudge_kind"] = to_string(c.nudge_kind);
  j["operator_instruction"] = c.operator_instruction;
  j["seed_text"] = c.seed_text;
  j["max_context_chars"] = c.max_context_chars;
  j["steps"] = c.steps;
  j["max_output_tokens"] = c.max_output_tokens;
  j["temperature"] = c.temperature;
  j["seed"] = c.seed;
  j["family_id"] = c.family_id;
  j["ic_id"] = c.ic_id;
  j["run_id"] = c.run_id;
  j["role_a_name"] = c.role_a_name ? nlohmann::json(*c.role_a_name) : nlohmann::json(nullptr);
  j["role_b_name"] = c.role_b_name ? nlohmann::json(*c.role_b_name) : nlohmann::json(nullptr);
  return j;
}

LoopConfig loop_config_from_json(const nlohmann::json& j) {
  LoopConfig c;
  c.nudge_kind = parse_nudge_kind(j.value("nudge_kind", "append"));
  c.operator_instruction = j.value("operator_instruction", c.operator_instruction);
  c.seed_text = j.value("seed_text", "");
  c.max_context_chars = j.value("max_context_chars", c.max_context_chars);
  c.steps = j.value("steps", c.steps);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", std::uint64_t{0});
  c.family_id = j.value("family_id", "");
  c.ic_id = j.value("ic_id", "");
  c.run_id = j.value("run_id", 0);
  if (j.contains("role_a_name") && j["role_a_name"].is_string()) c.role_a_name = j["role_a_name"].get<std::string>();
  if (j.contains("role_b_name") && j["role_b_name"].is_string()) c.role_b_name = j["role_b_name"].get<std::string>();
  return c;
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["state_before"] = r.state_before;
  j["output"] = r.output;
  j["state_after"] = r.state_after;
  j["role"] = r.role ? nlohmann::json(*r.role) : nlohmann::json(nullptr);
  j["injected"] = r.injected;
  j["injection_mode"] = r.injection_mode ? nlohmann::json(to_string(*r.injection_mode)) : nlohmann::json(nullptr);
  j["generator_call_count"] = r.generator_call_count;
  return j;
}

std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories) {
  std::string out;
  for (const auto& traj : trajectories) {
    nlohmann::json header;
    header["kind"] = "trajectory";
    header["id"] = traj.id;
    header["arm"] = traj.arm;
    header["condition"] = traj.condition;
    header["n_steps"] = traj.steps.size();
    header["config"] = to_json(traj.config);
    out += header.dump();
    out += '\n';
    for (const auto& rec : traj.steps) {
      out += to_json(rec).dump();
      out += '\n';
    }
  }
  return out;
}

void write_trajectories_jsonl(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + path.string());
  os << trajectories_to_jsonl(trajectories);
}

namespace {

[[noreturn]] void schema_error(std::size_t line, const std::string& what) {
  fail(ErrorCode::SchemaMismatch, "line " + std::to_string(line) + ": " + what);
}

StepRecord step_from_json(const nlohmann::json& j, std::size_t line) {
  static const char* const kFields[] = {"step",     "state_before", "output",        "state_after",
                                        "role",     "injected",     "injection_mode"};
  for (const char* field : kFields) {
    if (!j.contains(field)) schema_error(line, std::string("missing field '") + field + "'");
  }
  StepRecord r;
  try {
    r.step = j.at("step").get<int>();
    r.state_before = j.at("state_before").get<std::string>();
    r.output = j.at("output").get<std::string>();
    r.state_after = j.at("state_after").get<std::string>();
    if (!j.at("role").is_null()) r.role = j.at("role").get<std::string>();
    r.injected = j.at("injected").get<bool>();
    if (!j.at("injection_mode").is_null()) r.injection_mode = parse_injection_mode(j.at("injection_mode").get<std::string>());
    r.generator_call_count = j.value("generator_call_count", r.injected && r.injection_mode == InjectionMode::Overwrite ? 0 : 1);
  } catch (const nlohmann::json::exception& e) {
    schema_error(line, e.what());
  } catch (const Error& e) {
    schema_error(line, e.what());
  }
  return r;
}

}  // namespace

std::vector<Trajectory> parse_trajectories_jsonl(std::string_view text) {
  std::vector<Trajectory> out;
  std::optional<std::size_t> expected;  // steps promised by the current header
  std::size_t line_no = 0;
  std::size_t pos = 0;

  auto close_current = [&](std::size_t at_line) {
    if (!out.empty() && expected && out.back().steps.size() != *expected) {
      schema_error(at_line, "trajectory '" + out.back().id + "' truncated: expected " + std::to_string(*expected) +
                                " steps, found " + std::to_string(out.back().steps.size()));
    }
  };

  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    const bool has_newline = end != std::string_view::npos;
    if (!has_newline) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = has_newline ? end + 1 : end;
    ++line_no;
    if (line.empty()) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      schema_error(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) schema_error(line_no, "expected a JSON object");

    if (j.contains("kind") && j["kind"] == "trajectory") {
      close_current(line_no);
      Trajectory traj;
      try {
        traj.id = j.value("id", "");
        traj.arm = j.value("arm", "");
        traj.condition = j.value("condition", "");
        traj.config = loop_config_from_json(j.value("config", nlohmann::json::object()));
        expected = j.contains("n_steps") ? std::optional<std::size_t>(j["n_steps"].get<std::size_t>()) : std::nullopt;
      } catch (const std::exception& e) {
        schema_error(line_no, std::string("bad header: ") + e.what());
      }
      out.push_back(std::move(traj));
      continue;
    }

    StepRecord rec = step_from_json(j, line_no);
    // Header-less external logs: a step index of 0 starts a new trajectory.
    if (out.empty() || (!expected && rec.step == 0 && !out.back().steps.empty())) {
      Trajectory traj;
      traj.id = "external/" + std::to_string(out.size());
      out.push_back(std::move(traj));
    }
    auto& current = out.back();
    if (rec.step != static_cast<int>(current.steps.size())) {
      schema_error(line_no, "non-contiguous step index " + std::to_string(rec.step));
    }
    if (expected && current.steps.size() >= *expected) schema_error(line_no, "more steps than header declares");
    current.steps.push_back(std::move(rec));
  }
  close_current(line_no + 1);
  return out;
}

std::vector<Trajectory> read_trajectories_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_trajectories_jsonl(ss.str());
}

}  // namespace loopdyn
