// SPDX-License-Identifier: Apache-2.0
#include "canwire/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "canwire/capture.hpp"

namespace canwire::protocol {

namespace {

constexpr std::string_view kVerbs[] = {
    "set_speed_override", "set_rpm_override", "set_airbag_disabled", "set_abs_disabled",
    "clear_overrides",    "set_flood",        "vehicle_set",         "sim_pause",
    "sim_resume",         "set_time_scale",   "rogue_configure",     "rogue_inject",
    "vehicle_mode",
};

constexpr double kMaxTimeScale = 1000.0;

[[noreturn]] void malformed(const std::string& what) { throw CommandError(ErrorCode::Malformed, what); }

const json& field(const json& body, const char* name) {
  auto it = body.find(name);
  if (it == body.end()) malformed(std::string("missing '") + name + "'");
  return *it;
}

bool as_bool(const json& v, const char* name) {
  if (!v.is_boolean()) malformed(std::string("'") + name + "' must be a boolean");
  return v.get<bool>();
}

double as_number(const json& v, const char* name) {
  if (!v.is_number()) malformed(std::string("'") + name + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) malformed(std::string("'") + name + "' must be finite");
  return d;
}

std::optional<double> optional_override(const json& body, GaugeRange range, const char* what) {
  const json& v = field(body, "value");
  if (v.is_null()) return std::nullopt;
  const double d = as_number(v, "value");
  if (d < range.lo || d > range.hi) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %g outside [%g, %g]", what, d, range.lo, range.hi);
    throw CommandError(ErrorCode::OutOfRange, buf);
  }
  return d;
}

RogueDevice& need_rogue(Testbed& bed) {
  if (!bed.rogue()) throw CommandError(ErrorCode::Rejected, "no rogue device in the direct topology");
  return *bed.rogue();
}

SimControl& need_live(SimControl* live) {
  if (!live) throw CommandError(ErrorCode::Rejected, "not a live simulation");
  return *live;
}

FieldValue field_value(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  malformed("'value' must be a boolean, number or string");
}

ErrorCode code_for(const RogueError& e) {
  return e.kind() == RogueError::Kind::OutOfRange ? ErrorCode::OutOfRange : ErrorCode::Rejected;
}

ErrorCode code_for(const VehicleError& e) {
  switch (e.kind()) {
    case VehicleError::Kind::OutOfRange: return ErrorCode::OutOfRange;
    case VehicleError::Kind::NotSettable:
    case VehicleError::Kind::WrongMode: return ErrorCode::Rejected;
    default: return ErrorCode::Malformed;
  }
}

void set_attack(Testbed& bed, const AttackConfig& next) {
  try {
    need_rogue(bed).set_attack(next);
  } catch (const RogueError& e) {
    throw CommandError(code_for(e), e.what());
  }
}

json ids_json(const std::vector<std::uint32_t>& ids) {
  json out = json::array();
  for (auto id : ids) out.push_back(format_id(id));
  return out;
}

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::UnknownVerb: return "unknown_verb";
    case ErrorCode::OutOfRange: return "out_of_range";
    case ErrorCode::BadSeq: return "bad_seq";
    case ErrorCode::Rejected: return "rejected";
  }
  return "?";
}

std::span<const std::string_view> verbs() { return kVerbs; }

bool is_live_verb(std::string_view verb) {
  return verb == "sim_pause" || verb == "sim_resume" || verb == "set_time_scale";
}

Command parse_command(const json& doc, bool require_seq) {
  if (!doc.is_object()) malformed("command must be a JSON object");
  Command cmd;
  if (auto it = doc.find("seq"); it != doc.end()) {
    if (!it->is_number_integer()) malformed("'seq' must be an integer");
    cmd.seq = it->get<std::int64_t>();
  } else if (require_seq) {
    malformed("missing 'seq'");
  }
  if (auto it = doc.find("protocol_version"); it != doc.end()) {
    if (!it->is_number_integer() || it->get<int>() != kVersion) {
      malformed("unsupported protocol_version, expected " + std::to_string(kVersion));
    }
  }
  const json& verb = field(doc, "verb");
  if (!verb.is_string()) malformed("'verb' must be a string");
  cmd.verb = verb.get<std::string>();
  if (std::find(std::begin(kVerbs), std::end(kVerbs), cmd.verb) == std::end(kVerbs)) {
    throw CommandError(ErrorCode::UnknownVerb, "unknown verb '" + cmd.verb + "'");
  }
  cmd.body = doc;
  return cmd;
}

Command parse_command(std::string_view text, bool require_seq) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) malformed("not a JSON document");
  return parse_command(doc, require_seq);
}

void SeqGuard::check(std::int64_t seq) {
  if (last_ && seq <= *last_) {
    throw CommandError(ErrorCode::BadSeq,
                       "seq " + std::to_string(seq) + " does not follow " + std::to_string(*last_));
  }
  last_ = seq;
}

void apply(Testbed& bed, const Command& cmd, SimControl* live) {
  const json& body = cmd.body;
  const std::string& verb = cmd.verb;

  if (verb == "set_speed_override") {
    auto next = need_rogue(bed).attack();
    next.speed_override = optional_override(body, kSpeedGauge, "speed override");
    set_attack(bed, next);
  } else if (verb == "set_rpm_override") {
    auto next = need_rogue(bed).attack();
    next.rpm_override = optional_override(body, kRpmGauge, "rpm override");
    set_attack(bed, next);
  } else if (verb == "set_airbag_disabled") {
    auto next = need_rogue(bed).attack();
    next.airbag_disabled = as_bool(field(body, "value"), "value");
    set_attack(bed, next);
  } else if (verb == "set_abs_disabled") {
    auto next = need_rogue(bed).attack();
    next.abs_disabled = as_bool(field(body, "value"), "value");
    set_attack(bed, next);
  } else if (verb == "clear_overrides") {
    set_attack(bed, {});
  } else if (verb == "set_flood") {
    auto& rogue = need_rogue(bed);
    const bool active = as_bool(field(body, "value"), "value");
    std::uint32_t id = 0x000;
    std::vector<std::uint8_t> payload(8, 0x00);
    if (auto it = body.find("id"); it != body.end()) id = parse_id(*it);
    if (auto it = body.find("payload"); it != body.end()) payload = parse_hex_bytes(*it);
    rogue.flood(active, make_frame(id, payload));
  } else if (verb == "vehicle_set") {
    const json& name = field(body, "field");
    if (!name.is_string()) malformed("'field' must be a string");
    const FieldValue value = field_value(field(body, "value"));
    try {
      bed.vehicle().set_state(name.get<std::string>(), value);
    } catch (const VehicleError& e) {
      throw CommandError(code_for(e), e.what());
    }
  } else if (verb == "vehicle_mode") {
    const json& mode = field(body, "value");
    if (mode == "manual") {
      bed.vehicle().set_manual();
    } else if (mode == "demo") {
      bed.vehicle().run_demo(bed.config().script.value_or(DemoScript::default_drive()));
    } else {
      malformed("vehicle mode must be \"manual\" or \"demo\"");
    }
  } else if (verb == "sim_pause") {
    need_live(live).pause();
  } else if (verb == "sim_resume") {
    need_live(live).resume();
  } else if (verb == "set_time_scale") {
    auto& sim = need_live(live);
    const double scale = as_number(field(body, "value"), "value");
    if (!(scale > 0.0) || scale > kMaxTimeScale) {
      throw CommandError(ErrorCode::OutOfRange, "time scale must be in (0, 1000]");
    }
    sim.set_time_scale(scale);
  } else if (verb == "rogue_configure") {
    auto& rogue = need_rogue(bed);
    const auto rules = parse_rules(field(body, "rules"));
    try {
      rogue.configure(rules);
    } catch (const RogueError& e) {
      throw CommandError(code_for(e), e.what());
    }
  } else if (verb == "rogue_inject") {
    auto& rogue = need_rogue(bed);
    CanFrame frame = parse_frame(field(body, "frame"));
    if (auto it = body.find("counter_offset"); it != body.end()) {
      if (!it->is_number_integer() || it->get<int>() < 0 || it->get<int>() >= kCounterModulus) {
        throw CommandError(ErrorCode::OutOfRange, "'counter_offset' must be an integer in [0, 14]");
      }
      const MessageSpec* spec = catalog().find(frame.id);
      if (!spec || !spec->counter_byte || frame.dlc != spec->dlc) {
        throw CommandError(ErrorCode::Rejected, format_id(frame.id) + " carries no alive counter");
      }
      const auto last = rogue.last_counter(frame.id);
      if (!last) throw CommandError(ErrorCode::Rejected, "no upstream counter seen for " + format_id(frame.id));
      std::uint8_t counter = next_counter(*last);
      for (int i = 0; i < it->get<int>(); ++i) counter = next_counter(counter);
      std::vector<std::uint8_t> payload(frame.payload().begin(), frame.payload().end());
      auto& byte = payload[*spec->counter_byte];
      byte = static_cast<std::uint8_t>((byte & 0xF0) | counter);
      frame = make_frame(frame.id, payload);
    }
    rogue.inject_once(frame);
  } else {
    throw CommandError(ErrorCode::UnknownVerb, "unknown verb '" + verb + "'");
  }
}

json ok_reply(std::optional<std::int64_t> seq) {
  return json{{"type", "reply"}, {"protocol_version", kVersion}, {"seq", seq ? json(*seq) : json(nullptr)},
              {"ok", true}};
}

json error_reply(std::optional<std::int64_t> seq, ErrorCode code, std::string_view message) {
  json r = ok_reply(seq);
  r["ok"] = false;
  r["error"] = json{{"code", to_string(code)}, {"message", message}};
  return r;
}

json hello() {
  json v = json::array();
  for (auto verb : kVerbs) v.push_back(verb);
  return json{{"type", "hello"}, {"protocol_version", kVersion}, {"verbs", v}};
}

json handle(Testbed& bed, std::string_view text, SeqGuard& guard, SimControl* live) {
  std::optional<std::int64_t> seq;
  try {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_object()) {
      if (auto it = doc.find("seq"); it != doc.end() && it->is_number_integer()) seq = it->get<std::int64_t>();
    }
    if (doc.is_discarded()) malformed("not a JSON document");
    const Command cmd = parse_command(doc);
    guard.check(*cmd.seq);
    apply(bed, cmd, live);
    return ok_reply(seq);
  } catch (const CommandError& e) {
    return error_reply(seq, e.code(), e.what());
  } catch (const json::exception& e) {
    return error_reply(seq, ErrorCode::Malformed, e.what());
  }
}

json vehicle_json(const VehicleState& state, VehicleMode mode) {
  json out = json::object();
  for (auto name : vehicle_fields()) {
    std::visit([&](const auto& v) { out[std::string(name)] = v; }, get_field(state, name));
  }
  out["mode"] = mode == VehicleMode::Demo ? "demo" : "manual";
  return out;
}

json cluster_json(const ClusterState& s) {
  json lamps = json::object();
  for (auto lamp : kAllLamps) lamps[std::string(to_string(lamp))] = s.lamps.get(lamp);
  json clock = nullptr;
  if (s.clock) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", s.clock->year, s.clock->month, s.clock->day,
                  s.clock->hour, s.clock->minute, s.clock->second);
    clock = buf;
  }
  return json{{"speed", s.speed},
              {"rpm", s.rpm},
              {"fuel", s.fuel},
              {"temp", s.temp},
              {"ignition", s.ignition},
              {"vin", s.vin},
              {"clock", clock},
              {"lamps", lamps},
              {"counter_errors", ids_json(s.counter_errors)},
              {"timeouts", ids_json(s.timeouts)},
              {"warnings", s.warnings},
              {"flagged", s.flagged()}};
}

json telemetry(const Testbed& bed, const SimStatus& status, std::uint64_t index, Micros window) {
  const Micros now = bed.now();
  const Micros from = now > window ? now - window : Micros{0};
  json rogue = nullptr;
  if (const auto* r = bed.rogue()) {
    json rules = json::array();
    for (const auto& rule : r->active_rules()) rules.push_back(rule_json(rule));
    const auto& st = r->stats();
    rogue = json{{"attack", attack_json(r->attack())},
                 {"rules", rules},
                 {"flood", {{"active", r->flooding()}, {"frame", format_frame(r->flood_frame())}}},
                 {"stats",
                  {{"forwarded", st.forwarded},
                   {"modified", st.modified},
                   {"blocked", st.blocked},
                   {"injected", st.injected},
                   {"flood_sent", st.flood_sent},
                   {"dropped", st.dropped},
                   {"max_latency_us", st.max_latency.count()},
                   {"mean_latency_us", st.mean_latency_us()}}}};
  }
  return json{{"type", "telemetry"},
              {"protocol_version", kVersion},
              {"index", index},
              {"sim_time_us", now.count()},
              {"paused", status.paused},
              {"time_scale", status.time_scale},
              {"topology", to_string(bed.config().topology)},
              {"vehicle", vehicle_json(bed.vehicle().state(), bed.vehicle().mode())},
              {"cluster", cluster_json(bed.cluster().snapshot())},
              {"rogue", rogue},
              {"bus",
               {{"window_us", (now - from).count()},
                {"vehicle_utilization", bed.vehicle_bus().utilization(from, now)},
                {"cluster_utilization", bed.cluster_bus().utilization(from, now)}}}};
}

std::uint32_t parse_id(const json& v) {
  std::uint64_t id = 0;
  if (v.is_number_unsigned()) {
    id = v.get<std::uint64_t>();
  } else if (v.is_number_integer()) {
    malformed("id must not be negative");
  } else if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0) s = s.substr(2);
    if (s.empty() || s.size() > 3 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
      malformed("bad id '" + v.get<std::string>() + "'");
    }
    id = std::stoul(s, nullptr, 16);
  } else {
    malformed("id must be a hex string or integer");
  }
  if (id > kMaxStandardId) throw CommandError(ErrorCode::OutOfRange, "id above 0x7FF");
  return static_cast<std::uint32_t>(id);
}

std::string format_id(std::uint32_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%03X", id);
  return buf;
}

CanFrame parse_frame(const json& v) {
  if (!v.is_string()) malformed("frame must be a string like \"0C0#F3FF\"");
  try {
    const auto rec = parse_record(v.get<std::string>());
    if (rec.time || !rec.channel.empty()) malformed("frame must be bare ID#DATA");
    return rec.frame;
  } catch (const LogParseError& e) {
    malformed(std::string("bad frame: ") + e.what());
  }
}

std::string format_frame(const CanFrame& frame) { return format_record({std::nullopt, "", frame}); }

std::vector<std::uint8_t> parse_hex_bytes(const json& v) {
  if (!v.is_string()) malformed("payload must be a hex string");
  const auto s = v.get<std::string>();
  if (s.size() % 2 || s.size() > 16 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
    malformed("payload must be 0 to 8 bytes of hex");
  }
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(s.substr(i, 2), nullptr, 16)));
  }
  return out;
}

AttackRule parse_rule(const json& v) {
  if (!v.is_object()) malformed("rule must be an object");
  AttackRule rule;
  rule.id = parse_id(field(v, "id"));
  const json& action = field(v, "action");
  if (!action.is_string()) malformed("'action' must be a string");
  const auto name = action.get<std::string>();
  if (name == "pass") {
    rule.action = PassAction{};
  } else if (name == "block") {
    rule.action = BlockAction{};
  } else if (name == "modify") {
    ModifyAction m;
    if (auto it = v.find("signals"); it != v.end()) {
      if (!it->is_object()) malformed("'signals' must be an object");
      for (const auto& [signal, value] : it->items()) {
        if (value.is_number()) {
          m.signals[signal] = value.get<double>();
        } else if (value.is_string()) {
          m.signals[signal] = value.get<std::string>();
        } else if (value.is_boolean()) {
          m.signals[signal] = value.get<bool>() ? 1.0 : 0.0;
        } else {
          malformed("signal '" + signal + "' needs a number or string");
        }
      }
    }
    if (auto it = v.find("payload"); it != v.end()) m.payload = parse_hex_bytes(*it);
    rule.action = std::move(m);
  } else if (name == "inject") {
    InjectAction inj;
    inj.frame = parse_frame(field(v, "frame"));
    if (auto it = v.find("period_ms"); it != v.end()) {
      const double ms = as_number(*it, "period_ms");
      if (ms < 0) throw CommandError(ErrorCode::OutOfRange, "period_ms must not be negative");
      inj.period = Micros{static_cast<std::int64_t>(std::llround(ms * 1000.0))};
    }
    rule.action = inj;
  } else {
    malformed("unknown action '" + name + "'");
  }
  return rule;
}

json rule_json(const AttackRule& rule) {
  json out{{"id", format_id(rule.id)}, {"action", action_name(rule.action)}};
  if (const auto* m = std::get_if<ModifyAction>(&rule.action)) {
    json signals = json::object();
    for (const auto& [name, value] : m->signals) {
      std::visit([&](const auto& x) { signals[name] = x; }, value);
    }
    out["signals"] = signals;
    if (m->payload) {
      std::string hex;
      char buf[4];
      for (auto b : *m->payload) {
        std::snprintf(buf, sizeof buf, "%02X", b);
        hex += buf;
      }
      out["payload"] = hex;
    }
  } else if (const auto* inj = std::get_if<InjectAction>(&rule.action)) {
    out["frame"] = format_frame(inj->frame);
    out["period_ms"] = static_cast<double>(inj->period.count()) / 1000.0;
  }
  return out;
}

std::vector<AttackRule> parse_rules(const json& v) {
  if (!v.is_array()) malformed("'rules' must be an array");
  std::vector<AttackRule> rules;
  for (const auto& r : v) rules.push_back(parse_rule(r));
  return rules;
}

AttackConfig parse_attack(const json& v) {
  if (!v.is_object()) malformed("'attack' must be an object");
  AttackConfig a;
  if (v.contains("speed_override")) {
    a.speed_override = optional_override(json{{"value", v["speed_override"]}}, kSpeedGauge, "speed override");
  }
  if (v.contains("rpm_override")) {
    a.rpm_override = optional_override(json{{"value", v["rpm_override"]}}, kRpmGauge, "rpm override");
  }
  if (v.contains("airbag_disabled")) a.airbag_disabled = as_bool(v["airbag_disabled"], "airbag_disabled");
  if (v.contains("abs_disabled")) a.abs_disabled = as_bool(v["abs_disabled"], "abs_disabled");
  return a;
}

json attack_json(const AttackConfig& a) {
  return json{{"speed_override", a.speed_override ? json(*a.speed_override) : json(nullptr)},
              {"rpm_override", a.rpm_override ? json(*a.rpm_override) : json(nullptr)},
              {"airbag_disabled", a.airbag_disabled},
              {"abs_disabled", a.abs_disabled}};
}

}  // namespace canwire::protocol
