// SPDX-License-Identifier: Apache-2.0
#include "canwire/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace canwire {

using nlohmann::json;

namespace {

constexpr std::string_view kPredicates[] = {
    "lamp_on",          "lamp_off",          "no_lamps",        "displayed_speed_eq", "displayed_rpm_eq",
    "vehicle_speed_eq", "vehicle_rpm_eq",    "flag_set",        "flag_clear",         "no_flags",
    "all_timeouts",     "no_warnings",       "warning_present", "utilization_ge",
};

constexpr std::string_view kTopKeys[] = {"schema_version", "name",    "description", "bitrate", "duration_s",
                                         "topology",       "vehicle", "rogue",       "actions", "assertions"};

constexpr double kDefaultTolerance = 0.05;
constexpr double kDefaultWindowMs = 100.0;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ScenarioError(where + ": " + what);
}

std::string printf_string(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string printf_string(const char* format, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, format);
  std::vsnprintf(buf, sizeof buf, format, ap);
  va_end(ap);
  return buf;
}

std::string seconds(Micros t) { return printf_string("%.3f", static_cast<double>(t.count()) / 1e6); }

std::string number(double v) { return printf_string("%g", v); }

Micros parse_time(const json& v, const std::string& where) {
  if (!v.is_number() || v.get<double>() < 0 || !std::isfinite(v.get<double>())) {
    fail(where, "must be a non-negative number of seconds");
  }
  return Micros{std::llround(v.get<double>() * 1e6)};
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& require(const json& obj, const char* key, const std::string& where) {
  const json* v = find(obj, key);
  if (!v) fail(where, std::string("missing '") + key + "'");
  return *v;
}

FieldValue field_value(const json& v, const std::string& where) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  fail(where, "must be a boolean, number or string");
}

std::string list_ids(const std::vector<std::uint32_t>& ids) {
  std::string s = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + protocol::format_id(ids[i]);
  return s + "]";
}

// Predicate arguments -------------------------------------------------------

double number_arg(const json& args, const char* key, const std::string& where,
                  std::optional<double> fallback = std::nullopt) {
  const json* v = find(args, key);
  if (!v) {
    if (fallback) return *fallback;
    fail(where, std::string("missing argument '") + key + "'");
  }
  if (!v->is_number()) fail(where + "." + key, "must be a number");
  return v->get<double>();
}

std::string string_arg(const json& args, const char* key, const std::string& where) {
  const json& v = require(args, key, where);
  if (!v.is_string()) fail(where + "." + key, "must be a string");
  return v.get<std::string>();
}

void only_keys(const json& args, std::initializer_list<std::string_view> keys, const std::string& where) {
  for (const auto& [k, _] : args.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(where, "unexpected argument '" + k + "'");
  }
}

std::string flag_kind(const json& args, const std::string& where) {
  const std::string kind = string_arg(args, "flag", where);
  if (kind != "counter_error" && kind != "timeout") fail(where + ".flag", "must be counter_error or timeout");
  return kind;
}

void validate_args(const std::string& p, const json& args, const std::string& where) {
  if (p == "lamp_on" || p == "lamp_off") {
    only_keys(args, {"lamp"}, where);
    if (!parse_lamp(string_arg(args, "lamp", where))) fail(where + ".lamp", "unknown lamp");
  } else if (p.ends_with("_eq")) {
    only_keys(args, {"value", "tolerance"}, where);
    number_arg(args, "value", where);
    if (number_arg(args, "tolerance", where, kDefaultTolerance) < 0) fail(where + ".tolerance", "must be >= 0");
  } else if (p == "flag_set" || p == "flag_clear") {
    only_keys(args, {"flag", "id"}, where);
    flag_kind(args, where);
    if (const json* id = find(args, "id")) {
      try {
        protocol::parse_id(*id);
      } catch (const std::exception& e) {
        fail(where + ".id", e.what());
      }
    }
  } else if (p == "warning_present") {
    only_keys(args, {"warning"}, where);
    string_arg(args, "warning", where);
  } else if (p == "utilization_ge") {
    only_keys(args, {"value", "bus", "window_ms"}, where);
    number_arg(args, "value", where);
    if (number_arg(args, "window_ms", where, kDefaultWindowMs) <= 0) fail(where + ".window_ms", "must be > 0");
    if (const json* bus = find(args, "bus"); bus && *bus != "cluster" && *bus != "vehicle") {
      fail(where + ".bus", "must be cluster or vehicle");
    }
  } else {
    only_keys(args, {}, where);
  }
}

struct Verdict {
  bool ok;
  std::string observed;
};

Verdict evaluate(const std::string& p, const json& args, Testbed& bed) {
  const ClusterState& c = bed.cluster().snapshot();
  const VehicleState& v = bed.vehicle().state();
  if (p == "lamp_on" || p == "lamp_off") {
    const auto name = args["lamp"].get<std::string>();
    const bool on = c.lamps.get(*parse_lamp(name));
    return {on == (p == "lamp_on"), name + (on ? "=on" : "=off")};
  }
  if (p == "no_lamps") {
    std::string lit;
    for (Lamp l : kAllLamps) {
      if (c.lamps.get(l)) lit += (lit.empty() ? "" : ",") + std::string(to_string(l));
    }
    return {lit.empty(), "lit=[" + lit + "]"};
  }
  if (p.ends_with("_eq")) {
    const double want = args["value"].get<double>();
    const double tol = number_arg(args, "tolerance", p, kDefaultTolerance);
    double got = 0;
    std::string label;
    if (p == "displayed_speed_eq") got = c.speed, label = "speed";
    if (p == "displayed_rpm_eq") got = c.rpm, label = "rpm";
    if (p == "vehicle_speed_eq") got = v.speed, label = "speed";
    if (p == "vehicle_rpm_eq") got = v.rpm, label = "rpm";
    return {std::abs(got - want) <= tol, label + "=" + number(got)};
  }
  if (p == "flag_set" || p == "flag_clear") {
    const auto kind = args["flag"].get<std::string>();
    const auto& ids = kind == "timeout" ? c.timeouts : c.counter_errors;
    bool set = !ids.empty();
    if (const json* id = find(args, "id")) {
      set = std::binary_search(ids.begin(), ids.end(), protocol::parse_id(*id));
    }
    return {set == (p == "flag_set"), kind + "s=" + list_ids(ids)};
  }
  if (p == "no_flags") {
    return {!c.flagged(), "counter_errors=" + list_ids(c.counter_errors) + " timeouts=" + list_ids(c.timeouts)};
  }
  if (p == "all_timeouts") {
    std::size_t missing = 0;
    for (const auto& spec : catalog().messages()) {
      if (spec.supervised && !std::binary_search(c.timeouts.begin(), c.timeouts.end(), spec.id)) ++missing;
    }
    return {missing == 0, std::to_string(c.timeouts.size()) + " timed out, " + std::to_string(missing) + " missing"};
  }
  if (p == "no_warnings" || p == "warning_present") {
    std::string all;
    for (const auto& w : c.warnings) all += (all.empty() ? "" : ",") + w;
    const bool ok = p == "no_warnings"
                        ? c.warnings.empty()
                        : std::find(c.warnings.begin(), c.warnings.end(), args["warning"].get<std::string>()) !=
                              c.warnings.end();
    return {ok, "warnings=[" + all + "]"};
  }
  if (p == "utilization_ge") {
    const Micros window{std::llround(number_arg(args, "window_ms", p, kDefaultWindowMs) * 1000.0)};
    const Micros to = bed.now();
    const Micros from = std::max(Micros{0}, to - window);
    const VirtualBus& bus = args.value("bus", "cluster") == "vehicle" ? bed.vehicle_bus() : bed.cluster_bus();
    const double u = to > from ? bus.utilization(from, to) : 0.0;
    return {u >= args["value"].get<double>(), printf_string("utilization=%.4f", u)};
  }
  return {false, "unknown predicate"};
}

// Document sections ---------------------------------------------------------

void parse_vehicle(const json& doc, TestbedConfig& config) {
  const std::string where = "vehicle";
  if (!doc.is_object()) fail(where, "must be an object");
  for (const auto& [k, _] : doc.items()) {
    if (k != "mode" && k != "state" && k != "script" && k != "epoch") fail(where, "unexpected key '" + k + "'");
  }
  VehicleState state;
  if (const json* epoch = find(doc, "epoch")) {
    if (!epoch->is_string()) fail(where + ".epoch", "must be a YYYY-MM-DDTHH:MM:SS string");
    try {
      state.epoch = parse_epoch(epoch->get<std::string>());
    } catch (const std::exception& e) {
      fail(where + ".epoch", e.what());
    }
  }
  if (const json* s = find(doc, "state")) {
    if (!s->is_object()) fail(where + ".state", "must be an object");
    auto set = [&](const std::string& key, const json& value) {
      try {
        set_field(state, key, field_value(value, where + ".state." + key));
      } catch (const VehicleError& e) {
        fail(where + ".state." + key, e.what());
      }
    };
    if (const json* ign = find(*s, "ignition")) set("ignition", *ign);
    for (const auto& [key, value] : s->items()) {
      if (key != "ignition") set(key, value);
    }
  }
  config.vehicle = state;

  std::string mode = "manual";
  if (const json* m = find(doc, "mode")) {
    if (*m != "manual" && *m != "demo") fail(where + ".mode", "must be manual or demo");
    mode = m->get<std::string>();
  }
  const json* script = find(doc, "script");
  if (mode == "manual") {
    if (script) fail(where + ".script", "only allowed in demo mode");
    return;
  }
  if (!script || *script == "default") {
    config.script = DemoScript::default_drive();
    return;
  }
  if (!script->is_array()) fail(where + ".script", "must be \"default\" or a keyframe array");
  std::vector<Keyframe> frames;
  for (std::size_t i = 0; i < script->size(); ++i) {
    const std::string at = where + ".script[" + std::to_string(i) + "]";
    const json& k = (*script)[i];
    if (!k.is_object()) fail(at, "must be an object");
    const json& field = require(k, "field", at);
    if (!field.is_string()) fail(at + ".field", "must be a string");
    frames.push_back({parse_time(require(k, "t", at), at + ".t"), field.get<std::string>(),
                      field_value(require(k, "value", at), at + ".value")});
  }
  try {
    config.script = DemoScript(std::move(frames));
  } catch (const VehicleError& e) {
    fail(where + ".script", e.what());
  }
}

void parse_rogue(const json& doc, TestbedConfig& config) {
  if (!doc.is_object()) fail("rogue", "must be an object");
  for (const auto& [k, _] : doc.items()) {
    if (k != "rules" && k != "attack") fail("rogue", "unexpected key '" + k + "'");
  }
  try {
    if (const json* rules = find(doc, "rules")) config.rules = protocol::parse_rules(*rules);
  } catch (const std::exception& e) {
    fail("rogue.rules", e.what());
  }
  try {
    if (const json* attack = find(doc, "attack")) config.attack = protocol::parse_attack(*attack);
  } catch (const std::exception& e) {
    fail("rogue.attack", e.what());
  }
}

std::vector<Micros> sample_times(const ScenarioAssertion& a) {
  if (a.instant()) return {a.from};
  std::vector<Micros> times;
  for (Micros t = a.from; t < a.to; t += kSuperviseInterval) times.push_back(t);
  times.push_back(a.to);
  return times;
}

}  // namespace

std::span<const std::string_view> predicates() { return kPredicates; }

Scenario parse_scenario(const json& doc) {
  if (!doc.is_object()) fail("document", "must be a JSON object");
  for (const auto& [k, _] : doc.items()) {
    if (std::find(std::begin(kTopKeys), std::end(kTopKeys), k) == std::end(kTopKeys)) {
      fail("document", "unexpected key '" + k + "'");
    }
  }
  const json& version = require(doc, "schema_version", "document");
  if (version != kScenarioSchemaVersion) {
    fail("schema_version", "unsupported, expected " + std::to_string(kScenarioSchemaVersion));
  }

  Scenario s;
  const json& name = require(doc, "name", "document");
  if (!name.is_string() || name.get<std::string>().empty()) fail("name", "must be a non-empty string");
  s.name = name.get<std::string>();
  if (const json* d = find(doc, "description")) {
    if (!d->is_string()) fail("description", "must be a string");
    s.description = d->get<std::string>();
  }
  s.duration = parse_time(require(doc, "duration_s", "document"), "duration_s");
  if (s.duration <= Micros{0}) fail("duration_s", "must be positive");

  if (const json* b = find(doc, "bitrate")) {
    if (!b->is_number_integer() || b->get<std::int64_t>() <= 0 || b->get<std::int64_t>() > 1'000'000) {
      fail("bitrate", "must be an integer in (0, 1000000]");
    }
    s.config.bitrate = b->get<std::uint32_t>();
  }
  if (const json* t = find(doc, "topology")) {
    const auto topo = t->is_string() ? parse_topology(t->get<std::string>()) : std::nullopt;
    if (!topo) fail("topology", "must be mitm or direct");
    s.config.topology = *topo;
  }
  if (const json* v = find(doc, "vehicle")) parse_vehicle(*v, s.config);
  if (const json* r = find(doc, "rogue")) {
    if (s.config.topology == Topology::Direct) fail("rogue", "not allowed in the direct topology");
    parse_rogue(*r, s.config);
  }
  try {
    Testbed probe(s.config);
  } catch (const std::exception& e) {
    fail("rogue", e.what());
  }

  if (const json* actions = find(doc, "actions")) {
    if (!actions->is_array()) fail("actions", "must be an array");
    for (std::size_t i = 0; i < actions->size(); ++i) {
      const std::string at = "actions[" + std::to_string(i) + "]";
      const json& a = (*actions)[i];
      if (!a.is_object()) fail(at, "must be an object");
      ScenarioAction action;
      action.t = parse_time(require(a, "t", at), at + ".t");
      if (action.t > s.duration) fail(at + ".t", "after the end of the run");
      try {
        action.command = protocol::parse_command(require(a, "command", at), false);
      } catch (const protocol::CommandError& e) {
        fail(at + ".command", e.what());
      }
      if (protocol::is_live_verb(action.command.verb)) {
        fail(at + ".command", "'" + action.command.verb + "' only applies to a live simulation");
      }
      s.actions.push_back(std::move(action));
    }
    std::stable_sort(s.actions.begin(), s.actions.end(),
                     [](const ScenarioAction& a, const ScenarioAction& b) { return a.t < b.t; });
  }

  if (const json* assertions = find(doc, "assertions")) {
    if (!assertions->is_array()) fail("assertions", "must be an array");
    for (std::size_t i = 0; i < assertions->size(); ++i) {
      const std::string at = "assertions[" + std::to_string(i) + "]";
      const json& a = (*assertions)[i];
      if (!a.is_object()) fail(at, "must be an object");
      ScenarioAssertion out;
      if (const json* t = find(a, "t")) {
        if (find(a, "from") || find(a, "to") || find(a, "mode")) fail(at, "use either t or from/to");
        out.from = out.to = parse_time(*t, at + ".t");
      } else {
        out.from = parse_time(require(a, "from", at), at + ".from");
        out.to = parse_time(require(a, "to", at), at + ".to");
        if (out.to <= out.from) fail(at + ".to", "must be after from");
        if (const json* m = find(a, "mode")) {
          if (*m == "always") out.mode = AssertionMode::Always;
          else if (*m == "eventually") out.mode = AssertionMode::Eventually;
          else fail(at + ".mode", "must be always or eventually");
        }
      }
      if (out.to > s.duration) fail(at, "after the end of the run");
      const json& p = require(a, "predicate", at);
      if (!p.is_string() ||
          std::find(std::begin(kPredicates), std::end(kPredicates), p.get<std::string>()) == std::end(kPredicates)) {
        fail(at + ".predicate", "unknown predicate " + p.dump());
      }
      out.predicate = p.get<std::string>();
      if (const json* args = find(a, "args")) {
        if (!args->is_object()) fail(at + ".args", "must be an object");
        out.args = *args;
      }
      validate_args(out.predicate, out.args, at + ".args");
      for (const auto& [k, _] : a.items()) {
        if (k != "t" && k != "from" && k != "to" && k != "mode" && k != "predicate" && k != "args") {
          fail(at, "unexpected key '" + k + "'");
        }
      }
      s.assertions.push_back(std::move(out));
    }
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ScenarioError(file.string() + ": cannot open");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError(file.string() + ": " + e.what());
  }
  return parse_scenario(doc);
}

bool ScenarioResult::passed() const {
  return action_failures.empty() &&
         std::all_of(assertions.begin(), assertions.end(), [](const AssertionResult& r) { return r.passed; });
}

ScenarioResult run_scenario(const Scenario& scenario) {
  Testbed bed(scenario.config);
  bed.start();

  // time -> (actions, assertion indices) in file order
  std::map<Micros, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> timeline;
  for (std::size_t i = 0; i < scenario.actions.size(); ++i) timeline[scenario.actions[i].t].first.push_back(i);
  for (std::size_t i = 0; i < scenario.assertions.size(); ++i) {
    for (Micros t : sample_times(scenario.assertions[i])) timeline[t].second.push_back(i);
  }

  ScenarioResult result;
  result.assertions.resize(scenario.assertions.size());
  std::vector<bool> decided(scenario.assertions.size(), false);
  for (std::size_t i = 0; i < scenario.assertions.size(); ++i) {
    result.assertions[i].passed = scenario.assertions[i].mode == AssertionMode::Always;
  }

  for (const auto& [t, due] : timeline) {
    bed.run_until(t);
    for (std::size_t i : due.first) {
      const auto& action = scenario.actions[i];
      try {
        protocol::apply(bed, action.command);
      } catch (const protocol::CommandError& e) {
        result.action_failures.push_back({i, t, action.command.verb, e.what()});
      }
    }
    for (std::size_t i : due.second) {
      if (decided[i]) continue;
      const auto& a = scenario.assertions[i];
      auto& r = result.assertions[i];
      const Verdict v = evaluate(a.predicate, a.args, bed);
      r.at = t;
      r.observed = v.observed;
      if (a.mode == AssertionMode::Always && !v.ok) {
        r.passed = false;
        decided[i] = true;
      } else if (a.mode == AssertionMode::Eventually && v.ok) {
        r.passed = true;
        decided[i] = true;
      }
    }
  }
  bed.run_until(scenario.duration);
  result.final_cluster = bed.cluster().snapshot();
  result.final_vehicle = bed.vehicle().state();
  result.lamp_log = bed.cluster().lamp_log();
  return result;
}

std::string format_result(const Scenario& scenario, const ScenarioResult& result) {
  std::ostringstream out;
  out << "scenario " << scenario.name << ": " << to_string(scenario.config.topology) << ", "
      << scenario.config.bitrate << " bit/s, " << seconds(scenario.duration) << " s\n";
  out << printf_string("%3s  %-26s %-20s %-34s %-6s %s\n", "#", "when", "predicate", "args", "result", "observed");
  std::size_t passed = 0;
  for (std::size_t i = 0; i < scenario.assertions.size(); ++i) {
    const auto& a = scenario.assertions[i];
    const auto& r = result.assertions[i];
    passed += r.passed ? 1 : 0;
    std::string when = a.instant() ? "t=" + seconds(a.from)
                                   : std::string(a.mode == AssertionMode::Always ? "always " : "eventually ") +
                                         seconds(a.from) + ".." + seconds(a.to);
    std::string observed = r.observed;
    if (!a.instant()) observed += " @" + seconds(r.at);
    out << printf_string("%3zu  %-26s %-20s %-34s %-6s ", i + 1, when.c_str(), a.predicate.c_str(),
                         a.args.empty() ? "-" : a.args.dump().c_str(), r.passed ? "pass" : "FAIL")
        << observed << "\n";
  }
  for (const auto& f : result.action_failures) {
    out << "action " << f.index + 1 << " (" << f.verb << " at t=" << seconds(f.t) << ") failed: " << f.error << "\n";
  }
  out << (result.passed() ? "PASS" : "FAIL") << ": " << passed << "/" << scenario.assertions.size()
      << " assertions hold";
  if (!result.action_failures.empty()) out << ", " << result.action_failures.size() << " action(s) failed";
  out << "\n";
  return out.str();
}

}  // namespace canwire
