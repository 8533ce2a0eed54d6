// SPDX-License-Identifier: Apache-2.0
#include "canwire/vehicle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace canwire {

namespace {

struct FieldDef {
  std::string_view name;
  std::uint32_t id;  // catalog message whose signal bounds the value
  std::string_view signal;
};

constexpr FieldDef kFields[] = {
    {"ignition", 0x130, "ignition"},
    {"rpm", 0x0AA, "rpm"},
    {"speed", 0x1A6, "speed"},
    {"wheel_fl", 0x0CE, "wheel_fl"},
    {"wheel_fr", 0x0CE, "wheel_fr"},
    {"wheel_rl", 0x0CE, "wheel_rl"},
    {"wheel_rr", 0x0CE, "wheel_rr"},
    {"throttle", 0x0AA, "throttle"},
    {"fuel", 0x349, "fuel_left"},
    {"engine_temp", 0x1D0, "engine_temp"},
    {"handbrake", 0x34F, "handbrake"},
    {"side_lights", 0x21A, "side_lights"},
    {"low_beam", 0x21A, "low_beam"},
    {"main_beam", 0x21A, "main_beam"},
    {"seatbelt", 0x581, "driver_unbelted"},
    {"brake_pedal", 0x0A8, "brake_pedal"},
    {"clutch_pedal", 0x0A8, "clutch_pedal"},
    {"battery", 0x3B4, "battery_voltage"},
    {"torque", 0x0A8, "torque"},
    {"vin", 0x380, "vin"},
};

constexpr auto kFieldNames = [] {
  std::array<std::string_view, std::size(kFields)> names{};
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = kFields[i].name;
  return names;
}();

using FieldRef = std::variant<double*, bool*, Ignition*, std::string*>;

const FieldDef& definition(std::string_view name) {
  for (const auto& def : kFields) {
    if (def.name == name) return def;
  }
  throw VehicleError(VehicleError::Kind::UnknownField, "unknown vehicle field '" + std::string(name) + "'");
}

FieldRef field_ref(VehicleState& s, std::string_view name) {
  if (name == "ignition") return &s.ignition;
  if (name == "rpm") return &s.rpm;
  if (name == "speed") return &s.speed;
  if (name == "wheel_fl") return &s.wheels[0];
  if (name == "wheel_fr") return &s.wheels[1];
  if (name == "wheel_rl") return &s.wheels[2];
  if (name == "wheel_rr") return &s.wheels[3];
  if (name == "throttle") return &s.throttle;
  if (name == "fuel") return &s.fuel;
  if (name == "engine_temp") return &s.engine_temp;
  if (name == "handbrake") return &s.handbrake;
  if (name == "side_lights") return &s.side_lights;
  if (name == "low_beam") return &s.low_beam;
  if (name == "main_beam") return &s.main_beam;
  if (name == "seatbelt") return &s.seatbelt;
  if (name == "brake_pedal") return &s.brake_pedal;
  if (name == "clutch_pedal") return &s.clutch_pedal;
  if (name == "battery") return &s.battery;
  if (name == "torque") return &s.torque;
  if (name == "vin") return &s.vin;
  (void)definition(name);
  throw VehicleError(VehicleError::Kind::UnknownField, "unknown vehicle field '" + std::string(name) + "'");
}

std::string describe(const FieldValue& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%g", v);
          return buf;
        } else {
          return "'" + v + "'";
        }
      },
      value);
}

// strict: reject rpm changes while the engine is not running. The demo player
// uses the lenient form, where such values are forced back to 0.
void assign(VehicleState& s, std::string_view name, const FieldValue& value, bool strict) {
  const auto& def = definition(name);
  const auto ref = field_ref(s, name);
  const std::string field(name);
  auto type_error = [&](const char* expected) {
    return VehicleError(VehicleError::Kind::WrongType,
                        "field '" + field + "' expects " + expected + ", got " + describe(value));
  };

  if (auto* number = std::get_if<double*>(&ref)) {
    const auto* v = std::get_if<double>(&value);
    if (!v) throw type_error("a number");
    const auto& spec = *catalog().at(def.id).find(def.signal);
    if (!std::isfinite(*v) || *v < spec.min || *v > spec.max) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "field '%s' value %g outside [%g, %g]", field.c_str(), *v,
                    spec.min, spec.max);
      throw VehicleError(VehicleError::Kind::OutOfRange, buf);
    }
    if (name == "rpm" && s.ignition != Ignition::Running && *v != 0.0) {
      if (strict) {
        throw VehicleError(VehicleError::Kind::NotSettable, "rpm can only be set while the engine is running");
      }
      s.rpm = 0.0;
      return;
    }
    **number = *v;
    if (name == "speed") s.wheels.fill(*v);
    return;
  }
  if (auto* flag = std::get_if<bool*>(&ref)) {
    if (const auto* b = std::get_if<bool>(&value)) {
      **flag = *b;
    } else if (const auto* d = std::get_if<double>(&value); d && (*d == 0.0 || *d == 1.0)) {
      **flag = *d == 1.0;
    } else {
      throw type_error("a boolean");
    }
    return;
  }
  if (auto* ignition = std::get_if<Ignition*>(&ref)) {
    const auto* label = std::get_if<std::string>(&value);
    if (!label) throw type_error("an ignition label");
    const auto parsed = parse_ignition(*label);
    if (!parsed) {
      throw VehicleError(VehicleError::Kind::OutOfRange, "unknown ignition state '" + *label + "'");
    }
    **ignition = *parsed;
    if (*parsed != Ignition::Running) s.rpm = 0.0;
    return;
  }
  auto* text = std::get<std::string*>(ref);
  const auto* v = std::get_if<std::string>(&value);
  if (!v) throw type_error("text");
  const auto& spec = *catalog().at(def.id).find(def.signal);
  if (v->size() > spec.length ||
      !std::all_of(v->begin(), v->end(), [](char c) { return c >= 0x20 && c < 0x7F; })) {
    throw VehicleError(VehicleError::Kind::OutOfRange,
                       "field '" + field + "' takes up to " + std::to_string(spec.length) +
                           " printable characters");
  }
  *text = *v;
}

bool is_one_of(Ignition v, std::initializer_list<Ignition> set) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

bool ignition_on(Ignition v) { return is_one_of(v, {Ignition::IgnitionOn, Ignition::Running}); }

}  // namespace

std::string_view to_string(Ignition ignition) {
  switch (ignition) {
    case Ignition::Off: return "off";
    case Ignition::KeyIn: return "key_in";
    case Ignition::IgnitionOn: return "ignition_on";
    case Ignition::Running: return "running";
  }
  return "off";
}

std::optional<Ignition> parse_ignition(std::string_view label) {
  for (auto v : {Ignition::Off, Ignition::KeyIn, Ignition::IgnitionOn, Ignition::Running}) {
    if (to_string(v) == label) return v;
  }
  return std::nullopt;
}

EpochSeconds parse_epoch(std::string_view iso) {
  using namespace std::chrono;
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int used = 0;
  const std::string text(iso);
  if (std::sscanf(text.c_str(), "%d-%u-%uT%u:%u:%u%n", &y, &mo, &d, &h, &mi, &s, &used) != 6 ||
      !(static_cast<std::size_t>(used) == text.size() ||
        (static_cast<std::size_t>(used) + 1 == text.size() && text.back() == 'Z'))) {
    throw std::invalid_argument("bad timestamp '" + text + "', expected YYYY-MM-DDTHH:MM:SS");
  }
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) {
    throw std::invalid_argument("bad timestamp '" + text + "'");
  }
  const auto t = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
  return t.time_since_epoch().count();
}

std::string format_epoch(EpochSeconds epoch) {
  using namespace std::chrono;
  const sys_seconds t{seconds{epoch}};
  const auto dp = floor<days>(t);
  const year_month_day ymd{dp};
  const hh_mm_ss hms{t - dp};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

std::span<const std::string_view> vehicle_fields() { return kFieldNames; }

void set_field(VehicleState& state, std::string_view field, const FieldValue& value) {
  VehicleState next = state;
  assign(next, field, value, true);
  state = std::move(next);
}

FieldValue get_field(const VehicleState& state, std::string_view field) {
  auto& s = const_cast<VehicleState&>(state);
  return std::visit(
      [](auto* p) -> FieldValue {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Ignition>) {
          return std::string(to_string(*p));
        } else {
          return *p;
        }
      },
      field_ref(s, field));
}

SignalMap signal_view(const VehicleState& s) {
  auto flag = [](bool b) { return b ? 1.0 : 0.0; };
  return SignalMap{
      {"ignition", std::string(to_string(s.ignition))},
      {"rpm", s.rpm},
      {"throttle", s.throttle},
      {"speed", s.speed},
      {"wheel_fl", s.wheels[0]},
      {"wheel_fr", s.wheels[1]},
      {"wheel_rl", s.wheels[2]},
      {"wheel_rr", s.wheels[3]},
      {"fuel_left", s.fuel},
      {"fuel_right", s.fuel},
      {"engine_temp", s.engine_temp},
      {"handbrake", flag(s.handbrake)},
      {"side_lights", flag(s.side_lights)},
      {"low_beam", flag(s.low_beam)},
      {"main_beam", flag(s.main_beam)},
      {"driver_unbelted", flag(!s.seatbelt)},
      {"brake_pedal", flag(s.brake_pedal)},
      {"clutch_pedal", flag(s.clutch_pedal)},
      {"battery_voltage", s.battery},
      {"torque", s.torque},
      {"vin", s.vin},
  };
}

DemoScript::DemoScript(std::vector<Keyframe> keyframes) : keyframes_(std::move(keyframes)) {
  VehicleState scratch;
  scratch.ignition = Ignition::Running;
  Micros last{0};
  for (std::size_t i = 0; i < keyframes_.size(); ++i) {
    const auto& k = keyframes_[i];
    if (k.t < Micros{0} || (i > 0 && k.t < last)) {
      throw VehicleError(VehicleError::Kind::BadScript,
                         "keyframe " + std::to_string(i) + " goes back in time");
    }
    last = k.t;
    try {
      VehicleState probe = scratch;
      assign(probe, k.field, k.value, true);
    } catch (const VehicleError& e) {
      throw VehicleError(VehicleError::Kind::BadScript,
                         "keyframe " + std::to_string(i) + ": " + e.what());
    }
  }
  for (const auto& name : kFieldNames) {
    std::vector<Keyframe> track;
    std::copy_if(keyframes_.begin(), keyframes_.end(), std::back_inserter(track),
                 [&](const Keyframe& k) { return k.field == name; });
    if (!track.empty()) tracks_.emplace_back(std::string(name), std::move(track));
  }
}

DemoScript DemoScript::default_drive() {
  using namespace std::chrono_literals;
  auto at = [](std::chrono::milliseconds t, const char* field, FieldValue v) {
    return Keyframe{std::chrono::duration_cast<Micros>(t), field, std::move(v)};
  };
  return DemoScript({
      at(0ms, "ignition", std::string("key_in")),
      at(500ms, "ignition", std::string("ignition_on")),
      at(2000ms, "ignition", std::string("running")),
      at(2000ms, "rpm", 800.0),
      at(2000ms, "speed", 0.0),
      at(2000ms, "throttle", 5.0),
      at(3000ms, "side_lights", true),
      at(3000ms, "low_beam", true),
      at(12000ms, "rpm", 3000.0),
      at(12000ms, "speed", 90.0),
      at(12000ms, "throttle", 30.0),
  });
}

VehicleState DemoScript::evaluate(const VehicleState& base, Micros t) const {
  VehicleState s = base;
  for (const auto& [field, track] : tracks_) {
    auto after = std::upper_bound(track.begin(), track.end(), t,
                                  [](Micros v, const Keyframe& k) { return v < k.t; });
    if (after == track.begin()) continue;
    const auto& prev = *std::prev(after);
    FieldValue value = prev.value;
    if (after != track.end()) {
      const auto* a = std::get_if<double>(&prev.value);
      const auto* b = std::get_if<double>(&after->value);
      if (a && b) {
        const double f = static_cast<double>((t - prev.t).count()) /
                         static_cast<double>((after->t - prev.t).count());
        value = *a + (*b - *a) * f;
      }
    }
    assign(s, field, value, false);
  }
  return s;
}

std::optional<Micros> DemoScript::next_change_after(Micros t) const {
  auto it = std::upper_bound(keyframes_.begin(), keyframes_.end(), t,
                             [](Micros v, const Keyframe& k) { return v < k.t; });
  if (it == keyframes_.end()) return std::nullopt;
  return it->t;
}

VehicleEcu::VehicleEcu(VirtualBus& bus, VehicleState initial, const SignalCatalog& cat)
    : bus_(bus), port_(bus.attach({})), state_(initial), base_(initial) {
  std::size_t index = 0;
  for (const auto& spec : cat.messages()) {
    entries_.push_back(Entry{&spec, index++, std::nullopt});
  }
  if (state_.ignition != Ignition::Running) state_.rpm = 0.0;
}

void VehicleEcu::start() {
  if (started_) return;
  started_ = true;
  const Micros now = bus_.now();
  if (mode_ == VehicleMode::Demo) {
    script_start_ = now;
    state_ = script_.evaluate(base_, Micros{0});
    if (state_.ignition != Ignition::Running) state_.rpm = 0.0;
  }
  if (state_.ignition != Ignition::Off) activate(now);
  if (ignition_on(state_.ignition)) arm_one_shots(now);
  reschedule();
}

void VehicleEcu::set_manual() { mode_ = VehicleMode::Manual; }

void VehicleEcu::run_demo(DemoScript script) {
  mode_ = VehicleMode::Demo;
  script_ = std::move(script);
  base_ = state_;
  script_start_ = bus_.now();
  if (started_) {
    refresh_demo(bus_.now());
    reschedule();
  }
}

void VehicleEcu::set_state(std::string_view field, const FieldValue& value) {
  if (mode_ != VehicleMode::Manual) {
    throw VehicleError(VehicleError::Kind::WrongMode, "vehicle is in demo mode");
  }
  VehicleState next = state_;
  set_field(next, field, value);
  apply(std::move(next), bus_.now());
  if (started_) reschedule();
}

void VehicleEcu::reset_state(const VehicleState& state) {
  VehicleState next = state;
  if (next.ignition != Ignition::Running) next.rpm = 0.0;
  base_ = next;
  apply(std::move(next), bus_.now());
  if (started_) reschedule();
}

void VehicleEcu::apply(VehicleState next, Micros now) {
  const Ignition before = state_.ignition;
  state_ = std::move(next);
  if (!started_) return;
  const Ignition after = state_.ignition;
  if (after == Ignition::Off) {
    for (auto& e : entries_) e.next_due.reset();
  } else if (before == Ignition::Off) {
    activate(now);
  }
  if (!ignition_on(before) && ignition_on(after)) arm_one_shots(now);
}

void VehicleEcu::activate(Micros now) {
  for (auto& e : entries_) {
    if (!e.spec->one_shot()) e.next_due = now + static_cast<long>(e.index) * kPhaseStep;
  }
}

void VehicleEcu::arm_one_shots(Micros now) {
  for (auto& e : entries_) {
    if (e.spec->one_shot()) e.next_due = now + static_cast<long>(e.index) * kPhaseStep;
  }
}

void VehicleEcu::refresh_demo(Micros now) {
  if (mode_ != VehicleMode::Demo) return;
  apply(script_.evaluate(base_, now - script_start_), now);
}

std::vector<CanFrame> VehicleEcu::tick(Micros now) {
  refresh_demo(now);
  std::vector<CanFrame> out;
  SignalMap view;
  bool have_view = false;
  for (auto& e : entries_) {
    if (!e.next_due || *e.next_due > now) continue;
    if (!have_view) {
      view = signal_view(state_);
      using namespace std::chrono;
      const sys_seconds t{seconds{state_.epoch} + duration_cast<seconds>(now)};
      const auto dp = floor<days>(t);
      const year_month_day ymd{dp};
      const hh_mm_ss hms{t - dp};
      view["hour"] = static_cast<double>(hms.hours().count());
      view["minute"] = static_cast<double>(hms.minutes().count());
      view["second"] = static_cast<double>(hms.seconds().count());
      view["day"] = static_cast<double>(static_cast<unsigned>(ymd.day()));
      view["month"] = static_cast<double>(static_cast<unsigned>(ymd.month()));
      view["year"] = static_cast<double>(static_cast<int>(ymd.year()));
      have_view = true;
    }
    view["brake_force_tick"] = static_cast<double>(e.sent % 256);
    std::optional<std::uint8_t> counter;
    if (e.spec->counter_protected()) {
      counter = e.counter;
      e.counter = next_counter(e.counter);
    }
    out.push_back(encode_frame(*e.spec, view, counter));
    ++e.sent;
    if (e.spec->one_shot()) {
      e.next_due.reset();
    } else {
      while (*e.next_due <= now) *e.next_due += *e.spec->period;
    }
  }
  return out;
}

std::uint64_t VehicleEcu::sent(std::uint32_t id) const {
  for (const auto& e : entries_) {
    if (e.spec->id == id) return e.sent;
  }
  return 0;
}

void VehicleEcu::reschedule() {
  const std::uint64_t generation = ++generation_;
  const Micros now = bus_.now();
  std::optional<Micros> wake;
  for (const auto& e : entries_) {
    if (e.next_due && (!wake || *e.next_due < *wake)) wake = e.next_due;
  }
  if (mode_ == VehicleMode::Demo) {
    if (const auto change = script_.next_change_after(now - script_start_)) {
      const Micros at = script_start_ + *change;
      if (!wake || at < *wake) wake = at;
    }
  }
  if (!wake) return;
  bus_.scheduler().schedule_at(std::max(*wake, now), [this, generation] { on_wake(generation); });
}

void VehicleEcu::on_wake(std::uint64_t generation) {
  if (generation != generation_) return;
  for (const auto& frame : tick(bus_.now())) {
    (void)bus_.submit(port_, frame);
  }
  reschedule();
}

}  // namespace canwire
