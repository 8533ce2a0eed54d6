// SPDX-License-Identifier: Apache-2.0
#include "canwire/cluster.hpp"

#include <algorithm>

namespace canwire {

namespace {

double clamp(double v, GaugeRange r) { return std::clamp(v, r.lo, r.hi); }

const SignalValue* find(const std::vector<SignalUpdate>& updates, std::string_view name) {
  for (const auto& u : updates) {
    if (u.name == name) return &u.value;
  }
  return nullptr;
}

double number(const std::vector<SignalUpdate>& updates, std::string_view name) {
  const auto* v = find(updates, name);
  return v ? as_number(*v) : 0.0;
}

}  // namespace

std::string_view to_string(Lamp lamp) {
  switch (lamp) {
    case Lamp::Airbag: return "airbag";
    case Lamp::Abs: return "abs";
    case Lamp::Brake: return "brake";
    case Lamp::Battery: return "battery";
    case Lamp::Seatbelt: return "seatbelt";
  }
  return "?";
}

std::optional<Lamp> parse_lamp(std::string_view name) {
  for (auto lamp : kAllLamps) {
    if (to_string(lamp) == name) return lamp;
  }
  return std::nullopt;
}

bool LampSet::get(Lamp lamp) const {
  switch (lamp) {
    case Lamp::Airbag: return airbag;
    case Lamp::Abs: return abs;
    case Lamp::Brake: return brake;
    case Lamp::Battery: return battery;
    case Lamp::Seatbelt: return seatbelt;
  }
  return false;
}

ClusterEcu::ClusterEcu(Scheduler& scheduler, const SignalCatalog& cat)
    : scheduler_(scheduler), catalog_(cat) {
  for (const auto& spec : cat.messages()) {
    if (spec.supervised && spec.period) {
      Supervision s;
      s.spec = &spec;
      s.deadline = kDeadlineFactor * *spec.period;
      supervised_.push_back(s);
    }
  }
}

PortId ClusterEcu::attach(VirtualBus& bus) {
  return bus.attach([this](Micros t, const CanFrame& f) { on_frame(t, f); });
}

void ClusterEcu::power_on() {
  if (powered_) return;
  powered_ = true;
  const Micros now = scheduler_.now();
  for (auto& s : supervised_) {
    s.last_seen = now;
    s.seen = false;
  }
  scheduler_.schedule_after(kSuperviseInterval, [this] { tick(); });
}

void ClusterEcu::tick() {
  supervise(scheduler_.now());
  scheduler_.schedule_after(kSuperviseInterval, [this] { tick(); });
}

ClusterEcu::Supervision* ClusterEcu::supervision(std::uint32_t id) {
  for (auto& s : supervised_) {
    if (s.spec->id == id) return &s;
  }
  return nullptr;
}

bool ClusterEcu::timed_out(std::uint32_t id) const {
  for (const auto& s : supervised_) {
    if (s.spec->id == id) return s.timed_out;
  }
  return false;
}

bool ClusterEcu::counter_error(std::uint32_t id) const {
  for (const auto& s : supervised_) {
    if (s.spec->id == id) return s.counter_error;
  }
  return false;
}

void ClusterEcu::on_frame(Micros t, const CanFrame& frame) {
  ++frames_seen_;
  const MessageSpec* spec = frame.extended || frame.rtr ? nullptr : catalog_.find(frame.id);
  if (!spec || frame.dlc != spec->dlc) {
    return;
  }
  if (auto* s = supervision(frame.id)) {
    // A frame arriving after its deadline counts as recovery even if the
    // supervision tick has not flagged the gap yet.
    const bool resync = s->timed_out || !s->seen || t - s->last_seen > s->deadline;
    if (spec->counter_protected()) {
      check_counter(*s, frame, resync);
    }
    s->last_seen = t;
    s->seen = true;
    s->timed_out = false;
  }
  absorb(*spec, decode(*spec, frame.payload()));
  refresh(t);
}

void ClusterEcu::check_counter(Supervision& s, const CanFrame& frame, bool resync) {
  const std::uint8_t c = read_counter(*s.spec, frame.payload());
  const bool reserved = c == kReservedCounter;
  if (resync) {
    s.counter_error = false;
    s.good_streak = 0;
  }
  if (reserved) {
    s.counter_error = true;
    s.good_streak = 0;
    s.expected.reset();
    ++counter_error_events_;
    return;
  }
  if (resync || !s.expected || c == *s.expected) {
    if (!resync && s.expected && s.counter_error && ++s.good_streak >= kCounterRecovery) {
      s.counter_error = false;
      s.good_streak = 0;
    }
    s.expected = next_counter(c);
    return;
  }
  s.counter_error = true;
  s.good_streak = 0;
  s.expected = next_counter(c);
  ++counter_error_events_;
}

void ClusterEcu::absorb(const MessageSpec& spec, const std::vector<SignalUpdate>& updates) {
  switch (spec.id) {
    case 0x1A6:
      speed_ = number(updates, "speed");
      break;
    case 0x0AA:
      rpm_ = number(updates, "rpm");
      break;
    case 0x349:
      fuel_ = (number(updates, "fuel_left") + number(updates, "fuel_right")) / 2.0;
      break;
    case 0x1D0:
      temp_ = number(updates, "engine_temp");
      break;
    case 0x34F:
      handbrake_ = number(updates, "handbrake") != 0.0;
      break;
    case 0x3B4:
      battery_ = number(updates, "battery_voltage");
      break;
    case 0x581:
      unbelted_ = number(updates, "driver_unbelted") != 0.0;
      break;
    case 0x130:
      if (const auto* v = find(updates, "ignition")) state_.ignition = std::get<std::string>(*v);
      break;
    case 0x380:
      if (const auto* v = find(updates, "vin")) {
        auto vin = std::get<std::string>(*v);
        vin.erase(vin.find_last_not_of(' ') + 1);
        state_.vin = vin;
      }
      break;
    case 0x39E: {
      ClusterClock c;
      c.hour = static_cast<int>(number(updates, "hour"));
      c.minute = static_cast<int>(number(updates, "minute"));
      c.second = static_cast<int>(number(updates, "second"));
      c.day = static_cast<int>(number(updates, "day"));
      c.month = static_cast<int>(number(updates, "month"));
      c.year = static_cast<int>(number(updates, "year"));
      state_.clock = c;
      break;
    }
    default:
      break;
  }
}

void ClusterEcu::supervise(Micros t) {
  for (auto& s : supervised_) {
    if (!s.timed_out && t - s.last_seen > s.deadline) {
      s.timed_out = true;
    }
  }
  refresh(t);
}

void ClusterEcu::refresh(Micros t) {
  state_.speed = timed_out(0x1A6) ? kSpeedGauge.lo : clamp(speed_, kSpeedGauge);
  state_.rpm = timed_out(0x0AA) ? kRpmGauge.lo : clamp(rpm_, kRpmGauge);
  state_.fuel = clamp(fuel_, kFuelGauge);
  state_.temp = timed_out(0x1D0) ? kTempGauge.lo : clamp(temp_, kTempGauge);

  state_.counter_errors.clear();
  state_.timeouts.clear();
  for (const auto& s : supervised_) {
    if (s.counter_error) state_.counter_errors.push_back(s.spec->id);
    if (s.timed_out) state_.timeouts.push_back(s.spec->id);
  }

  state_.warnings.clear();
  if (handbrake_ && state_.speed > kHandbrakeSpeed) {
    state_.warnings.emplace_back("handbrake_while_moving");
  }

  LampSet lamps;
  lamps.airbag = timed_out(0x0D7) || counter_error(0x0D7);
  lamps.abs = timed_out(0x0C0) || timed_out(0x19E) || counter_error(0x0C0);
  lamps.brake = !state_.warnings.empty();
  lamps.battery = battery_ && *battery_ < kLowVoltage;
  lamps.seatbelt = unbelted_;

  for (auto lamp : kAllLamps) {
    if (lamps.get(lamp) != state_.lamps.get(lamp)) {
      lamp_log_.push_back(LampTransition{t, lamp, lamps.get(lamp)});
    }
  }
  state_.lamps = lamps;
}

}  // namespace canwire
