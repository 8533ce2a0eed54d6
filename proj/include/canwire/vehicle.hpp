// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "canwire/bus.hpp"
#include "canwire/signal_catalog.hpp"

namespace canwire {

class VehicleError : public std::invalid_argument {
 public:
  enum class Kind { UnknownField, WrongType, OutOfRange, NotSettable, WrongMode, BadScript };

  VehicleError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

enum class Ignition { Off, KeyIn, IgnitionOn, Running };

/// Labels match the catalog enum of 0x130/0x26E.
std::string_view to_string(Ignition ignition);
std::optional<Ignition> parse_ignition(std::string_view label);

/// Seconds since 1970-01-01T00:00:00 UTC.
using EpochSeconds = std::int64_t;

/// Accepts "YYYY-MM-DDTHH:MM:SS" (a trailing Z is ignored).
EpochSeconds parse_epoch(std::string_view iso);
std::string format_epoch(EpochSeconds epoch);

struct VehicleState {
  Ignition ignition = Ignition::Off;
  double rpm = 0.0;
  double speed = 0.0;                       // km/h
  std::array<double, 4> wheels{};           // fl, fr, rl, rr km/h
  double throttle = 0.0;                    // %
  double fuel = 45.0;                       // l
  double engine_temp = 90.0;                // degC
  bool handbrake = false;
  bool side_lights = false;
  bool low_beam = false;
  bool main_beam = false;
  bool seatbelt = true;                     // driver belt fastened
  bool brake_pedal = false;
  bool clutch_pedal = false;
  double battery = 14.1;                    // V
  double torque = 0.0;                      // Nm
  std::string vin = "0000000";
  EpochSeconds epoch = 1704096000;          // 2024-01-01T08:00:00

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

using FieldValue = std::variant<bool, double, std::string>;

/// Names accepted by set_field/get_field, in a stable order.
std::span<const std::string_view> vehicle_fields();

/// Validated single-field update. Enforces the state invariants: rpm is only
/// settable while running, leaving the running state zeroes rpm, and setting
/// speed also sets the four wheel speeds.
void set_field(VehicleState& state, std::string_view field, const FieldValue& value);
FieldValue get_field(const VehicleState& state, std::string_view field);

/// The signal values every catalog message draws from. Time-dependent fields
/// (clock, 0x19E tick) are filled by the caller.
SignalMap signal_view(const VehicleState& state);

struct Keyframe {
  Micros t{0};
  std::string field;
  FieldValue value;
  friend bool operator==(const Keyframe&, const Keyframe&) = default;
};

/// Keyframe list. Numeric fields interpolate linearly between consecutive
/// keyframes of the same field; booleans, ignition and text step.
class DemoScript {
 public:
  DemoScript() = default;
  explicit DemoScript(std::vector<Keyframe> keyframes);  // throws VehicleError(BadScript)

  static DemoScript default_drive();

  /// `base` with every scripted field set to its value at `t` (relative to
  /// script start). Fields whose first keyframe lies after `t` keep `base`.
  VehicleState evaluate(const VehicleState& base, Micros t) const;

  /// Earliest keyframe time strictly after `t`, if any.
  std::optional<Micros> next_change_after(Micros t) const;

  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  bool empty() const { return keyframes_.empty(); }

 private:
  std::vector<Keyframe> keyframes_;
  std::vector<std::pair<std::string, std::vector<Keyframe>>> tracks_;  // field order
};

enum class VehicleMode { Manual, Demo };

/// The simulated car: emits the catalog schedule for the current state.
///
/// While the ignition is not off every periodic message is due at
/// activation + index * 100 us and then every period, where index is the
/// message's position in the catalog. One-shot messages go out once each
/// time the ignition enters ignition_on/running from off/key_in.
class VehicleEcu {
 public:
  static constexpr Micros kPhaseStep{100};

  VehicleEcu(VirtualBus& bus, VehicleState initial = {}, const SignalCatalog& cat = catalog());

  VehicleEcu(const VehicleEcu&) = delete;
  VehicleEcu& operator=(const VehicleEcu&) = delete;

  /// Begins emitting at the bus's current time.
  void start();

  void set_manual();
  /// Script time 0 is the moment of this call.
  void run_demo(DemoScript script);
  VehicleMode mode() const { return mode_; }

  /// Manual mode only (VehicleError::WrongMode otherwise).
  void set_state(std::string_view field, const FieldValue& value);
  /// Replaces the whole state, bypassing the mode check.
  void reset_state(const VehicleState& state);

  const VehicleState& state() const { return state_; }

  /// Encodes every message due at or before `now` and advances its schedule.
  /// Called by the node's own timer; exposed for direct testing.
  std::vector<CanFrame> tick(Micros now);

  std::uint64_t sent(std::uint32_t id) const;
  PortId port() const { return port_; }

 private:
  struct Entry {
    const MessageSpec* spec;
    std::size_t index;
    std::optional<Micros> next_due;
    std::uint8_t counter = 0;
    std::uint64_t sent = 0;
  };

  void apply(VehicleState next, Micros now);
  void activate(Micros now);
  void arm_one_shots(Micros now);
  void refresh_demo(Micros now);
  void reschedule();
  void on_wake(std::uint64_t generation);

  VirtualBus& bus_;
  PortId port_;
  VehicleState state_;
  VehicleState base_;
  VehicleMode mode_ = VehicleMode::Manual;
  DemoScript script_;
  Micros script_start_{0};
  std::vector<Entry> entries_;
  bool started_ = false;
  std::uint64_t generation_ = 0;
};

}  // namespace canwire
