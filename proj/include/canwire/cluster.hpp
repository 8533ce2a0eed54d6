// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "canwire/bus.hpp"
#include "canwire/signal_catalog.hpp"

namespace canwire {

enum class Lamp { Airbag, Abs, Brake, Battery, Seatbelt };

inline constexpr Lamp kAllLamps[] = {Lamp::Airbag, Lamp::Abs, Lamp::Brake, Lamp::Battery,
                                     Lamp::Seatbelt};

std::string_view to_string(Lamp lamp);
std::optional<Lamp> parse_lamp(std::string_view name);

struct LampSet {
  bool airbag = false;
  bool abs = false;
  bool brake = false;
  bool battery = false;
  bool seatbelt = false;

  bool get(Lamp lamp) const;
  bool any() const { return airbag || abs || brake || battery || seatbelt; }
  friend bool operator==(const LampSet&, const LampSet&) = default;
};

struct ClusterClock {
  int hour = 0, minute = 0, second = 0, day = 0, month = 0, year = 0;
  friend bool operator==(const ClusterClock&, const ClusterClock&) = default;
};

/// What the cluster shows. A plain value: copying it is the snapshot.
struct ClusterState {
  double speed = 0.0;        // km/h, [0, 260]
  double rpm = 0.0;          // [0, 7000]
  double fuel = 0.0;         // l, [0, 70]
  double temp = 40.0;        // degC, [40, 140]
  std::string ignition = "off";
  std::string vin;
  std::optional<ClusterClock> clock;
  LampSet lamps;
  std::vector<std::uint32_t> counter_errors;  // ascending ids
  std::vector<std::uint32_t> timeouts;        // ascending ids
  std::vector<std::string> warnings;          // plausibility findings

  bool flagged() const { return !counter_errors.empty() || !timeouts.empty(); }
  friend bool operator==(const ClusterState&, const ClusterState&) = default;
};

struct GaugeRange {
  double lo, hi;
};
inline constexpr GaugeRange kSpeedGauge{0.0, 260.0};
inline constexpr GaugeRange kRpmGauge{0.0, 7000.0};
inline constexpr GaugeRange kFuelGauge{0.0, 70.0};
inline constexpr GaugeRange kTempGauge{40.0, 140.0};

inline constexpr double kLowVoltage = 11.5;
inline constexpr double kHandbrakeSpeed = 5.0;
inline constexpr int kDeadlineFactor = 5;
inline constexpr Micros kSuperviseInterval{10'000};
/// Correct increments needed after a counter error before the flag clears.
inline constexpr int kCounterRecovery = 2;

struct LampTransition {
  Micros time{0};
  Lamp lamp = Lamp::Airbag;
  bool on = false;
  friend bool operator==(const LampTransition&, const LampTransition&) = default;
};

/// The instrument cluster node.
///
/// Every catalog message with `supervised` set is expected at least once per
/// 5 x period. Missing it sets a timeout flag; counter-protected ids must
/// carry next_counter(previous). Lamps are derived from the flags:
///   airbag   timeout or counter error on 0x0D7
///   abs      timeout on 0x0C0 or 0x19E, counter error on 0x0C0
///   brake    handbrake (0x34F) engaged while displayed speed > 5 km/h
///   battery  last 0x3B4 voltage below 11.5 V
///   seatbelt driver unbelted (0x581)
/// The cluster has no notion of who sent a frame.
class ClusterEcu {
 public:
  explicit ClusterEcu(Scheduler& scheduler, const SignalCatalog& cat = catalog());

  ClusterEcu(const ClusterEcu&) = delete;
  ClusterEcu& operator=(const ClusterEcu&) = delete;

  PortId attach(VirtualBus& bus);

  /// Starts supervision at the scheduler's current time; deadlines run from
  /// here until the first frame of each id.
  void power_on();

  void on_frame(Micros t, const CanFrame& frame);
  void supervise(Micros t);

  const ClusterState& snapshot() const { return state_; }
  const std::vector<LampTransition>& lamp_log() const { return lamp_log_; }
  std::uint64_t frames_seen() const { return frames_seen_; }
  std::uint64_t counter_error_events() const { return counter_error_events_; }

 private:
  struct Supervision {
    const MessageSpec* spec = nullptr;
    Micros deadline{0};
    Micros last_seen{0};
    bool seen = false;
    bool timed_out = false;
    bool counter_error = false;
    std::optional<std::uint8_t> expected;
    int good_streak = 0;
  };

  Supervision* supervision(std::uint32_t id);
  bool timed_out(std::uint32_t id) const;
  bool counter_error(std::uint32_t id) const;
  void check_counter(Supervision& s, const CanFrame& frame, bool resync);
  void absorb(const MessageSpec& spec, const std::vector<SignalUpdate>& updates);
  void refresh(Micros t);
  void tick();

  Scheduler& scheduler_;
  const SignalCatalog& catalog_;
  std::vector<Supervision> supervised_;
  bool powered_ = false;

  // Last decoded raw values.
  double speed_ = 0.0;
  double rpm_ = 0.0;
  double fuel_ = 0.0;
  double temp_ = kTempGauge.lo;
  bool handbrake_ = false;
  std::optional<double> battery_;
  bool unbelted_ = false;

  ClusterState state_;
  std::vector<LampTransition> lamp_log_;
  std::uint64_t frames_seen_ = 0;
  std::uint64_t counter_error_events_ = 0;
};

}  // namespace canwire
