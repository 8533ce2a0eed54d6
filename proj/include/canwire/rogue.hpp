// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "canwire/bus.hpp"
#include "canwire/signal_catalog.hpp"

namespace canwire {

class RogueError : public std::invalid_argument {
 public:
  enum class Kind { DuplicateId, UnknownId, UnknownSignal, OutOfRange, BadRule };

  RogueError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct PassAction {
  friend bool operator==(const PassAction&, const PassAction&) = default;
};
struct BlockAction {
  friend bool operator==(const BlockAction&, const BlockAction&) = default;
};
/// Re-encodes the listed signals into the passing frame. With `payload` set,
/// the frame body is replaced first; the alive counter nibble is always
/// copied from the original frame.
struct ModifyAction {
  SignalMap signals;
  std::optional<std::vector<std::uint8_t>> payload;
  friend bool operator==(const ModifyAction&, const ModifyAction&) = default;
};
/// Adds `frame` downstream every `period`, or once when period is zero.
/// Upstream frames with the same id still pass.
struct InjectAction {
  CanFrame frame;
  Micros period{0};
  friend bool operator==(const InjectAction&, const InjectAction&) = default;
};

using RuleAction = std::variant<PassAction, ModifyAction, BlockAction, InjectAction>;

struct AttackRule {
  std::uint32_t id = 0;
  RuleAction action;
  friend bool operator==(const AttackRule&, const AttackRule&) = default;
};

std::string_view action_name(const RuleAction& action);

/// The attacker panel: forged gauge values and kill switches.
struct AttackConfig {
  std::optional<double> speed_override;  // km/h, [0, 260]
  std::optional<double> rpm_override;    // [0, 7000]
  bool airbag_disabled = false;
  bool abs_disabled = false;

  bool any() const { return speed_override || rpm_override || airbag_disabled || abs_disabled; }
  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// speed -> modify 0x1A6 and the 0x0CE wheel speeds; rpm -> modify 0x0AA;
/// airbag -> block 0x0D7; abs -> block 0x0C0 and 0x19E.
std::vector<AttackRule> compile(const AttackConfig& config);

CanFrame default_flood_frame();

struct RogueStats {
  std::uint64_t forwarded = 0;
  std::uint64_t modified = 0;
  std::uint64_t blocked = 0;
  std::uint64_t injected = 0;
  std::uint64_t flood_sent = 0;
  std::uint64_t dropped = 0;   // forward queue full
  std::uint64_t reversed = 0;  // cluster side -> vehicle side
  std::uint64_t latency_samples = 0;
  Micros max_latency{0};
  Micros total_latency{0};

  double mean_latency_us() const {
    return latency_samples ? static_cast<double>(total_latency.count()) / static_cast<double>(latency_samples) : 0.0;
  }
};

/// Store-and-forward bridge between a vehicle-side and a cluster-side bus.
///
/// Each frame fully received upstream is handled by the rule for its id and
/// then queued downstream. Rules set through set_attack() take precedence
/// over configure() rules for the same id. Traffic from the cluster side is
/// passed upstream untouched. Added latency is measured per forwarded frame
/// from upstream delivery to downstream delivery.
class RogueDevice {
 public:
  RogueDevice(VirtualBus& upstream, VirtualBus& downstream, const SignalCatalog& cat = catalog());

  RogueDevice(const RogueDevice&) = delete;
  RogueDevice& operator=(const RogueDevice&) = delete;

  /// Validates, then atomically replaces the rule set.
  void configure(std::vector<AttackRule> rules);
  const std::vector<AttackRule>& rules() const { return rules_; }

  void set_attack(const AttackConfig& config);
  const AttackConfig& attack() const { return attack_; }

  /// Effective rule per id, in id order.
  std::vector<AttackRule> active_rules() const;

  void flood(bool active, const CanFrame& frame = default_flood_frame());
  bool flooding() const { return flood_active_; }
  const CanFrame& flood_frame() const { return flood_frame_; }

  void inject_once(const CanFrame& frame);

  const RogueStats& stats() const { return stats_; }
  /// Alive counter of the last upstream frame of a counter-protected id.
  std::optional<std::uint8_t> last_counter(std::uint32_t id) const;
  /// Largest upstream-to-downstream delay seen per forwarded id.
  const std::map<std::uint32_t, Micros>& max_latency_by_id() const { return max_latency_by_id_; }

  PortId upstream_port() const { return up_port_; }
  PortId downstream_port() const { return down_port_; }

 private:
  struct InFlight {
    Micros received;
    std::uint32_t id;
  };

  void validate(const std::vector<AttackRule>& rules) const;
  void rebuild();
  void on_upstream(Micros t, const CanFrame& frame);
  void on_downstream(Micros t, const CanFrame& frame);
  void on_tx_done(Micros t, const CanFrame& frame, TxToken token);
  void forward(Micros t, const CanFrame& frame);
  CanFrame modify(const CanFrame& frame, const ModifyAction& action) const;
  void submit_flood();
  void schedule_inject(const InjectAction& inject, std::uint64_t generation);

  VirtualBus& up_;
  VirtualBus& down_;
  const SignalCatalog& catalog_;
  PortId up_port_;
  PortId down_port_;

  std::vector<AttackRule> rules_;
  AttackConfig attack_;
  std::map<std::uint32_t, RuleAction> effective_;
  std::uint64_t generation_ = 0;

  bool flood_active_ = false;
  CanFrame flood_frame_;
  std::optional<TxToken> flood_token_;

  std::map<TxToken, InFlight> in_flight_;
  RogueStats stats_;
  std::map<std::uint32_t, Micros> max_latency_by_id_;
  std::map<std::uint32_t, std::uint8_t> last_counter_;
};

}  // namespace canwire
