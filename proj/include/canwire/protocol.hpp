// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

#include "canwire/testbed.hpp"

namespace canwire::protocol {

using nlohmann::json;

inline constexpr int kVersion = 1;
inline constexpr std::uint16_t kDefaultPort = 3090;
inline constexpr std::string_view kPath = "/control";

enum class ErrorCode { Malformed, UnknownVerb, OutOfRange, BadSeq, Rejected };

std::string_view to_string(ErrorCode code);

class CommandError : public std::runtime_error {
 public:
  CommandError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

std::span<const std::string_view> verbs();
bool is_live_verb(std::string_view verb);  // sim_pause, sim_resume, set_time_scale

struct Command {
  std::optional<std::int64_t> seq;
  std::string verb;
  json body;
};

/// Checks the envelope only: a JSON object with an integer seq (unless
/// `require_seq` is false), a known verb and, if present, protocol_version 1.
Command parse_command(const json& doc, bool require_seq = true);
Command parse_command(std::string_view text, bool require_seq = true);

/// Enforces strictly increasing seq on one connection.
class SeqGuard {
 public:
  void check(std::int64_t seq);
  std::optional<std::int64_t> last() const { return last_; }

 private:
  std::optional<std::int64_t> last_;
};

/// Pacing hooks; only a live simulation has them.
class SimControl {
 public:
  virtual ~SimControl() = default;
  virtual void pause() = 0;
  virtual void resume() = 0;
  virtual void set_time_scale(double scale) = 0;
};

/// Applies one command. Arguments are fully validated before anything is
/// changed, so a thrown CommandError leaves the testbed untouched.
void apply(Testbed& bed, const Command& cmd, SimControl* live = nullptr);

json ok_reply(std::optional<std::int64_t> seq);
json error_reply(std::optional<std::int64_t> seq, ErrorCode code, std::string_view message);
json hello();

/// Parses, checks seq and applies one client message; always yields a reply.
json handle(Testbed& bed, std::string_view text, SeqGuard& guard, SimControl* live = nullptr);

struct SimStatus {
  bool paused = false;
  double time_scale = 1.0;
};

/// `window` is the trailing virtual interval used for bus utilization.
json telemetry(const Testbed& bed, const SimStatus& status, std::uint64_t index, Micros window);

/// "0x1A6", "1A6" or 422.
std::uint32_t parse_id(const json& v);
std::string format_id(std::uint32_t id);
/// Frames travel as candump notation, e.g. "0C0#F3FF".
CanFrame parse_frame(const json& v);
std::string format_frame(const CanFrame& frame);
std::vector<std::uint8_t> parse_hex_bytes(const json& v);

AttackRule parse_rule(const json& v);
json rule_json(const AttackRule& rule);
std::vector<AttackRule> parse_rules(const json& v);
AttackConfig parse_attack(const json& v);
json attack_json(const AttackConfig& attack);

json vehicle_json(const VehicleState& state, VehicleMode mode);
json cluster_json(const ClusterState& state);

}  // namespace canwire::protocol
