// SPDX-License-Identifier: Apache-2.0
#include "canwire/rogue.hpp"

#include <cstdio>
#include <set>

namespace canwire {

namespace {

std::string hex_id(std::uint32_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%03X", id);
  return buf;
}

void check_range(const char* what, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %g outside [%g, %g]", what, v, lo, hi);
    throw RogueError(RogueError::Kind::OutOfRange, buf);
  }
}

}  // namespace

std::string_view action_name(const RuleAction& action) {
  switch (action.index()) {
    case 0: return "pass";
    case 1: return "modify";
    case 2: return "block";
    case 3: return "inject";
  }
  return "?";
}

std::vector<AttackRule> compile(const AttackConfig& config) {
  std::vector<AttackRule> rules;
  if (config.rpm_override) {
    check_range("rpm override", *config.rpm_override, 0.0, 7000.0);
    rules.push_back({0x0AA, ModifyAction{{{"rpm", *config.rpm_override}}, std::nullopt}});
  }
  if (config.abs_disabled) {
    rules.push_back({0x0C0, BlockAction{}});
  }
  if (config.speed_override) {
    const double v = *config.speed_override;
    check_range("speed override", v, 0.0, 260.0);
    rules.push_back({0x0CE, ModifyAction{{{"wheel_fl", v}, {"wheel_fr", v}, {"wheel_rl", v}, {"wheel_rr", v}},
                                         std::nullopt}});
  }
  if (config.airbag_disabled) {
    rules.push_back({0x0D7, BlockAction{}});
  }
  if (config.abs_disabled) {
    rules.push_back({0x19E, BlockAction{}});
  }
  if (config.speed_override) {
    rules.push_back({0x1A6, ModifyAction{{{"speed", *config.speed_override}}, std::nullopt}});
  }
  return rules;
}

CanFrame default_flood_frame() { return make_frame(0x000, std::vector<std::uint8_t>(8, 0x00)); }

RogueDevice::RogueDevice(VirtualBus& upstream, VirtualBus& downstream, const SignalCatalog& cat)
    : up_(upstream), down_(downstream), catalog_(cat), flood_frame_(default_flood_frame()) {
  if (&upstream == &downstream) {
    throw std::invalid_argument("rogue bridge needs two distinct buses");
  }
  if (&upstream.scheduler() != &downstream.scheduler()) {
    throw std::invalid_argument("rogue bridge buses must share one scheduler");
  }
  up_port_ = up_.attach([this](Micros t, const CanFrame& f) { on_upstream(t, f); });
  down_port_ = down_.attach([this](Micros t, const CanFrame& f) { on_downstream(t, f); },
                            [this](Micros t, const CanFrame& f, TxToken token) { on_tx_done(t, f, token); });
}

void RogueDevice::validate(const std::vector<AttackRule>& rules) const {
  std::set<std::uint32_t> ids;
  for (const auto& rule : rules) {
    if (!ids.insert(rule.id).second) {
      throw RogueError(RogueError::Kind::DuplicateId, "more than one rule for " + hex_id(rule.id));
    }
    if (rule.id > kMaxStandardId) {
      throw RogueError(RogueError::Kind::BadRule, "rule id " + hex_id(rule.id) + " is not a standard id");
    }
    if (const auto* m = std::get_if<ModifyAction>(&rule.action)) {
      const MessageSpec* spec = catalog_.find(rule.id);
      if (!spec) {
        throw RogueError(RogueError::Kind::UnknownId, "cannot modify " + hex_id(rule.id) + ": not in catalog");
      }
      if (m->payload && m->payload->size() != spec->dlc) {
        throw RogueError(RogueError::Kind::BadRule,
                         "replacement payload for " + hex_id(rule.id) + " must be " +
                             std::to_string(spec->dlc) + " bytes");
      }
      std::vector<std::uint8_t> scratch(spec->fill.begin(), spec->fill.begin() + spec->dlc);
      for (const auto& [name, value] : m->signals) {
        const SignalSpec* signal = spec->find(name);
        if (!signal) {
          throw RogueError(RogueError::Kind::UnknownSignal,
                           hex_id(rule.id) + " has no signal '" + name + "'");
        }
        try {
          write_signal(*signal, scratch, value);
        } catch (const SignalError& e) {
          throw RogueError(RogueError::Kind::OutOfRange, e.what());
        }
      }
    }
    if (const auto* inj = std::get_if<InjectAction>(&rule.action)) {
      if (inj->frame.id != rule.id || inj->frame.extended) {
        throw RogueError(RogueError::Kind::BadRule, "injected frame id must equal rule id " + hex_id(rule.id));
      }
      if (inj->period < Micros{0}) {
        throw RogueError(RogueError::Kind::BadRule, "inject period must not be negative");
      }
    }
  }
}

void RogueDevice::configure(std::vector<AttackRule> rules) {
  validate(rules);
  rules_ = std::move(rules);
  const std::uint64_t generation = ++generation_;
  rebuild();
  for (const auto& rule : rules_) {
    if (const auto* inj = std::get_if<InjectAction>(&rule.action)) {
      if (inj->period == Micros{0}) {
        inject_once(inj->frame);
      } else {
        schedule_inject(*inj, generation);
      }
    }
  }
}

void RogueDevice::set_attack(const AttackConfig& config) {
  (void)compile(config);  // range check before touching state
  attack_ = config;
  rebuild();
}

void RogueDevice::rebuild() {
  effective_.clear();
  for (const auto& rule : rules_) effective_[rule.id] = rule.action;
  for (const auto& rule : compile(attack_)) effective_[rule.id] = rule.action;
}

std::vector<AttackRule> RogueDevice::active_rules() const {
  std::vector<AttackRule> out;
  for (const auto& [id, action] : effective_) out.push_back({id, action});
  return out;
}

void RogueDevice::schedule_inject(const InjectAction& inject, std::uint64_t generation) {
  up_.scheduler().schedule_after(inject.period, [this, inject, generation] {
    if (generation != generation_) return;
    auto it = effective_.find(inject.frame.id);
    if (it != effective_.end() && std::holds_alternative<InjectAction>(it->second)) {
      inject_once(inject.frame);
    }
    schedule_inject(inject, generation);
  });
}

void RogueDevice::inject_once(const CanFrame& frame) {
  if (down_.submit(down_port_, frame)) {
    ++stats_.injected;
  } else {
    ++stats_.dropped;
  }
}

void RogueDevice::flood(bool active, const CanFrame& frame) {
  const bool was_active = flood_active_;
  flood_active_ = active;
  if (!active) return;
  flood_frame_ = frame;
  if (!was_active && !flood_token_) submit_flood();
}

void RogueDevice::submit_flood() {
  flood_token_ = down_.submit(down_port_, flood_frame_);
}

std::optional<std::uint8_t> RogueDevice::last_counter(std::uint32_t id) const {
  if (auto it = last_counter_.find(id); it != last_counter_.end()) return it->second;
  return std::nullopt;
}

void RogueDevice::on_upstream(Micros t, const CanFrame& frame) {
  if (const MessageSpec* spec = catalog_.find(frame.id);
      spec && spec->counter_byte && !frame.extended && !frame.rtr && frame.dlc == spec->dlc) {
    last_counter_[frame.id] = read_counter(*spec, frame.payload());
  }
  auto it = effective_.find(frame.id);
  if (frame.extended || it == effective_.end()) {
    forward(t, frame);
    return;
  }
  const RuleAction& action = it->second;
  if (std::holds_alternative<BlockAction>(action)) {
    ++stats_.blocked;
  } else if (const auto* m = std::get_if<ModifyAction>(&action)) {
    const CanFrame forged = modify(frame, *m);
    if (forged != frame) ++stats_.modified;
    forward(t, forged);
  } else {
    forward(t, frame);
  }
}

CanFrame RogueDevice::modify(const CanFrame& frame, const ModifyAction& action) const {
  const MessageSpec* spec = catalog_.find(frame.id);
  if (!spec || frame.rtr || frame.dlc != spec->dlc) return frame;
  const auto original = frame.payload();
  std::vector<std::uint8_t> payload(original.begin(), original.end());
  if (action.payload) {
    payload = *action.payload;
    if (spec->counter_byte) {
      auto& byte = payload[*spec->counter_byte];
      byte = static_cast<std::uint8_t>((byte & 0xF0) | (original[*spec->counter_byte] & 0x0F));
    }
  }
  for (const auto& [name, value] : action.signals) {
    write_signal(*spec->find(name), payload, value);
  }
  return make_frame(frame.id, payload);
}

void RogueDevice::forward(Micros t, const CanFrame& frame) {
  // Keep one transmit slot free for the flood frame.
  if (flood_active_ && down_.queued(down_port_) + 1 >= down_.queue_depth()) {
    ++stats_.dropped;
    return;
  }
  const auto token = down_.submit(down_port_, frame);
  if (!token) {
    ++stats_.dropped;
    return;
  }
  ++stats_.forwarded;
  in_flight_.emplace(*token, InFlight{t, frame.id});
}

void RogueDevice::on_downstream(Micros, const CanFrame& frame) {
  if (up_.submit(up_port_, frame)) ++stats_.reversed;
}

void RogueDevice::on_tx_done(Micros t, const CanFrame&, TxToken token) {
  if (flood_token_ && token == *flood_token_) {
    ++stats_.flood_sent;
    flood_token_.reset();
    if (flood_active_) submit_flood();
    return;
  }
  auto it = in_flight_.find(token);
  if (it == in_flight_.end()) return;
  const Micros latency = t - it->second.received;
  ++stats_.latency_samples;
  stats_.total_latency += latency;
  stats_.max_latency = std::max(stats_.max_latency, latency);
  auto& per_id = max_latency_by_id_[it->second.id];
  per_id = std::max(per_id, latency);
  in_flight_.erase(it);
}

}  // namespace canwire
