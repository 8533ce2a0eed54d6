// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <vector>

#include "canwire/frame.hpp"

namespace canwire {

/// Ordering tier for events sharing one timestamp. Node activity (timers,
/// deliveries) at time t always runs before bus arbitration at t, so every
/// frame submitted "at t" contends in the same arbitration round.
enum class Phase : std::uint8_t { Node = 0, Arbitration = 1 };

/// Single-owner discrete-event core with integer microsecond virtual time.
///
/// Events with equal (time, phase) run in scheduling order, which makes every
/// run bit-for-bit reproducible. The command inbox is the only member that
/// may be touched from other threads; it is drained at the start of each
/// run_until() call.
class Scheduler {
 public:
  using Action = std::function<void()>;

  Micros now() const { return now_; }

  void schedule_at(Micros when, Action action, Phase phase = Phase::Node);
  void schedule_after(Micros delay, Action action, Phase phase = Phase::Node) {
    schedule_at(now_ + delay, std::move(action), phase);
  }

  /// Processes every event with time <= t, then sets the clock to t.
  void run_until(Micros t);

  /// Thread-safe. The action runs inside the simulation context before the
  /// next batch of events.
  void post(Action action);
  void drain_inbox();

  std::size_t pending() const { return queue_.size(); }
  std::uint64_t processed() const { return processed_; }

 private:
  struct Entry {
    Micros when;
    Phase phase;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.when != b.when) return a.when > b.when;
      if (a.phase != b.phase) return a.phase > b.phase;
      return a.seq > b.seq;
    }
  };

  Micros now_{0};
  std::uint64_t next_seq_ = 0;
  std::uint64_t processed_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;

  std::mutex inbox_mutex_;
  std::vector<Action> inbox_;
};

}  // namespace canwire
