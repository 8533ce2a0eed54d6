// SPDX-License-Identifier: Apache-2.0
#include "canwire/scheduler.hpp"

#include <stdexcept>

namespace canwire {

void Scheduler::schedule_at(Micros when, Action action, Phase phase) {
  if (when < now_) {
    throw std::logic_error("cannot schedule an event in the past");
  }
  queue_.push(Entry{when, phase, next_seq_++, std::move(action)});
}

void Scheduler::run_until(Micros t) {
  if (t < now_) {
    throw std::invalid_argument("run_until target precedes the current clock");
  }
  drain_inbox();
  while (!queue_.empty() && queue_.top().when <= t) {
    Entry entry = queue_.top();
    queue_.pop();
    now_ = entry.when;
    entry.action();
    ++processed_;
  }
  now_ = t;
}

void Scheduler::post(Action action) {
  std::lock_guard lock(inbox_mutex_);
  inbox_.push_back(std::move(action));
}

void Scheduler::drain_inbox() {
  std::vector<Action> batch;
  {
    std::lock_guard lock(inbox_mutex_);
    batch.swap(inbox_);
  }
  for (auto& action : batch) {
    action();
  }
}

}  // namespace canwire
