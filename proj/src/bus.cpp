// SPDX-License-Identifier: Apache-2.0
#include "canwire/bus.hpp"

#include <algorithm>
#include <stdexcept>

namespace canwire {

const char* to_string(BusEventKind kind) {
  switch (kind) {
    case BusEventKind::ArbitrationResolved: return "arbitration";
    case BusEventKind::FrameDelivered: return "delivered";
    case BusEventKind::BusIdle: return "idle";
    case BusEventKind::Overflow: return "overflow";
    case BusEventKind::ProtocolViolation: return "protocol-violation";
  }
  return "?";
}

VirtualBus::VirtualBus(Scheduler& scheduler, std::uint32_t bitrate, std::size_t queue_depth,
                       std::string name)
    : scheduler_(scheduler), bitrate_(bitrate), queue_depth_(queue_depth), name_(std::move(name)) {
  if (bitrate == 0) {
    throw std::invalid_argument("bitrate must be positive");
  }
  if (queue_depth == 0) {
    throw std::invalid_argument("queue depth must be positive");
  }
}

PortId VirtualBus::attach(FrameHandler on_frame, TxDoneHandler on_tx_done) {
  ports_.push_back(Port{std::move(on_frame), std::move(on_tx_done), {}, true});
  return static_cast<PortId>(ports_.size() - 1);
}

void VirtualBus::detach(PortId port) {
  auto& p = ports_.at(port);
  p.attached = false;
  p.on_frame = nullptr;
  p.on_tx_done = nullptr;
  stats_.discarded += p.queue.size();
  p.queue.clear();
}

std::optional<TxToken> VirtualBus::submit(PortId port, const CanFrame& frame) {
  auto& p = ports_.at(port);
  if (!p.attached) {
    throw std::logic_error("submit on a detached port");
  }
  ++stats_.submitted;
  if (p.queue.size() >= queue_depth_) {
    ++stats_.overflowed;
    emit(BusEventKind::Overflow, frame, port, 0);
    return std::nullopt;
  }
  const TxToken token = next_token_++;
  p.queue.push_back(Pending{frame, token, arbitration_key(frame)});
  request_arbitration();
  return token;
}

std::vector<BusEvent> VirtualBus::run_until(Micros t) {
  scheduler_.run_until(t);
  return take_events();
}

std::vector<BusEvent> VirtualBus::take_events() {
  std::vector<BusEvent> out;
  out.swap(events_);
  return out;
}

double VirtualBus::utilization(Micros from, Micros to) const {
  if (to <= from) {
    return 0.0;
  }
  // Intervals are appended in time order and never overlap.
  auto it = std::lower_bound(busy_intervals_.begin(), busy_intervals_.end(), from,
                             [](const auto& iv, Micros t) { return iv.second <= t; });
  Micros busy{0};
  for (; it != busy_intervals_.end() && it->first < to; ++it) {
    busy += std::min(it->second, to) - std::max(it->first, from);
  }
  return static_cast<double>(busy.count()) / static_cast<double>((to - from).count());
}

void VirtualBus::forget_before(Micros t) {
  auto it = std::lower_bound(busy_intervals_.begin(), busy_intervals_.end(), t,
                             [](const auto& iv, Micros when) { return iv.second <= when; });
  busy_intervals_.erase(busy_intervals_.begin(), it);
}

std::size_t VirtualBus::queued(PortId port) const { return ports_.at(port).queue.size(); }

BusStats VirtualBus::stats() const {
  BusStats s = stats_;
  s.queued = 0;
  for (const auto& p : ports_) {
    s.queued += p.queue.size();
  }
  s.in_flight = in_flight_ ? 1 : 0;
  return s;
}

void VirtualBus::emit(BusEventKind kind, const CanFrame& frame, PortId sender, TxToken token) {
  if (log_events_) {
    events_.push_back(BusEvent{scheduler_.now(), kind, frame, sender, token});
  }
}

void VirtualBus::request_arbitration() {
  if (in_flight_ || arbitration_scheduled_) {
    return;
  }
  arbitration_scheduled_ = true;
  scheduler_.schedule_at(scheduler_.now(), [this] { arbitrate(); }, Phase::Arbitration);
}

std::optional<std::size_t> VirtualBus::best_in_port(const Port& port) const {
  if (port.queue.empty()) {
    return std::nullopt;
  }
  // Lowest key wins; equal keys inside one controller go out in FIFO order.
  std::size_t best = 0;
  for (std::size_t i = 1; i < port.queue.size(); ++i) {
    if (port.queue[i].key < port.queue[best].key) {
      best = i;
    }
  }
  return best;
}

void VirtualBus::arbitrate() {
  arbitration_scheduled_ = false;
  if (in_flight_) {
    return;
  }
  for (;;) {
    std::optional<PortId> winner;
    std::size_t winner_index = 0;
    std::vector<PortId> tied;
    for (PortId id = 0; id < ports_.size(); ++id) {
      const auto index = best_in_port(ports_[id]);
      if (!index) {
        continue;
      }
      const auto key = ports_[id].queue[*index].key;
      if (!winner || key < ports_[*winner].queue[winner_index].key) {
        winner = id;
        winner_index = *index;
        tied.clear();
      } else if (key == ports_[*winner].queue[winner_index].key) {
        tied.push_back(id);
      }
    }
    if (!winner) {
      emit(BusEventKind::BusIdle, CanFrame{}, 0, 0);
      return;
    }
    if (!tied.empty()) {
      // Two controllers driving the same arbitration field is illegal on a
      // real bus. Both contenders are discarded and the round is repeated.
      tied.push_back(*winner);
      const auto key = ports_[*winner].queue[winner_index].key;
      for (PortId id : tied) {
        auto& queue = ports_[id].queue;
        const auto index = *best_in_port(ports_[id]);
        if (queue[index].key != key) {
          continue;
        }
        emit(BusEventKind::ProtocolViolation, queue[index].frame, id, queue[index].token);
        queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(index));
        ++stats_.discarded;
      }
      continue;
    }
    auto& queue = ports_[*winner].queue;
    Pending pending = queue[winner_index];
    queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(winner_index));
    emit(BusEventKind::ArbitrationResolved, pending.frame, *winner, pending.token);

    in_flight_ = true;
    const Micros start = scheduler_.now();
    const Micros end = start + frame_time(pending.frame, bitrate_);
    busy_intervals_.emplace_back(start, end);
    const PortId sender = *winner;
    scheduler_.schedule_at(end, [this, sender, pending] { deliver(sender, pending); });
    return;
  }
}

void VirtualBus::deliver(PortId sender, Pending pending) {
  ++stats_.delivered;
  emit(BusEventKind::FrameDelivered, pending.frame, sender, pending.token);
  const Micros t = scheduler_.now();
  // Handlers may attach or submit; iterate over a snapshot of the port count.
  const auto count = ports_.size();
  for (PortId id = 0; id < count; ++id) {
    if (id == sender || !ports_[id].attached || !ports_[id].on_frame) {
      continue;
    }
    auto handler = ports_[id].on_frame;
    handler(t, pending.frame);
  }
  if (ports_[sender].attached && ports_[sender].on_tx_done) {
    auto handler = ports_[sender].on_tx_done;
    handler(t, pending.frame, pending.token);
  }
  in_flight_ = false;
  request_arbitration();
}

}  // namespace canwire
