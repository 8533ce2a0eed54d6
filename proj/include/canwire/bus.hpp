// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "canwire/frame.hpp"
#include "canwire/scheduler.hpp"

namespace canwire {

using PortId = std::uint32_t;
using TxToken = std::uint64_t;

inline constexpr std::uint32_t kDefaultBitrate = 100'000;
inline constexpr std::size_t kDefaultQueueDepth = 64;

enum class BusEventKind {
  ArbitrationResolved,
  FrameDelivered,
  BusIdle,
  Overflow,
  ProtocolViolation,
};

const char* to_string(BusEventKind kind);

struct BusEvent {
  Micros time{0};
  BusEventKind kind = BusEventKind::BusIdle;
  CanFrame frame{};
  PortId sender = 0;
  TxToken token = 0;

  friend bool operator==(const BusEvent&, const BusEvent&) = default;
};

using FrameHandler = std::function<void(Micros, const CanFrame&)>;
using TxDoneHandler = std::function<void(Micros, const CanFrame&, TxToken)>;

struct BusStats {
  std::uint64_t submitted = 0;
  std::uint64_t delivered = 0;
  std::uint64_t overflowed = 0;
  std::uint64_t discarded = 0;  // protocol violations and frames dropped on detach
  std::uint64_t queued = 0;
  std::uint64_t in_flight = 0;
};

/// One CAN segment on a shared Scheduler.
///
/// Transmission is atomic once started: arbitration happens only at idle
/// instants, among every frame pending on every port. Losers stay queued. A
/// frame is broadcast to all attached ports except its sender at the end of
/// its wire time, which includes the interframe space.
class VirtualBus {
 public:
  VirtualBus(Scheduler& scheduler, std::uint32_t bitrate = kDefaultBitrate,
             std::size_t queue_depth = kDefaultQueueDepth, std::string name = "can0");

  VirtualBus(const VirtualBus&) = delete;
  VirtualBus& operator=(const VirtualBus&) = delete;

  PortId attach(FrameHandler on_frame, TxDoneHandler on_tx_done = {});
  void detach(PortId port);

  /// Queues a frame. Returns nullopt when the port queue is full; the
  /// overflow is also recorded as a BusEvent.
  std::optional<TxToken> submit(PortId port, const CanFrame& frame);

  /// Advances the shared scheduler and returns events emitted since the
  /// previous call to run_until() or take_events().
  std::vector<BusEvent> run_until(Micros t);
  std::vector<BusEvent> take_events();

  /// Fraction of [from, to) during which a frame occupied the bus.
  double utilization(Micros from, Micros to) const;
  /// Drops busy history that ends at or before `t`; utilization() for
  /// windows before `t` is undefined afterwards.
  void forget_before(Micros t);

  Micros now() const { return scheduler_.now(); }
  Scheduler& scheduler() const { return scheduler_; }
  std::uint32_t bitrate() const { return bitrate_; }
  std::size_t queue_depth() const { return queue_depth_; }
  const std::string& name() const { return name_; }
  bool busy() const { return in_flight_; }
  std::size_t queued(PortId port) const;
  BusStats stats() const;

  /// Event logging can be switched off for long interactive runs.
  void set_event_log(bool enabled) { log_events_ = enabled; }

 private:
  struct Pending {
    CanFrame frame;
    TxToken token;
    std::uint32_t key;
  };
  struct Port {
    FrameHandler on_frame;
    TxDoneHandler on_tx_done;
    std::vector<Pending> queue;
    bool attached = true;
  };

  void emit(BusEventKind kind, const CanFrame& frame, PortId sender, TxToken token);
  void request_arbitration();
  void arbitrate();
  void deliver(PortId sender, Pending pending);
  std::optional<std::size_t> best_in_port(const Port& port) const;

  Scheduler& scheduler_;
  std::uint32_t bitrate_;
  std::size_t queue_depth_;
  std::string name_;

  std::vector<Port> ports_;
  bool in_flight_ = false;
  bool arbitration_scheduled_ = false;
  TxToken next_token_ = 1;

  BusStats stats_;
  std::vector<std::pair<Micros, Micros>> busy_intervals_;
  bool log_events_ = true;
  std::vector<BusEvent> events_;
};

}  // namespace canwire
