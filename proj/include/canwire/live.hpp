// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "canwire/protocol.hpp"

namespace canwire {

/// Runs a testbed on its own thread, pacing virtual time to the wall clock.
///
/// Every mutation goes through submit(); commands are applied between
/// simulation steps, so no telemetry frame sees half a command. Telemetry is
/// built on the simulation thread at a fixed wall-clock rate and handed to
/// the sink as an immutable string.
class LiveSim final : public protocol::SimControl {
 public:
  using Sink = std::function<void(std::shared_ptr<const std::string>)>;
  using ReplyFn = std::function<void(std::string)>;

  static constexpr std::chrono::milliseconds kTelemetryPeriod{100};
  static constexpr std::chrono::milliseconds kStep{2};

  explicit LiveSim(Testbed& bed, double time_scale = 1.0);
  ~LiveSim() override;

  LiveSim(const LiveSim&) = delete;
  LiveSim& operator=(const LiveSim&) = delete;

  void set_sink(Sink sink);
  void start();
  void stop();

  /// Thread-safe. `done` runs on the simulation thread.
  void submit(std::shared_ptr<protocol::SeqGuard> guard, std::string text, ReplyFn done);
  /// Thread-safe. Runs `fn` on the simulation thread and waits for it.
  void call(const std::function<void(Testbed&)>& fn);

  std::string latest_telemetry() const;
  std::uint64_t telemetry_count() const { return telemetry_count_; }
  Micros sim_time() const { return Micros{sim_time_us_.load()}; }
  bool paused() const { return paused_; }
  double time_scale() const { return scale_; }

  void pause() override;
  void resume() override;
  void set_time_scale(double scale) override;

 private:
  using Clock = std::chrono::steady_clock;
  using Task = std::function<void()>;

  void loop();
  void post(Task task);
  void publish();
  void anchor();

  Testbed& bed_;
  std::atomic<double> scale_;
  std::atomic<bool> paused_{false};
  std::atomic<std::int64_t> sim_time_us_{0};
  std::atomic<std::uint64_t> telemetry_count_{0};

  Clock::time_point anchor_wall_;
  Micros anchor_virtual_{0};

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::vector<Task> inbox_;
  bool stop_ = false;
  Sink sink_;
  std::string latest_;

  std::thread thread_;
};

}  // namespace canwire
