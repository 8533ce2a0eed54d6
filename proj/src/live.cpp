// SPDX-License-Identifier: Apache-2.0
#include "canwire/live.hpp"

#include <cmath>
#include <future>

namespace canwire {

LiveSim::LiveSim(Testbed& bed, double time_scale) : bed_(bed), scale_(time_scale) {
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) {
    throw std::invalid_argument("time scale must be positive");
  }
}

LiveSim::~LiveSim() { stop(); }

void LiveSim::set_sink(Sink sink) {
  std::lock_guard lock(mutex_);
  sink_ = std::move(sink);
}

void LiveSim::start() {
  if (thread_.joinable()) return;
  {
    std::lock_guard lock(mutex_);
    stop_ = false;
  }
  bed_.start();
  thread_ = std::thread([this] { loop(); });
}

void LiveSim::stop() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  wake_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void LiveSim::post(Task task) {
  {
    std::lock_guard lock(mutex_);
    inbox_.push_back(std::move(task));
  }
  wake_.notify_all();
}

void LiveSim::submit(std::shared_ptr<protocol::SeqGuard> guard, std::string text, ReplyFn done) {
  post([this, guard = std::move(guard), text = std::move(text), done = std::move(done)] {
    auto reply = protocol::handle(bed_, text, *guard, this).dump();
    if (done) done(std::move(reply));
  });
}

void LiveSim::call(const std::function<void(Testbed&)>& fn) {
  if (!thread_.joinable()) {
    fn(bed_);
    return;
  }
  std::promise<void> finished;
  auto result = finished.get_future();
  post([&] {
    try {
      fn(bed_);
      finished.set_value();
    } catch (...) {
      finished.set_exception(std::current_exception());
    }
  });
  result.get();
}

std::string LiveSim::latest_telemetry() const {
  std::lock_guard lock(mutex_);
  return latest_;
}

void LiveSim::anchor() {
  anchor_wall_ = Clock::now();
  anchor_virtual_ = bed_.now();
}

void LiveSim::pause() { paused_ = true; }

void LiveSim::resume() {
  if (!paused_) return;
  anchor();
  paused_ = false;
}

void LiveSim::set_time_scale(double scale) {
  anchor();
  scale_ = scale;
}

void LiveSim::publish() {
  const protocol::SimStatus status{paused_, scale_};
  const Micros window = std::chrono::duration_cast<Micros>(kTelemetryPeriod);
  auto text = std::make_shared<const std::string>(
      protocol::telemetry(bed_, status, telemetry_count_, window).dump());
  ++telemetry_count_;
  const Micros keep = bed_.now() - Micros{2'000'000};
  if (keep > Micros{0}) {
    bed_.vehicle_bus().forget_before(keep);
    bed_.cluster_bus().forget_before(keep);
  }
  Sink sink;
  {
    std::lock_guard lock(mutex_);
    latest_ = *text;
    sink = sink_;
  }
  if (sink) sink(std::move(text));
}

void LiveSim::loop() {
  anchor();
  auto next_telemetry = Clock::now();
  while (true) {
    std::vector<Task> batch;
    {
      std::lock_guard lock(mutex_);
      if (stop_) break;
      batch.swap(inbox_);
    }
    for (auto& task : batch) task();

    if (!paused_) {
      const std::chrono::duration<double, std::micro> elapsed = Clock::now() - anchor_wall_;
      const Micros target =
          anchor_virtual_ + Micros{static_cast<std::int64_t>(std::floor(elapsed.count() * scale_))};
      if (target > bed_.now()) bed_.run_until(target);
    }
    sim_time_us_ = bed_.now().count();

    const auto now = Clock::now();
    if (now >= next_telemetry) {
      publish();
      next_telemetry += kTelemetryPeriod;
      if (next_telemetry <= now) next_telemetry = now + kTelemetryPeriod;
    }

    std::unique_lock lock(mutex_);
    wake_.wait_until(lock, std::min(next_telemetry, Clock::now() + kStep),
                     [this] { return stop_ || !inbox_.empty(); });
  }
}

}  // namespace canwire
