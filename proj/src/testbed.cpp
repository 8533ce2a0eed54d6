// SPDX-License-Identifier: Apache-2.0
#include "canwire/testbed.hpp"

namespace canwire {

std::string_view to_string(Topology topology) {
  return topology == Topology::Mitm ? "mitm" : "direct";
}

std::optional<Topology> parse_topology(std::string_view name) {
  if (name == "mitm") return Topology::Mitm;
  if (name == "direct") return Topology::Direct;
  return std::nullopt;
}

Testbed::Testbed(TestbedConfig config) : config_(std::move(config)) {
  vehicle_bus_ = std::make_unique<VirtualBus>(sched_, config_.bitrate, kDefaultQueueDepth, "can0");
  if (config_.topology == Topology::Mitm) {
    cluster_bus_ = std::make_unique<VirtualBus>(sched_, config_.bitrate, kDefaultQueueDepth, "can1");
  }
  vehicle_bus_->set_event_log(config_.event_log);
  if (cluster_bus_) cluster_bus_->set_event_log(config_.event_log);

  vehicle_ = std::make_unique<VehicleEcu>(*vehicle_bus_, config_.vehicle);
  if (config_.script) vehicle_->run_demo(*config_.script);
  cluster_ = std::make_unique<ClusterEcu>(sched_);
  cluster_->attach(cluster_bus());
  if (cluster_bus_) {
    rogue_ = std::make_unique<RogueDevice>(*vehicle_bus_, *cluster_bus_);
    rogue_->configure(config_.rules);
    rogue_->set_attack(config_.attack);
  } else if (!config_.rules.empty() || config_.attack.any()) {
    throw std::invalid_argument("attack rules need the mitm topology");
  }
}

void Testbed::start() {
  if (started_) return;
  started_ = true;
  cluster_->power_on();
  vehicle_->start();
}

void Testbed::run_until(Micros t) {
  if (!started_) start();
  sched_.run_until(t);
}

}  // namespace canwire
