// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "canwire/bus.hpp"
#include "canwire/cluster.hpp"
#include "canwire/rogue.hpp"
#include "canwire/vehicle.hpp"

namespace canwire {

enum class Topology { Mitm, Direct };

std::string_view to_string(Topology topology);
std::optional<Topology> parse_topology(std::string_view name);

struct TestbedConfig {
  std::uint32_t bitrate = kDefaultBitrate;
  Topology topology = Topology::Mitm;
  VehicleState vehicle;
  std::optional<DemoScript> script;  // demo mode when set
  std::vector<AttackRule> rules;
  AttackConfig attack;
  bool event_log = false;
};

/// Vehicle on "can0"; the cluster on "can1" behind the rogue bridge, or on
/// "can0" itself in the direct topology.
class Testbed {
 public:
  explicit Testbed(TestbedConfig config = {});

  Testbed(const Testbed&) = delete;
  Testbed& operator=(const Testbed&) = delete;

  /// Powers the cluster and starts the vehicle at the current time.
  void start();
  bool started() const { return started_; }
  void run_until(Micros t);
  Micros now() const { return sched_.now(); }

  Scheduler& scheduler() { return sched_; }
  VirtualBus& vehicle_bus() { return *vehicle_bus_; }
  VirtualBus& cluster_bus() { return cluster_bus_ ? *cluster_bus_ : *vehicle_bus_; }
  const VirtualBus& vehicle_bus() const { return *vehicle_bus_; }
  const VirtualBus& cluster_bus() const { return cluster_bus_ ? *cluster_bus_ : *vehicle_bus_; }
  VehicleEcu& vehicle() { return *vehicle_; }
  const VehicleEcu& vehicle() const { return *vehicle_; }
  ClusterEcu& cluster() { return *cluster_; }
  const ClusterEcu& cluster() const { return *cluster_; }
  /// Null in the direct topology.
  RogueDevice* rogue() { return rogue_.get(); }
  const RogueDevice* rogue() const { return rogue_.get(); }
  const TestbedConfig& config() const { return config_; }

 private:
  TestbedConfig config_;
  Scheduler sched_;
  std::unique_ptr<VirtualBus> vehicle_bus_;
  std::unique_ptr<VirtualBus> cluster_bus_;
  std::unique_ptr<VehicleEcu> vehicle_;
  std::unique_ptr<ClusterEcu> cluster_;
  std::unique_ptr<RogueDevice> rogue_;
  bool started_ = false;
};

}  // namespace canwire
