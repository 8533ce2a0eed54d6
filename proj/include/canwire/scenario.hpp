// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "canwire/protocol.hpp"
#include "canwire/testbed.hpp"

namespace canwire {

inline constexpr int kScenarioSchemaVersion = 1;

/// Raised for documents that do not match the scenario schema.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioAction {
  Micros t{0};
  protocol::Command command;
};

enum class AssertionMode { Always, Eventually };

/// A predicate checked at `from` (instant assertions have from == to), or at
/// every supervision tick in [from, to].
struct ScenarioAssertion {
  Micros from{0};
  Micros to{0};
  AssertionMode mode = AssertionMode::Always;
  std::string predicate;
  nlohmann::json args = nlohmann::json::object();

  bool instant() const { return from == to; }
};

struct Scenario {
  std::string name;
  std::string description;
  Micros duration{0};
  TestbedConfig config;
  std::vector<ScenarioAction> actions;          // time order
  std::vector<ScenarioAssertion> assertions;    // file order
};

/// Throws ScenarioError with a path-like location, e.g. "actions[2].t".
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& file);

std::span<const std::string_view> predicates();

struct AssertionResult {
  bool passed = false;
  Micros at{0};          // first failing sample, or the last sample checked
  std::string observed;
};

struct ActionFailure {
  std::size_t index = 0;
  Micros t{0};
  std::string verb;
  std::string error;
};

struct ScenarioResult {
  std::vector<AssertionResult> assertions;
  std::vector<ActionFailure> action_failures;
  ClusterState final_cluster;
  VehicleState final_vehicle;
  std::vector<LampTransition> lamp_log;

  bool passed() const;
};

/// Runs unpaced to the scenario duration. Actions at time t are applied
/// before assertions sampled at t.
ScenarioResult run_scenario(const Scenario& scenario);

/// Deterministic text table, one row per assertion.
std::string format_result(const Scenario& scenario, const ScenarioResult& result);

}  // namespace canwire
