// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "canwire/capture.hpp"
#include "canwire/control_server.hpp"
#include "canwire/scenario.hpp"

using namespace canwire;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kEnvironment = 3 };

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("canwire");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%H:%M:%S.%e %^%l%$ %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("CANWIRE_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string_view(env) != "off") {
      spdlog::warn("ignoring CANWIRE_LOG_LEVEL={}", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

Micros to_micros(double seconds) { return Micros{std::llround(seconds * 1e6)}; }

Scenario default_scenario() {
  Scenario s;
  s.name = "demo";
  s.duration = to_micros(20);
  s.config.script = DemoScript::default_drive();
  return s;
}

Scenario scenario_or_default(const std::string& file) { return file.empty() ? default_scenario() : load_scenario(file); }

int cmd_run(const std::string& file) {
  const Scenario scenario = load_scenario(file);
  const ScenarioResult result = run_scenario(scenario);
  std::cout << format_result(scenario, result);
  return result.passed() ? kOk : kFailed;
}

int cmd_serve(const std::string& file, const Endpoint& endpoint, double scale, double duration) {
  const Scenario scenario = scenario_or_default(file);

  Testbed bed(scenario.config);
  for (const auto& action : scenario.actions) {
    bed.scheduler().schedule_at(action.t, [&bed, &action] {
      try {
        protocol::apply(bed, action.command);
        spdlog::info("scenario action {} applied", action.command.verb);
      } catch (const std::exception& e) {
        spdlog::error("scenario action {} failed: {}", action.command.verb, e.what());
      }
    });
  }
  LiveSim sim(bed, scale);
  std::unique_ptr<ControlServer> server;
  try {
    server = std::make_unique<ControlServer>(sim, endpoint);
  } catch (const std::system_error& e) {
    spdlog::error("cannot listen on {}:{}: {}", endpoint.host, endpoint.port, e.code().message());
    return kEnvironment;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server->start();
  sim.start();
  spdlog::info("scenario '{}' live at ws://{}:{}{} (time scale {})", scenario.name, endpoint.host, server->port(),
               protocol::kPath, scale);

  const auto started = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    if (duration > 0 && std::chrono::steady_clock::now() - started >= std::chrono::duration<double>(duration)) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server->stop();
  sim.stop();

  const auto& rogue = bed.rogue();
  nlohmann::json summary = {
      {"scenario", scenario.name},
      {"sim_time_s", static_cast<double>(bed.now().count()) / 1e6},
      {"telemetry_frames", sim.telemetry_count()},
      {"vehicle", protocol::vehicle_json(bed.vehicle().state(), bed.vehicle().mode())},
      {"cluster", protocol::cluster_json(bed.cluster().snapshot())},
      {"rogue", rogue ? nlohmann::json{{"attack", protocol::attack_json(rogue->attack())},
                                       {"forwarded", rogue->stats().forwarded},
                                       {"blocked", rogue->stats().blocked},
                                       {"modified", rogue->stats().modified},
                                       {"injected", rogue->stats().injected}}
                      : nlohmann::json(nullptr)},
  };
  std::cout << summary.dump(2) << "\n";
  return kOk;
}

int cmd_record(const std::string& file, double duration, const std::string& out, const std::string& bus_name,
               bool untimed) {
  const Scenario scenario = scenario_or_default(file);
  Testbed bed(scenario.config);
  VirtualBus& bus = bus_name == "cluster" ? bed.cluster_bus() : bed.vehicle_bus();
  Recorder recorder(bus);
  bed.run_until(to_micros(duration));
  auto records = recorder.take();
  if (untimed) records = strip_times(std::move(records));
  write_log_file(out, records);
  std::cout << "recorded " << records.size() << " frames from " << bus.name() << " (" << bus.stats().delivered
            << " delivered) to " << out << "\n";
  return kOk;
}

int cmd_replay(const std::string& log, double speed) {
  auto records = read_log_file(log);
  Scheduler sched;
  VirtualBus bus(sched, kDefaultBitrate, 64, "can1");
  ClusterEcu cluster(sched);
  cluster.attach(bus);
  cluster.power_on();
  Replayer replayer(bus, std::move(records), speed);
  replayer.start();
  bus.run_until(replayer.duration() + kSuperviseInterval);
  std::cout << "replayed " << replayer.submitted() << " frames over " << static_cast<double>(sched.now().count()) / 1e6
            << " s virtual";
  if (replayer.overflowed()) std::cout << ", " << replayer.overflowed() << " dropped on a full queue";
  std::cout << "\n" << protocol::cluster_json(cluster.snapshot()).dump(2) << "\n";
  return kOk;
}

int cmd_infer(const std::string& log) {
  const auto records = read_log_file(log);
  const auto estimates = infer_periods(records);
  std::printf("%-6s %8s %10s %10s %10s  %s\n", "id", "samples", "raw_ms", "period_ms", "catalog", "match");
  std::size_t periodic = 0, matched = 0;
  for (const auto& e : estimates) {
    const MessageSpec* spec = catalog().find(e.id);
    std::string expected = "-";
    if (spec) expected = spec->period ? std::to_string(spec->period->count() / 1000) : "once";
    std::string got = e.one_shot ? "once" : (e.snapped ? std::to_string(static_cast<long>(e.period_ms)) : "?");
    const bool match = spec && got == expected;
    if (spec && spec->period) {
      ++periodic;
      matched += match ? 1 : 0;
    }
    std::printf("%-6s %8zu %10.2f %10s %10s  %s\n", protocol::format_id(e.id).c_str(), e.samples,
                e.raw_period_ms, got.c_str(), expected.c_str(), spec ? (match ? "yes" : "NO") : "unknown id");
  }
  std::printf("%zu/%zu periodic catalog ids match\n", matched, periodic);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"CAN bus man-in-the-middle testbed"};
  app.require_subcommand(1);

  std::string scenario_file, endpoint = "127.0.0.1:3090", out, bus_name = "vehicle", log;
  double time_scale = 1.0, duration = 0.0;
  bool untimed = false;

  auto* run = app.add_subcommand("run", "run a scenario unpaced and check its assertions");
  run->add_option("scenario,--scenario", scenario_file, "scenario JSON file")->required();

  auto* serve = app.add_subcommand("serve", "run a scenario live behind the WebSocket control endpoint");
  serve->add_option("--scenario", scenario_file, "scenario JSON file (default: built-in demo drive)");
  serve->add_option("--endpoint", endpoint, "host:port or ws://host:port/control")->capture_default_str();
  serve->add_option("--time-scale", time_scale, "virtual seconds per wall second")->capture_default_str();
  serve->add_option("--duration", duration, "stop after this many wall seconds (default: until interrupted)");

  auto* record = app.add_subcommand("record", "record bus traffic to a candump log");
  record->add_option("--scenario", scenario_file, "scenario JSON file (default: built-in demo drive)");
  record->add_option("--duration", duration, "virtual seconds to record")->default_val(10.0);
  record->add_option("--out", out, "output log file")->required();
  record->add_option("--bus", bus_name, "vehicle or cluster side")
      ->check(CLI::IsMember({"vehicle", "cluster"}))
      ->capture_default_str();
  record->add_flag("--untimed", untimed, "strip timestamps");

  auto* replay = app.add_subcommand("replay", "replay a timed log into a fresh cluster");
  replay->add_option("log", log, "candump log")->required();
  replay->add_option("--time-scale", time_scale, "replay speed factor")->capture_default_str();

  auto* infer = app.add_subcommand("infer", "infer message periods from a log");
  infer->add_option("log", log, "candump log, timed or not")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  Endpoint ep;
  try {
    if (*serve) ep = parse_endpoint(endpoint);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  if ((*serve || *replay) && !(time_scale > 0)) {
    spdlog::error("--time-scale must be positive");
    return kUsage;
  }
  if (*record && !(duration > 0)) {
    spdlog::error("--duration must be positive");
    return kUsage;
  }

  try {
    if (*run) return cmd_run(scenario_file);
    if (*serve) return cmd_serve(scenario_file, ep, time_scale, duration);
    if (*record) return cmd_record(scenario_file, duration, out, bus_name, untimed);
    if (*replay) return cmd_replay(log, time_scale);
    if (*infer) return cmd_infer(log);
  } catch (const ScenarioError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailed;
  }
  return kUsage;
}
