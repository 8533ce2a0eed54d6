// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <random>

#include "canwire/vehicle.hpp"

using namespace canwire;
using namespace std::chrono_literals;

namespace {

VehicleState running_state() {
  VehicleState s;
  s.ignition = Ignition::Running;
  s.rpm = 2000;
  s.speed = 60;
  s.wheels.fill(60);
  return s;
}

struct Capture {
  std::vector<std::pair<Micros, CanFrame>> frames;
  FrameHandler handler() {
    return [this](Micros t, const CanFrame& f) { frames.emplace_back(t, f); };
  }
  std::vector<CanFrame> of(std::uint32_t id) const {
    std::vector<CanFrame> out;
    for (const auto& [t, f] : frames) {
      if (f.id == id) out.push_back(f);
    }
    return out;
  }
  std::map<std::uint32_t, int> counts() const {
    std::map<std::uint32_t, int> out;
    for (const auto& [t, f] : frames) ++out[f.id];
    return out;
  }
};

struct Rig {
  Scheduler sched;
  VirtualBus bus{sched};
  Capture capture;
  VehicleEcu ecu;
  explicit Rig(VehicleState s = running_state()) : ecu(bus, s) { bus.attach(capture.handler()); }
};

// Drives tick() directly on the 100 us grid every due time lies on.
std::vector<std::pair<Micros, CanFrame>> emissions(VehicleEcu& ecu, Micros until) {
  std::vector<std::pair<Micros, CanFrame>> out;
  for (Micros t{0}; t <= until; t += 100us) {
    for (auto& f : ecu.tick(t)) out.emplace_back(t, f);
  }
  return out;
}

double signal(const CanFrame& f, std::string_view name) {
  for (const auto& u : decode(f.id, f.payload())) {
    if (u.name == name) return as_number(u.value);
  }
  FAIL("no signal " << name);
  return 0;
}

VehicleError::Kind error_kind(auto&& fn) {
  try {
    fn();
  } catch (const VehicleError& e) {
    return e.kind();
  }
  FAIL("no VehicleError thrown");
  return VehicleError::Kind::BadScript;
}

}  // namespace

TEST_CASE("one second from a running start carries the catalog frame counts") {
  Rig rig;
  rig.ecu.start();
  rig.bus.run_until(1s);
  const auto counts = rig.capture.counts();
  CHECK(counts.at(0x0AA) == 100);
  CHECK(counts.at(0x0A8) == 100);
  CHECK(counts.at(0x0CE) == 100);
  CHECK(counts.at(0x130) == 10);
  CHECK(counts.at(0x1A6) == 10);
  CHECK(counts.at(0x0C0) == 5);
  CHECK(counts.at(0x26E) == 5);
  CHECK(counts.at(0x335) == 1);
  CHECK(counts.at(0x380) == 1);
  CHECK(counts.at(0x39E) == 1);
}

TEST_CASE("ten seconds carry exactly one VIN frame") {
  Rig rig;
  rig.ecu.start();
  rig.bus.run_until(10s);
  const auto vin = rig.capture.of(0x380);
  REQUIRE(vin.size() == 1);
  CHECK(std::string(vin[0].data.begin(), vin[0].data.begin() + 7) == "0000000");
}

TEST_CASE("consecutive counter frames step by one modulo 15") {
  Rig rig;
  rig.ecu.start();
  rig.bus.run_until(10s);
  for (std::uint32_t id : {0x0C0u, 0x0D7u}) {
    const auto frames = rig.capture.of(id);
    REQUIRE(frames.size() == 50);
    for (std::size_t i = 1; i < frames.size(); ++i) {
      const int a = frames[i - 1].data[0] & 0x0F;
      const int b = frames[i].data[0] & 0x0F;
      CHECK(b == (a + 1) % 15);
      CHECK((frames[i].data[0] & 0xF0) == 0xF0);
    }
  }
}

TEST_CASE("property: zero jitter and window counts") {
  VehicleState s = running_state();
  Scheduler sched;
  VirtualBus bus(sched);
  VehicleEcu ecu(bus, s);
  ecu.start();
  const auto sent = emissions(ecu, 10s);

  std::map<std::uint32_t, std::vector<Micros>> times;
  for (const auto& [t, f] : sent) times[f.id].push_back(t);
  for (const auto& spec : catalog().messages()) {
    const auto& ts = times[spec.id];
    CAPTURE(spec.id);
    if (spec.one_shot()) {
      CHECK(ts.size() == 1);
      continue;
    }
    REQUIRE(!ts.empty());
    for (std::size_t k = 0; k < ts.size(); ++k) {
      CHECK(ts[k] == ts[0] + static_cast<long>(k) * *spec.period);
    }
  }

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const Micros from{std::uniform_int_distribution<long>(0, 5'000'000)(rng)};
    const Micros width{std::uniform_int_distribution<long>(1, 5'000'000)(rng)};
    for (const auto& spec : catalog().messages()) {
      if (spec.one_shot()) continue;
      const auto& ts = times[spec.id];
      const auto n = std::count_if(ts.begin(), ts.end(),
                                   [&](Micros t) { return t >= from && t < from + width; });
      const long lo = width / *spec.period;
      const long hi = (width.count() + spec.period->count() - 1) / spec.period->count();
      CAPTURE(spec.id);
      CHECK(n >= lo);
      CHECK(n <= hi);
    }
  }
}

TEST_CASE("phase offsets follow catalog order") {
  Scheduler sched;
  VirtualBus bus(sched);
  VehicleEcu ecu(bus, running_state());
  ecu.start();
  const auto messages = catalog().messages();
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto due = ecu.tick(Micros{static_cast<long>(i) * 100});
    REQUIRE(due.size() == 1);
    CHECK(due[0].id == messages[i].id);
  }
  CHECK(ecu.tick(9999us).empty());
  CHECK(ecu.tick(10000us).at(0).id == 0x0A8);
}

TEST_CASE("set_state takes effect in the next emission") {
  Rig rig;
  rig.ecu.start();
  rig.bus.run_until(1500ms);
  rig.ecu.set_state("handbrake", true);
  rig.bus.run_until(2600ms);
  const auto hb = rig.capture.of(0x34F);
  REQUIRE(hb.size() == 3);
  CHECK((hb[1].data[0] & 1) == 0);
  CHECK((hb[2].data[0] & 1) == 1);
  const auto mirror = rig.capture.of(0x1D0);
  CHECK((mirror.back().data[5] & 1) == 1);
}

TEST_CASE("rpm is rejected unless the engine runs") {
  VehicleState s;
  s.ignition = Ignition::Off;
  Rig rig(s);
  CHECK(error_kind([&] { rig.ecu.set_state("rpm", 2000.0); }) == VehicleError::Kind::NotSettable);
  CHECK_NOTHROW(rig.ecu.set_state("rpm", 0.0));
  rig.ecu.set_state("ignition", std::string("running"));
  rig.ecu.set_state("rpm", 2000.0);
  CHECK(rig.ecu.state().rpm == 2000.0);
  rig.ecu.set_state("ignition", std::string("ignition_on"));
  CHECK(rig.ecu.state().rpm == 0.0);
}

TEST_CASE("implausible combinations are produced without complaint") {
  Rig rig;
  rig.ecu.set_state("fuel", 0.0);
  rig.ecu.set_state("speed", 260.0);
  rig.ecu.set_state("main_beam", true);
  rig.ecu.set_state("side_lights", false);
  rig.ecu.start();
  rig.bus.run_until(1s);
  CHECK(signal(rig.capture.of(0x1A6).back(), "speed") == 260.0);
  CHECK(signal(rig.capture.of(0x0CE).back(), "wheel_rl") == 260.0);
  CHECK(signal(rig.capture.of(0x349).back(), "fuel_left") == 0.0);
  CHECK(rig.capture.of(0x21A).back().data[0] == 0x04);
}

TEST_CASE("field validation") {
  VehicleState s = running_state();
  CHECK(error_kind([&] { set_field(s, "warp", 1.0); }) == VehicleError::Kind::UnknownField);
  CHECK(error_kind([&] { set_field(s, "speed", -1.0); }) == VehicleError::Kind::OutOfRange);
  CHECK(error_kind([&] { set_field(s, "speed", true); }) == VehicleError::Kind::WrongType);
  CHECK(error_kind([&] { set_field(s, "throttle", 120.0); }) == VehicleError::Kind::OutOfRange);
  CHECK(error_kind([&] { set_field(s, "ignition", std::string("crank")); }) ==
        VehicleError::Kind::OutOfRange);
  CHECK(error_kind([&] { set_field(s, "vin", std::string("12345678")); }) ==
        VehicleError::Kind::OutOfRange);
  CHECK(error_kind([&] { set_field(s, "handbrake", 0.5); }) == VehicleError::Kind::WrongType);
  CHECK(s == running_state());

  set_field(s, "handbrake", 1.0);
  CHECK(s.handbrake);
  set_field(s, "speed", 42.0);
  CHECK(s.wheels == std::array<double, 4>{42, 42, 42, 42});
  set_field(s, "wheel_fl", 40.0);
  CHECK(std::get<double>(get_field(s, "wheel_fl")) == 40.0);
  CHECK(std::get<std::string>(get_field(s, "ignition")) == "running");
  for (auto name : vehicle_fields()) CHECK_NOTHROW(get_field(s, name));
}

TEST_CASE("demo mode rejects manual updates") {
  Rig rig;
  rig.ecu.run_demo(DemoScript{});
  CHECK(error_kind([&] { rig.ecu.set_state("speed", 1.0); }) == VehicleError::Kind::WrongMode);
  rig.ecu.set_manual();
  CHECK_NOTHROW(rig.ecu.set_state("speed", 1.0));
}

TEST_CASE("empty script keeps the state constant") {
  Rig rig;
  rig.ecu.run_demo(DemoScript{});
  rig.ecu.start();
  rig.bus.run_until(3s);
  CHECK(rig.ecu.state() == running_state());
  for (const auto& f : rig.capture.of(0x0AA)) CHECK(signal(f, "rpm") == 2000.0);
}

TEST_CASE("default demo: rpm frames follow the ramp") {
  Rig rig(VehicleState{});
  rig.ecu.run_demo(DemoScript::default_drive());
  rig.ecu.start();
  rig.bus.run_until(14s);

  // Independent model of the ramp: 0 before the engine runs at 2 s, then
  // 800 -> 3000 rpm linearly until 12 s. 0x0AA is due at 100 us + k * 10 ms.
  auto expected = [](double t) {
    if (t < 2.0) return 0.0;
    if (t >= 12.0) return 3000.0;
    return 800.0 + 2200.0 * (t - 2.0) / 10.0;
  };
  const auto frames = rig.capture.of(0x0AA);
  REQUIRE(frames.size() == 1400);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const double te = 0.0001 + 0.01 * static_cast<double>(k);
    CAPTURE(te);
    CHECK(std::abs(signal(frames[k], "rpm") - expected(te)) <= 0.125 + 1e-9);
  }

  const auto ign = rig.capture.of(0x130);
  CHECK(ign.front().data[0] == 0x41);
  CHECK(ign[4].data[0] == 0x41);   // 0.4005 s
  CHECK(ign[5].data[0] == 0x45);   // 0.5005 s
  CHECK(ign[19].data[0] == 0x45);  // 1.9005 s
  CHECK(ign[20].data[0] == 0x55);  // 2.0005 s
  CHECK(rig.capture.of(0x380).size() == 1);
}

TEST_CASE("default demo: lights step at the first 0x21A after 3 s") {
  Rig rig(VehicleState{});
  rig.ecu.run_demo(DemoScript::default_drive());
  rig.ecu.start();
  rig.bus.run_until(11s);
  const auto lights = rig.capture.of(0x21A);
  REQUIRE(lights.size() == 3);
  CHECK(lights[0].data[0] == 0x00);
  CHECK(lights[1].data[0] == 0x03);
  CHECK(lights[2].data[0] == 0x03);
}

TEST_CASE("scripts must not go back in time") {
  CHECK(error_kind([] {
          DemoScript({{2s, "speed", 10.0}, {1s, "speed", 20.0}});
        }) == VehicleError::Kind::BadScript);
  CHECK(error_kind([] { DemoScript({{1s, "speed", std::string("x")}}); }) ==
        VehicleError::Kind::BadScript);
  CHECK_NOTHROW(DemoScript({{1s, "speed", 10.0}, {1s, "rpm", 900.0}}));
}

TEST_CASE("one-shots repeat once per ignition cycle") {
  VehicleState s;
  Rig rig(s);
  rig.ecu.start();
  rig.bus.run_until(1s);
  CHECK(rig.capture.of(0x380).empty());
  CHECK(rig.capture.counts().empty());
  rig.ecu.set_state("ignition", std::string("key_in"));
  rig.bus.run_until(2s);
  CHECK(rig.capture.of(0x380).empty());
  CHECK(rig.capture.of(0x130).size() == 10);
  rig.ecu.set_state("ignition", std::string("ignition_on"));
  rig.bus.run_until(3s);
  rig.ecu.set_state("ignition", std::string("running"));
  rig.bus.run_until(4s);
  CHECK(rig.capture.of(0x380).size() == 1);
  rig.ecu.set_state("ignition", std::string("off"));
  rig.bus.run_until(5s);
  const auto quiet = rig.capture.frames.size();
  rig.bus.run_until(6s);
  CHECK(rig.capture.frames.size() == quiet);
  rig.ecu.set_state("ignition", std::string("ignition_on"));
  rig.bus.run_until(7s);
  CHECK(rig.capture.of(0x380).size() == 2);
  CHECK(rig.capture.of(0x39E).size() == 2);
}

TEST_CASE("clock message follows the epoch in virtual time") {
  VehicleState s = running_state();
  s.epoch = parse_epoch("2024-02-29T23:59:58");
  Scheduler sched;
  VirtualBus bus(sched);
  VehicleEcu ecu(bus, s);
  ecu.start();
  const auto sent = emissions(ecu, 3s);
  CHECK(sent.size() > 0);
  // First 0x39E goes out at 1.5 ms, still inside the starting second.
  const auto it = std::find_if(sent.begin(), sent.end(), [](const auto& p) { return p.second.id == 0x39E; });
  REQUIRE(it != sent.end());
  const auto& d = it->second.data;
  CHECK(d[0] == 23);
  CHECK(d[1] == 59);
  CHECK(d[2] == 58);
  CHECK(d[3] == 29);
  CHECK(d[4] == 2);
  CHECK((d[5] | (d[6] << 8)) == 2024);

  s.epoch = parse_epoch("2024-02-29T23:59:58");
  Scheduler sched2;
  VirtualBus bus2(sched2);
  VehicleEcu late(bus2, VehicleState{});
  late.reset_state(s);
  late.start();
  CHECK(late.tick(0us).size() == 1);
}

TEST_CASE("epoch parsing") {
  CHECK(parse_epoch("1970-01-01T00:00:00") == 0);
  CHECK(parse_epoch("2024-01-01T08:00:00Z") == 1704096000);
  CHECK(format_epoch(1704096000) == "2024-01-01T08:00:00");
  CHECK(format_epoch(parse_epoch("2031-12-31T23:59:59")) == "2031-12-31T23:59:59");
  CHECK_THROWS(parse_epoch("2024-02-30T00:00:00"));
  CHECK_THROWS(parse_epoch("yesterday"));
  CHECK_THROWS(parse_epoch("2024-01-01T25:00:00"));
}
