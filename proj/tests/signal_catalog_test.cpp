// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "canwire/signal_catalog.hpp"

using namespace canwire;
using namespace std::chrono_literals;

namespace {

struct Row {
  std::uint32_t id;
  std::uint8_t dlc;
  const char* description;
  int period_ms;  // 0 = once
};

// Checked-in copy of the message table.
const Row kTable[] = {
    {0x0A8, 8, "Torque, Clutch and Brake Status", 10},
    {0x0AA, 8, "Engine RPM and Throttle Position", 10},
    {0x0C0, 2, "ABS / Brake Counter", 200},
    {0x0CE, 8, "Individual Wheel Speeds", 10},
    {0x0D7, 2, "Counter (Airbag / Seatbelt related)", 200},
    {0x130, 5, "Ignition and Key Status (Terminal 15)", 100},
    {0x19E, 8, "ABS / Braking Force", 200},
    {0x1A6, 8, "Speed", 100},
    {0x1D0, 8, "Engine Temperature, Pressure Sensor and Handbrake", 200},
    {0x21A, 3, "Lighting Status", 5000},
    {0x26E, 8, "Ignition Status", 200},
    {0x335, 8, "Unknown", 1000},
    {0x349, 5, "Fuel Level Sensors", 200},
    {0x34F, 2, "Handbrake Status", 1000},
    {0x380, 7, "VIN Number", 0},
    {0x39E, 8, "Set Time and Date", 0},
    {0x3B4, 8, "Battery Voltage and Charge Status", 4000},
    {0x581, 8, "Seatbelt Status", 5000},
};

double number(const std::vector<SignalUpdate>& updates, std::string_view name) {
  for (const auto& u : updates) {
    if (u.name == name) return as_number(u.value);
  }
  FAIL("signal missing: " << name);
  return 0;
}

SignalError::Kind error_kind(auto&& fn) {
  try {
    fn();
  } catch (const SignalError& e) {
    return e.kind();
  }
  FAIL("no SignalError thrown");
  return SignalError::Kind::BadValue;
}

}  // namespace

TEST_CASE("catalog matches the message table exactly") {
  const auto messages = catalog().messages();
  REQUIRE(messages.size() == std::size(kTable));
  const std::set<long> allowed{10'000, 100'000, 200'000, 1'000'000, 4'000'000, 5'000'000};
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto& m = messages[i];
    const auto& row = kTable[i];
    CAPTURE(row.id);
    CHECK(m.id == row.id);
    CHECK(m.dlc == row.dlc);
    CHECK(m.description == row.description);
    if (row.period_ms == 0) {
      CHECK(m.one_shot());
    } else {
      REQUIRE(m.period);
      CHECK(*m.period == Micros{row.period_ms * 1000});
      CHECK(allowed.count(m.period->count()) == 1);
    }
  }
}

TEST_CASE("catalog spot checks") {
  CHECK(catalog().at(0x130).dlc == 5);
  CHECK(*catalog().at(0x130).period == 100ms);
  CHECK(catalog().at(0x0AA).dlc == 8);
  CHECK(*catalog().at(0x0AA).period == 10ms);
  CHECK(catalog().at(0x380).one_shot());
  CHECK(error_kind([] { (void)catalog().at(0x123); }) == SignalError::Kind::UnknownId);

  std::set<std::uint32_t> protected_ids;
  for (const auto& m : catalog().messages()) {
    if (m.counter_protected()) protected_ids.insert(m.id);
  }
  CHECK(protected_ids == std::set<std::uint32_t>{0x0C0, 0x0D7});
}

TEST_CASE("encode examples") {
  const auto rpm = encode(0x0AA, {{"rpm", 5500.0}});
  REQUIRE(rpm.size() == 8);
  CHECK(rpm[4] == 0xF0);
  CHECK(rpm[5] == 0x55);

  const auto speed = encode(0x1A6, {{"speed", 0.0}});
  CHECK(speed[0] == 0);
  CHECK(speed[1] == 0);

  const auto counter = encode(0x0C0, {}, 7);
  REQUIRE(counter.size() == 2);
  CHECK(counter[0] == 0xF7);
  CHECK(counter[1] == 0xFF);

  CHECK(encode(0x130, {{"ignition", std::string("running")}})[0] == 0x55);
  CHECK(encode(0x130, {{"ignition", std::string("key_in")}})[0] == 0x41);
  CHECK(encode(0x1D0, {{"engine_temp", 90.0}})[0] == 138);
  CHECK(encode(0x21A, {{"side_lights", 1.0}, {"main_beam", 1.0}})[0] == 0x05);
  CHECK(encode(0x3B4, {{"battery_voltage", 12.6}})[0] == 126);
  CHECK(encode(0x581, {{"driver_unbelted", 1.0}})[0] == 0x10);
  const auto wheels = encode(0x0CE, {{"wheel_rr", 100.0}});
  CHECK(wheels[6] == 0x40);  // 1600 = 0x0640
  CHECK(wheels[7] == 0x06);
  const auto vin = encode(0x380, {{"vin", std::string("AB12345")}});
  CHECK(std::string(vin.begin(), vin.end()) == "AB12345");
  const auto torque = encode(0x0A8, {{"torque", 100.0}, {"clutch_pedal", 1.0}});
  CHECK(torque[1] == 0x80);  // 3200 = 0x0C80
  CHECK(torque[2] == 0x0C);
  CHECK(torque[7] == 0x02);
  const auto date = encode(0x39E, {{"year", 2024.0}, {"month", 5.0}});
  CHECK(date[4] == 5);
  CHECK(date[5] == 0xE8);
  CHECK(date[6] == 0x07);
}

TEST_CASE("encode errors") {
  CHECK(error_kind([] { (void)encode(0x7FF, {}); }) == SignalError::Kind::UnknownId);
  CHECK(error_kind([] { (void)encode(0x1A6, {{"speed", -1.0}}); }) == SignalError::Kind::OutOfRange);
  CHECK(error_kind([] { (void)encode(0x0AA, {{"throttle", 101.0}}); }) ==
        SignalError::Kind::OutOfRange);
  CHECK(error_kind([] { (void)encode(0x1A6, {{"speed", NAN}}); }) == SignalError::Kind::OutOfRange);
  CHECK(error_kind([] { (void)encode(0x34F, {{"handbrake", 0.5}}); }) ==
        SignalError::Kind::OutOfRange);
  CHECK(error_kind([] { (void)encode(0x130, {{"ignition", std::string("cranking")}}); }) ==
        SignalError::Kind::OutOfRange);
  CHECK(error_kind([] { (void)encode(0x380, {{"vin", std::string("TOOLONGVIN")}}); }) ==
        SignalError::Kind::OutOfRange);
  CHECK(error_kind([] { (void)encode(0x1A6, {{"speed", std::string("fast")}}); }) ==
        SignalError::Kind::BadValue);
  CHECK(error_kind([] { (void)encode(0x0C0, {}); }) == SignalError::Kind::InvalidCounter);
  CHECK(error_kind([] { (void)encode(0x1A6, {}, 3); }) == SignalError::Kind::InvalidCounter);
  CHECK(error_kind([] { (void)encode(0x0C0, {}, 15); }) == SignalError::Kind::InvalidCounter);
}

TEST_CASE("decode examples") {
  const auto speed = decode(0x1A6, encode(0x1A6, {{"speed", 260.0}}));
  CHECK(number(speed, "speed") == 260.0);
  CHECK(speed[0].unit == "km/h");

  const std::vector<std::uint8_t> hb{0x01, 0x00};
  CHECK(number(decode(0x34F, hb), "handbrake") == 1.0);

  const std::vector<std::uint8_t> zeros(8, 0);
  const auto engine = decode(0x0AA, zeros);
  CHECK(number(engine, "rpm") == 0.0);
  CHECK(number(engine, "throttle") == 0.0);

  const std::vector<std::uint8_t> ign{0x45, 0, 0, 0, 0};
  CHECK(std::get<std::string>(decode(0x130, ign)[0].value) == "ignition_on");
  const std::vector<std::uint8_t> odd{0x12, 0, 0, 0, 0};
  CHECK(std::get<std::string>(decode(0x130, odd)[0].value) == "0x12");

  CHECK(decode(0x335, zeros).empty());
  CHECK(error_kind([&] { (void)decode(0x1A6, hb); }) == SignalError::Kind::WrongLength);
  CHECK(error_kind([&] { (void)decode(0x123, zeros); }) == SignalError::Kind::UnknownId);
}

TEST_CASE("write_signal leaves neighbouring bits alone") {
  const auto& spec = catalog().at(0x21A);
  std::vector<std::uint8_t> payload{0xFF, 0xAA, 0x55};
  write_signal(*spec.find("low_beam"), payload, 0.0);
  CHECK(payload == std::vector<std::uint8_t>{0xFD, 0xAA, 0x55});
}

TEST_CASE("next_counter") {
  CHECK(next_counter(0) == 1);
  CHECK(next_counter(14) == 0);
  CHECK(error_kind([] { (void)next_counter(15); }) == SignalError::Kind::InvalidCounter);

  std::uint8_t c = 0;
  std::vector<int> seen(16, 0);
  for (int i = 0; i < 15 * 20; ++i) {
    ++seen[c];
    const auto n = next_counter(c);
    CHECK(n == (c + 1) % 15);
    c = n;
  }
  for (int v = 0; v < 15; ++v) CHECK(seen[v] == 20);
  CHECK(seen[15] == 0);
}

TEST_CASE("counter occupies the low nibble only") {
  const auto& spec = catalog().at(0x0D7);
  for (std::uint8_t c = 0; c < kCounterModulus; ++c) {
    const auto payload = encode(spec, {}, c);
    CHECK(payload[0] == (0xF0 | c));
    CHECK(payload[1] == 0xFF);
    CHECK(read_counter(spec, payload) == c);
  }
}

TEST_CASE("property: decode(encode(v)) == v on every signal's quantized range") {
  std::mt19937_64 rng(0xCA7A);
  for (const auto& m : catalog().messages()) {
    for (const auto& s : m.signals) {
      CAPTURE(m.id);
      CAPTURE(s.name);
      for (int trial = 0; trial < 500; ++trial) {
        SignalValue value;
        switch (s.kind) {
          case SignalKind::Scaled: {
            const auto steps = static_cast<std::uint64_t>(std::llround((s.max - s.min) / s.scale));
            const auto k = std::uniform_int_distribution<std::uint64_t>(0, steps)(rng);
            value = s.min + static_cast<double>(k) * s.scale;
            break;
          }
          case SignalKind::Flag:
            value = static_cast<double>(rng() & 1u);
            break;
          case SignalKind::Enum:
            value = s.enum_values[rng() % s.enum_values.size()].first;
            break;
          case SignalKind::Ascii: {
            std::string text;
            for (unsigned i = 0; i < s.length; ++i) text.push_back(static_cast<char>('!' + rng() % 94));
            value = text;
            break;
          }
        }
        const auto counter = m.counter_protected()
                                 ? std::optional<std::uint8_t>(rng() % kCounterModulus)
                                 : std::nullopt;
        const auto payload = encode(m, {{s.name, value}}, counter);
        REQUIRE(payload.size() == m.dlc);
        const auto back = read_signal(s, payload);
        if (const auto* d = std::get_if<double>(&value)) {
          CHECK(as_number(back) == doctest::Approx(*d).epsilon(1e-12));
        } else {
          CHECK(back == value);
        }
      }
    }
  }
}

TEST_CASE("property: every message encodes to exactly dlc bytes from an empty view") {
  for (const auto& m : catalog().messages()) {
    const auto counter = m.counter_protected() ? std::optional<std::uint8_t>(0) : std::nullopt;
    const auto frame = encode_frame(m, {}, counter);
    CHECK(frame.id == m.id);
    CHECK(frame.dlc == m.dlc);
    CHECK_NOTHROW(decode(m, frame.payload()));
  }
}

TEST_CASE("parse rejects malformed catalogs") {
  CHECK_THROWS(SignalCatalog::parse(R"({"schema_version": 2, "messages": []})"));
  CHECK_THROWS(SignalCatalog::parse(R"({"schema_version": 1, "messages": [
    {"id": "100", "dlc": 2, "period_ms": 10, "description": "", "fill": "00", "signals": []}]})"));
  CHECK_THROWS(SignalCatalog::parse(R"({"schema_version": 1, "messages": [
    {"id": "100", "dlc": 1, "period_ms": 10, "description": "", "fill": "00", "signals": [
      {"name": "x", "kind": "scaled", "start_byte": 0, "length": 16, "scale": 1, "offset": 0,
       "unit": "", "min": 0, "max": 1}]}]})"));
  CHECK_THROWS(SignalCatalog::parse(R"({"schema_version": 1, "messages": [
    {"id": "100", "dlc": 0, "period_ms": 10, "description": "", "fill": "", "signals": []},
    {"id": "100", "dlc": 0, "period_ms": 10, "description": "", "fill": "", "signals": []}]})"));
}
