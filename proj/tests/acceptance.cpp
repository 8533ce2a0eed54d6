// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one line per criterion, exit status 0 only if all hold.
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "canwire/capture.hpp"
#include "canwire/scenario.hpp"
#include "oracles.hpp"

using namespace canwire;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double ms(Micros t) { return static_cast<double>(t.count()) / 1000.0; }

TestbedConfig running(double speed = 60, double rpm = 2000) {
  TestbedConfig c;
  c.vehicle.ignition = Ignition::Running;
  c.vehicle.speed = speed;
  c.vehicle.wheels = {speed, speed, speed, speed};
  c.vehicle.rpm = rpm;
  return c;
}

void golden(Outcome& o, const char* name) {
  const auto s = load_scenario(std::string(CANWIRE_SCENARIO_DIR) + "/" + name + ".json");
  o.require(run_scenario(s).passed(), std::string("scenarios/") + name + ".json fails");
}

Outcome cluster_spoof() {
  Outcome o;
  Testbed bed(running());
  bed.run_until(5s);
  const VehicleState truth = bed.vehicle().state();
  bed.rogue()->set_attack({260.0, 5500.0, true, true});
  bed.run_until(7s);
  const auto& c = bed.cluster().snapshot();
  o.require(c.speed == 260.0, fmt("displayed speed %g", c.speed));
  o.require(c.rpm == 5500.0, fmt("displayed rpm %g", c.rpm));
  o.require(c.lamps.airbag, "airbag lamp off");
  o.require(c.lamps.abs, "abs lamp off");
  o.require(bed.vehicle().state() == truth, "vehicle truth changed");
  golden(o, "cluster_spoof");
  if (o.pass) {
    o.detail = fmt("at 7 s the cluster shows %g km/h, %g rpm, airbag+abs lamps on; truth stays %g km/h, %g rpm",
                   c.speed, c.rpm, truth.speed, truth.rpm);
  }
  return o;
}

Outcome transparency() {
  Outcome o;
  TestbedConfig direct_cfg = running();
  direct_cfg.topology = Topology::Direct;
  Testbed mitm(running()), direct(direct_cfg);
  mitm.start();
  direct.start();
  bool flagged = false;
  for (Micros t = kSuperviseInterval; t <= 30s; t += kSuperviseInterval) {
    mitm.run_until(t);
    direct.run_until(t);
    flagged |= mitm.cluster().snapshot().flagged() || direct.cluster().snapshot().flagged();
  }
  o.require(mitm.cluster().lamp_log() == direct.cluster().lamp_log(), "lamp transitions differ");
  o.require(mitm.cluster().lamp_log().empty(), "lamp transitions seen");
  o.require(mitm.cluster().snapshot() == direct.cluster().snapshot(), "final snapshots differ");
  o.require(!flagged, "a flag was raised");
  o.require(mitm.cluster().counter_error_events() == 0, "counter errors counted");

  Micros worst{0};
  Micros tightest = Micros::max();
  for (const auto& [id, latency] : mitm.rogue()->max_latency_by_id()) {
    const MessageSpec* spec = catalog().find(id);
    if (!spec || !spec->supervised) continue;
    const Micros deadline = *spec->period * kDeadlineFactor;
    o.require(latency < deadline, fmt("0x%03X latency %.3f ms >= deadline", id, ms(latency)));
    worst = std::max(worst, latency);
    tightest = std::min(tightest, deadline);
  }
  o.require(worst < tightest, "latency not below every deadline");
  golden(o, "transparent");
  if (o.pass) {
    o.detail = fmt("30 s bridged vs direct: no lamp transitions, identical snapshot, no flags; "
                   "max added latency %.3f ms < tightest deadline %.0f ms",
                   ms(worst), ms(tightest));
  }
  return o;
}

Outcome counter_defense() {
  Outcome o;
  const auto& spec = catalog().at(0x0C0);
  const std::vector<std::uint8_t> forged_body{0xA0, 0xAA};

  Testbed a(running());
  a.run_until(2s);
  const auto last = a.rogue()->last_counter(0x0C0);
  o.require(last.has_value(), "no upstream 0x0C0 seen");
  if (last) {
    const std::uint8_t expected = next_counter(*last);
    const std::uint8_t skipped = next_counter(next_counter(expected));
    auto body = forged_body;
    body[*spec.counter_byte] = static_cast<std::uint8_t>((body[*spec.counter_byte] & 0xF0) | skipped);
    a.rogue()->inject_once(make_frame(0x0C0, body));
    a.run_until(2s + 2 * kSuperviseInterval);
    const auto& c = a.cluster().snapshot();
    o.require(c.counter_errors == std::vector<std::uint32_t>{0x0C0}, "counter error flag not set");
    o.require(c.lamps.abs, "abs lamp off after skipped counter");
  }

  Testbed b(running());
  Recorder down(b.cluster_bus());
  b.run_until(2s);
  b.rogue()->configure({AttackRule{0x0C0, ModifyAction{{}, forged_body}}});
  b.run_until(4s);
  std::size_t forged = 0;
  for (const auto& r : down.records()) {
    if (r.frame.id == 0x0C0 && *r.time > 2s + 1ms && (r.frame.data[0] & 0xF0) == 0xA0 && r.frame.data[1] == 0xAA) {
      ++forged;
    }
  }
  o.require(forged >= 9, fmt("only %zu forged 0x0C0 frames reached the cluster", forged));
  o.require(b.cluster().counter_error_events() == 0, "modify path raised a counter error");
  o.require(!b.cluster().snapshot().flagged() && !b.cluster().snapshot().lamps.any(), "modify path raised a flag");
  golden(o, "counter_defense");
  if (o.pass) {
    o.detail = fmt("counter expected+2 sets the 0x0C0 counter error and abs lamp; %zu forged frames with the "
                   "upstream counter raise nothing",
                   forged);
  }
  return o;
}

// Steps `bed` in supervision ticks over `span` and counts samples with warnings or lamps.
std::pair<int, int> quiet_run(Testbed& bed, Micros span) {
  int warned = 0, lit = 0;
  const Micros end = bed.now() + span;
  for (Micros t = bed.now() + kSuperviseInterval; t <= end; t += kSuperviseInterval) {
    bed.run_until(t);
    warned += bed.cluster().snapshot().warnings.empty() ? 0 : 1;
    lit += bed.cluster().snapshot().lamps.any() ? 1 : 0;
  }
  return {warned, lit};
}

Outcome plausibility() {
  Outcome o;

  TestbedConfig ca = running(0, 900);
  ca.vehicle.handbrake = true;
  Testbed a(ca);
  a.run_until(3s);
  o.require(a.cluster().snapshot().warnings.empty(), "warning while stationary");
  a.rogue()->set_attack({100.0, std::nullopt, false, false});
  std::optional<Micros> shown, warned;
  for (Micros t = 3s; t <= 4s && !warned; t += Micros{100}) {
    a.run_until(t);
    const auto& c = a.cluster().snapshot();
    if (!shown && c.speed == 100.0) shown = t;
    if (!c.warnings.empty()) warned = t;
  }
  o.require(shown && warned, "no brake warning");
  Micros reaction{0};
  if (shown && warned) {
    reaction = *warned - *shown;
    o.require(reaction <= kSuperviseInterval, fmt("warning %.1f ms after display", ms(reaction)));
    o.require(a.cluster().snapshot().lamps.brake, "brake lamp off");
  }

  TestbedConfig cb = running();
  cb.vehicle.side_lights = false;
  cb.vehicle.low_beam = false;
  cb.vehicle.main_beam = true;
  Testbed b(cb);
  const auto [warn_b, lit_b] = quiet_run(b, 10s);
  o.require(warn_b == 0 && lit_b == 0, fmt("main beam alone: %d warned, %d lit samples", warn_b, lit_b));

  TestbedConfig cc = running(260, 6000);
  cc.vehicle.fuel = 0;
  Testbed c(cc);
  const auto [warn_c, lit_c] = quiet_run(c, 10s);
  o.require(warn_c == 0 && lit_c == 0, fmt("260 km/h on empty: %d warned, %d lit samples", warn_c, lit_c));
  o.require(c.cluster().snapshot().speed == 260.0 && c.cluster().snapshot().fuel == 0.0,
            "260 km/h / empty tank not displayed");
  golden(o, "plausibility");
  if (o.pass) {
    o.detail = fmt("handbrake warning %.1f ms after 100 km/h is displayed; main beam alone and 260 km/h on an "
                   "empty tank give 0 warnings over 10 s",
                   ms(reaction));
  }
  return o;
}

Outcome schedule() {
  Outcome o;
  Testbed bed(running());
  Recorder rec(bed.vehicle_bus(), Micros{0}, 10s);
  bed.run_until(10s);
  std::map<std::uint32_t, std::size_t> counts;
  for (const auto& r : rec.records()) ++counts[r.frame.id];
  std::size_t periodic = 0, ok = 0;
  for (const auto& spec : catalog().messages()) {
    const std::size_t n = counts[spec.id];
    if (spec.period) {
      ++periodic;
      const auto expected = static_cast<std::size_t>(10s / *spec.period);
      const bool good = n + 1 >= expected && n <= expected + 1;
      ok += good ? 1 : 0;
      o.require(good, fmt("0x%03X sent %zu, expected %zu", spec.id, n, expected));
    } else {
      o.require(n == 1, fmt("one-shot 0x%03X sent %zu", spec.id, n));
    }
  }
  o.require(periodic == 16, fmt("%zu periodic ids in the catalog", periodic));
  if (o.pass) {
    o.detail = fmt("%zu/%zu periodic ids within floor(10 s/period) +-1; 0x380 and 0x39E once each", ok, periodic);
  }
  return o;
}

Outcome dos() {
  Outcome o;
  Testbed bed(running());
  bed.run_until(3s);
  bed.rogue()->flood(true);
  bed.run_until(5s);
  const double u = bed.cluster_bus().utilization(3s + kSuperviseInterval, 5s);
  const ClusterState c = bed.cluster().snapshot();
  std::size_t supervised = 0;
  for (const auto& spec : catalog().messages()) supervised += spec.supervised ? 1 : 0;
  o.require(u >= 0.99, fmt("utilization %.4f", u));
  o.require(c.timeouts.size() == supervised, fmt("%zu of %zu ids timed out", c.timeouts.size(), supervised));
  o.require(c.lamps.airbag && c.lamps.abs, "airbag/abs lamp off during flood");
  bed.rogue()->flood(false);
  std::optional<Micros> clear;
  for (Micros t = 5s; t <= 8s && !clear; t += kSuperviseInterval) {
    bed.run_until(t);
    const auto& s = bed.cluster().snapshot();
    if (!s.flagged() && !s.lamps.any()) clear = t - 5s;
  }
  o.require(clear && *clear <= 2s, "flags did not clear within 2 s");
  golden(o, "dos");
  if (o.pass) {
    o.detail = fmt("flood utilization %.4f, %zu/%zu supervised ids timed out, airbag+abs on; clear %.0f ms "
                   "after the flood stops",
                   u, c.timeouts.size(), supervised, ms(*clear));
  }
  return o;
}

CanFrame random_frame(std::mt19937& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  const bool extended = coin(rng) == 1;
  const bool rtr = std::uniform_int_distribution<int>(0, 9)(rng) == 0;
  const auto id = std::uniform_int_distribution<std::uint32_t>(0, extended ? kMaxExtendedId : kMaxStandardId)(rng);
  std::vector<std::uint8_t> data(std::uniform_int_distribution<std::size_t>(0, 8)(rng));
  for (auto& b : data) b = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 255)(rng));
  if (rtr) return make_remote_frame(id, static_cast<std::uint8_t>(data.size()), extended);
  return make_frame(id, data, extended);
}

Outcome codec() {
  Outcome o;
  std::mt19937 rng(20240101);
  std::size_t round_trips = 0;
  for (int i = 0; i < 10'000; ++i) {
    const auto f = random_frame(rng);
    round_trips += deserialize(serialize(f)) == f ? 1 : 0;
  }
  o.require(round_trips == 10'000, fmt("%zu/10000 round trips", round_trips));

  std::size_t flips = 0, caught = 0;
  for (int i = 0; i < 300; ++i) {
    const auto f = random_frame(rng);
    if (f.rtr || f.dlc == 0) continue;
    const auto bits = serialize(f);
    const auto [first, last] = oracle::data_field_span(bits, f);
    for (std::size_t pos = first; pos < last; ++pos) {
      auto bad = bits;
      bad[pos] ^= 1u;
      ++flips;
      try {
        deserialize(bad);
      } catch (const CodecError&) {
        ++caught;
      }
    }
  }
  o.require(flips > 0 && caught == flips, fmt("%zu/%zu corruptions caught", caught, flips));

  std::size_t crc_ok = 0;
  for (int i = 0; i < 100; ++i) {
    const auto region = crc_region_bits(random_frame(rng));
    crc_ok += crc15(region) == oracle::crc15_long_division(region) ? 1 : 0;
  }
  o.require(crc_ok == 100, fmt("%zu/100 CRCs match the long-division oracle", crc_ok));
  if (o.pass) {
    o.detail = fmt("10000/10000 round trips, %zu/%zu single-bit payload corruptions caught, 100/100 CRCs match "
                   "long division",
                   caught, flips);
  }
  return o;
}

Outcome inference() {
  Outcome o;
  Testbed bed(running());
  Recorder rec(bed.vehicle_bus());
  bed.run_until(60s);
  const auto untimed = strip_times(rec.take());
  const auto estimates = infer_periods(untimed);
  std::size_t periodic = 0, ok = 0;
  for (const auto& spec : catalog().messages()) {
    if (!spec.period) continue;
    ++periodic;
    auto it = std::find_if(estimates.begin(), estimates.end(), [&](const auto& e) { return e.id == spec.id; });
    const bool good = it != estimates.end() && it->snapped && !it->one_shot &&
                      it->period_ms == static_cast<double>(spec.period->count()) / 1000.0;
    ok += good ? 1 : 0;
    o.require(good, fmt("0x%03X inferred %g ms", spec.id, it == estimates.end() ? -1.0 : it->period_ms));
  }
  o.require(periodic == 16 && ok == periodic, fmt("%zu/%zu periodic ids", ok, periodic));
  if (o.pass) {
    o.detail = fmt("%zu/%zu periodic ids snap to the catalog period from a 60 s self-generated untimed log "
                   "(%zu frames, 0x130 = 100 ms anchor)",
                   ok, periodic, untimed.size());
  }
  return o;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"cluster spoof", cluster_spoof},
      {"mitm transparency", transparency},
      {"counter defense", counter_defense},
      {"plausibility fidelity", plausibility},
      {"schedule conformance", schedule},
      {"dos flood", dos},
      {"codec soundness", codec},
      {"period inference", inference},
  };
  int passed = 0, n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    passed += o.pass ? 1 : 0;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
  }
  std::printf("%d/%d criteria pass\n", passed, n);
  return passed == n ? 0 : 1;
}
