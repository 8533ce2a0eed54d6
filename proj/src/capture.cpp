// SPDX-License-Identifier: Apache-2.0
#include "canwire/capture.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace canwire {

namespace {

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::optional<std::uint32_t> parse_hex(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::uint32_t v = 0;
  for (char c : s) {
    const int d = hex_digit(c);
    if (d < 0) return std::nullopt;
    v = (v << 4) | static_cast<std::uint32_t>(d);
  }
  return v;
}

Micros parse_time(std::string_view s, std::size_t line_no) {
  const auto dot = s.find('.');
  const auto whole = s.substr(0, dot);
  std::string frac = dot == std::string_view::npos ? "" : std::string(s.substr(dot + 1));
  if (whole.empty() || frac.size() > 6) throw LogParseError(line_no, "bad timestamp '" + std::string(s) + "'");
  frac.resize(6, '0');
  std::int64_t sec = 0, usec = 0;
  auto r1 = std::from_chars(whole.data(), whole.data() + whole.size(), sec);
  auto r2 = std::from_chars(frac.data(), frac.data() + frac.size(), usec);
  if (r1.ec != std::errc{} || r1.ptr != whole.data() + whole.size() || r2.ec != std::errc{} ||
      r2.ptr != frac.data() + frac.size() || sec < 0) {
    throw LogParseError(line_no, "bad timestamp '" + std::string(s) + "'");
  }
  return Micros{sec * 1'000'000 + usec};
}

CanFrame parse_frame(std::string_view s, std::size_t line_no) {
  const auto hash = s.find('#');
  if (hash == std::string_view::npos) throw LogParseError(line_no, "missing '#'");
  const auto id_text = s.substr(0, hash);
  const auto data = s.substr(hash + 1);
  const auto id = parse_hex(id_text);
  if (!id || (id_text.size() != 3 && id_text.size() != 8)) {
    throw LogParseError(line_no, "bad id '" + std::string(id_text) + "'");
  }
  const bool extended = id_text.size() == 8;
  if ((extended && *id > kMaxExtendedId) || (!extended && *id > kMaxStandardId)) {
    throw LogParseError(line_no, "id out of range '" + std::string(id_text) + "'");
  }
  if (!data.empty() && (data[0] == 'R' || data[0] == 'r')) {
    std::uint8_t dlc = 0;
    if (data.size() == 2 && data[1] >= '0' && data[1] <= '8') {
      dlc = static_cast<std::uint8_t>(data[1] - '0');
    } else if (data.size() != 1) {
      throw LogParseError(line_no, "bad remote frame '" + std::string(data) + "'");
    }
    return make_remote_frame(*id, dlc, extended);
  }
  if (data.size() % 2 != 0) throw LogParseError(line_no, "odd number of hex digits");
  if (data.size() > 2 * kMaxDataLength) throw LogParseError(line_no, "more than 8 data bytes");
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = 0; i < data.size(); i += 2) {
    const auto b = parse_hex(data.substr(i, 2));
    if (!b) throw LogParseError(line_no, "bad hex '" + std::string(data) + "'");
    bytes.push_back(static_cast<std::uint8_t>(*b));
  }
  return make_frame(*id, bytes, extended);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Synthetic times in microseconds, kept fractional so deltas between evenly
// spread records are not quantised.
std::vector<double> synthetic_us(std::span<const LogRecord> records, std::uint32_t ref_id, Micros ref_period) {
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].frame.id == ref_id && !records[i].frame.extended) anchors.push_back(i);
  }
  if (anchors.size() < 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "reference id 0x%03X seen %zu times, need 2", ref_id, anchors.size());
    throw CaptureError(CaptureError::Kind::MissingReference, buf);
  }
  const double period = static_cast<double>(ref_period.count());
  std::vector<double> t(records.size());
  for (std::size_t k = 0; k + 1 < anchors.size(); ++k) {
    const std::size_t a = anchors[k], b = anchors[k + 1];
    const double step = period / static_cast<double>(b - a);
    for (std::size_t j = a; j < b; ++j) t[j] = static_cast<double>(k) * period + static_cast<double>(j - a) * step;
  }
  const double head_step = period / static_cast<double>(anchors[1] - anchors[0]);
  for (std::size_t j = 0; j < anchors.front(); ++j) {
    t[j] = -static_cast<double>(anchors.front() - j) * head_step;
  }
  const std::size_t last = anchors.back();
  const double tail_step = period / static_cast<double>(last - anchors[anchors.size() - 2]);
  const double last_t = static_cast<double>(anchors.size() - 1) * period;
  for (std::size_t j = last; j < records.size(); ++j) {
    t[j] = last_t + static_cast<double>(j - last) * tail_step;
  }
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

std::string format_record(const LogRecord& record) {
  std::string out;
  char buf[32];
  if (record.time) {
    const auto us = record.time->count();
    std::snprintf(buf, sizeof buf, "(%lld.%06lld) ", static_cast<long long>(us / 1'000'000),
                  static_cast<long long>(us % 1'000'000));
    out += buf;
  }
  if (!record.channel.empty()) {
    out += record.channel;
    out += ' ';
  }
  const auto& f = record.frame;
  std::snprintf(buf, sizeof buf, f.extended ? "%08X#" : "%03X#", f.id);
  out += buf;
  if (f.rtr) {
    out += 'R';
    if (f.dlc) out += static_cast<char>('0' + f.dlc);
    return out;
  }
  for (auto b : f.payload()) {
    std::snprintf(buf, sizeof buf, "%02X", b);
    out += buf;
  }
  return out;
}

LogRecord parse_record(std::string_view line, std::size_t line_no) {
  auto fields = split_ws(line);
  LogRecord rec;
  std::size_t i = 0;
  if (i < fields.size() && fields[i].front() == '(') {
    const auto f = fields[i];
    if (f.size() < 3 || f.back() != ')') throw LogParseError(line_no, "bad timestamp field");
    rec.time = parse_time(f.substr(1, f.size() - 2), line_no);
    ++i;
  }
  if (fields.size() - i == 2) {
    rec.channel = std::string(fields[i++]);
  }
  if (fields.size() - i != 1) throw LogParseError(line_no, "expected '[(time)] [channel] ID#DATA'");
  rec.frame = parse_frame(fields[i], line_no);
  return rec;
}

std::string write_log(std::span<const LogRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += format_record(r);
    out += '\n';
  }
  return out;
}

std::vector<LogRecord> read_log(std::string_view text) {
  std::vector<LogRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    auto rec = parse_record(line, line_no);
    if (!out.empty()) {
      if (rec.time.has_value() != out.back().time.has_value()) {
        throw LogParseError(line_no, "mixed timed and untimed records");
      }
      if (rec.time && *rec.time < *out.back().time) throw LogParseError(line_no, "timestamp goes backwards");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<LogRecord> read_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_log(ss.str());
}

void write_log_file(const std::string& path, std::span<const LogRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << write_log(records);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<LogRecord> strip_times(std::vector<LogRecord> records) {
  for (auto& r : records) r.time.reset();
  return records;
}

Recorder::Recorder(VirtualBus& bus, Micros from, std::optional<Micros> to)
    : channel_(bus.name()), from_(from), to_(to) {
  bus.attach([this](Micros t, const CanFrame& f) {
    if (t < from_ || (to_ && t >= *to_)) return;
    records_.push_back(LogRecord{t, channel_, f});
  });
}

Replayer::Replayer(VirtualBus& bus, std::vector<LogRecord> records, double speed)
    : bus_(bus), records_(std::move(records)), speed_(speed) {
  if (!(speed_ > 0.0) || !std::isfinite(speed_)) {
    throw CaptureError(CaptureError::Kind::BadSpeed, "replay speed must be positive");
  }
  for (const auto& r : records_) {
    if (!r.time) throw CaptureError(CaptureError::Kind::Untimed, "cannot replay an untimed log; infer periods first");
  }
  port_ = bus_.attach([](Micros, const CanFrame&) {});
}

Micros Replayer::offset(const LogRecord& record) const {
  const auto raw = static_cast<double>((*record.time - *records_.front().time).count());
  return Micros{static_cast<std::int64_t>(std::llround(raw / speed_))};
}

Micros Replayer::duration() const { return records_.empty() ? Micros{0} : offset(records_.back()); }

void Replayer::start() {
  start_ = bus_.now();
  next_ = 0;
  schedule_next();
}

void Replayer::schedule_next() {
  if (done()) return;
  bus_.scheduler().schedule_at(start_ + offset(records_[next_]), [this] {
    const Micros due = start_ + offset(records_[next_]);
    while (!done() && start_ + offset(records_[next_]) == due) {
      if (bus_.submit(port_, records_[next_].frame)) {
        ++submitted_;
      } else {
        ++overflowed_;
      }
      ++next_;
    }
    schedule_next();
  });
}

std::optional<double> snap_period(double ms) {
  std::optional<double> best;
  double best_err = 0.0;
  for (double c : kSnapPeriodsMs) {
    const double err = std::abs(ms - c) / c;
    if (err <= kSnapTolerance && (!best || err < best_err)) {
      best = c;
      best_err = err;
    }
  }
  return best;
}

std::vector<Micros> synthesize_times(std::span<const LogRecord> records, std::uint32_t ref_id, Micros ref_period) {
  std::vector<Micros> out;
  for (double us : synthetic_us(records, ref_id, ref_period)) {
    out.emplace_back(static_cast<std::int64_t>(std::llround(us)));
  }
  return out;
}

std::vector<PeriodEstimate> infer_periods(std::span<const LogRecord> records, std::uint32_t ref_id,
                                          Micros ref_period) {
  const auto t = synthetic_us(records, ref_id, ref_period);
  std::map<std::uint32_t, std::vector<double>> times;
  for (std::size_t i = 0; i < records.size(); ++i) times[records[i].frame.id].push_back(t[i]);

  std::vector<PeriodEstimate> out;
  for (const auto& [id, ts] : times) {
    PeriodEstimate e;
    e.id = id;
    e.samples = ts.size();
    if (ts.size() < 2) {
      e.one_shot = true;
      out.push_back(e);
      continue;
    }
    std::vector<double> deltas;
    for (std::size_t i = 1; i < ts.size(); ++i) deltas.push_back((ts[i] - ts[i - 1]) / 1000.0);
    e.raw_period_ms = median(deltas);
    const auto snapped = snap_period(e.raw_period_ms);
    e.snapped = snapped.has_value();
    e.period_ms = snapped.value_or(e.raw_period_ms);
    const auto within = std::count_if(deltas.begin(), deltas.end(), [&](double d) {
      return std::abs(d - e.period_ms) <= kConfidenceBand * e.period_ms;
    });
    e.confidence = static_cast<double>(within) / static_cast<double>(deltas.size());
    out.push_back(e);
  }
  return out;
}

}  // namespace canwire
