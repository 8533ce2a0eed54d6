// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "canwire/bus.hpp"

namespace canwire {

/// One line of a candump-style log. `time` is absent in untimed logs.
struct LogRecord {
  std::optional<Micros> time;
  std::string channel;
  CanFrame frame;
  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

class LogParseError : public std::runtime_error {
 public:
  LogParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CaptureError : public std::invalid_argument {
 public:
  enum class Kind { Untimed, BadSpeed, MissingReference };

  CaptureError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// "(<sec>.<usec>) <channel> <ID>#<DATA>". Untimed records drop the
/// parenthesised field; records without a channel drop that too.
std::string format_record(const LogRecord& record);
LogRecord parse_record(std::string_view line, std::size_t line_no = 1);

std::string write_log(std::span<const LogRecord> records);
/// Blank lines are skipped. Timestamps must be non-decreasing, and a log is
/// either fully timed or fully untimed.
std::vector<LogRecord> read_log(std::string_view text);

std::vector<LogRecord> read_log_file(const std::string& path);
void write_log_file(const std::string& path, std::span<const LogRecord> records);

std::vector<LogRecord> strip_times(std::vector<LogRecord> records);

/// Listens on a bus and keeps one record per delivered frame inside
/// [from, to).
class Recorder {
 public:
  explicit Recorder(VirtualBus& bus, Micros from = Micros{0}, std::optional<Micros> to = std::nullopt);

  Recorder(const Recorder&) = delete;
  Recorder& operator=(const Recorder&) = delete;

  const std::vector<LogRecord>& records() const { return records_; }
  std::vector<LogRecord> take() { return std::move(records_); }

 private:
  std::string channel_;
  Micros from_;
  std::optional<Micros> to_;
  std::vector<LogRecord> records_;
};

/// Replays a timed log as a bus node. The first record goes out when start()
/// is called; the rest follow at their recorded offsets divided by `speed`.
class Replayer {
 public:
  Replayer(VirtualBus& bus, std::vector<LogRecord> records, double speed = 1.0);

  Replayer(const Replayer&) = delete;
  Replayer& operator=(const Replayer&) = delete;

  void start();
  bool done() const { return next_ == records_.size(); }
  std::size_t submitted() const { return submitted_; }
  std::size_t overflowed() const { return overflowed_; }
  /// Virtual time offset of the last record after scaling.
  Micros duration() const;
  PortId port() const { return port_; }

 private:
  Micros offset(const LogRecord& record) const;
  void schedule_next();

  VirtualBus& bus_;
  std::vector<LogRecord> records_;
  double speed_;
  PortId port_;
  Micros start_{0};
  std::size_t next_ = 0;
  std::size_t submitted_ = 0;
  std::size_t overflowed_ = 0;
};

inline constexpr std::uint32_t kReferenceId = 0x130;
inline constexpr Micros kReferencePeriod{100'000};
inline constexpr double kSnapTolerance = 0.25;
inline constexpr double kConfidenceBand = 0.20;
inline constexpr double kSnapPeriodsMs[] = {10, 100, 200, 1000, 4000, 5000};

struct PeriodEstimate {
  std::uint32_t id = 0;
  bool one_shot = false;
  double period_ms = 0.0;      // snapped when `snapped`, else the raw median
  double raw_period_ms = 0.0;  // median of synthetic deltas
  bool snapped = false;
  std::size_t samples = 0;     // occurrences of the id
  double confidence = 0.0;     // share of deltas within 20% of period_ms
  friend bool operator==(const PeriodEstimate&, const PeriodEstimate&) = default;
};

/// Nearest candidate within 25%, if any.
std::optional<double> snap_period(double ms);

/// Assigns synthetic times to an untimed log: the k-th occurrence of
/// `ref_id` sits at k * ref_period and records between two anchors are
/// spread evenly across the gap. Records before the first or after the last
/// anchor use the spacing of the nearest gap. Existing times are ignored.
std::vector<Micros> synthesize_times(std::span<const LogRecord> records, std::uint32_t ref_id = kReferenceId,
                                     Micros ref_period = kReferencePeriod);

/// Period per id in ascending id order.
std::vector<PeriodEstimate> infer_periods(std::span<const LogRecord> records, std::uint32_t ref_id = kReferenceId,
                                          Micros ref_period = kReferencePeriod);

}  // namespace canwire
