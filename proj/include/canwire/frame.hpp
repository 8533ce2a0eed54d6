// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace canwire {

using Micros = std::chrono::microseconds;

inline constexpr std::uint32_t kMaxStandardId = (1u << 11) - 1;
inline constexpr std::uint32_t kMaxExtendedId = (1u << 29) - 1;
inline constexpr std::size_t kMaxDataLength = 8;
inline constexpr std::size_t kInterframeBits = 3;

/// One CAN 2.0 data or remote frame.
///
/// Bytes past `dlc` are always zero so that defaulted equality compares only
/// the meaningful payload. Remote frames carry a dlc but no data bytes.
struct CanFrame {
  std::uint32_t id = 0;
  bool extended = false;
  bool rtr = false;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, kMaxDataLength> data{};

  std::span<const std::uint8_t> payload() const {
    return {data.data(), rtr ? std::size_t{0} : std::size_t{dlc}};
  }

  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

/// Validated construction. Throws std::invalid_argument on an id outside the
/// format's range or more than eight data bytes.
CanFrame make_frame(std::uint32_t id, std::span<const std::uint8_t> data,
                    bool extended = false, bool rtr = false);

/// Remote frame requesting `dlc` bytes.
CanFrame make_remote_frame(std::uint32_t id, std::uint8_t dlc, bool extended = false);

std::string to_string(const CanFrame& frame);

// Logical bus levels. Dominant overwrites recessive on the wire.
using Bit = std::uint8_t;
inline constexpr Bit kDominant = 0;
inline constexpr Bit kRecessive = 1;

using BitSequence = std::vector<Bit>;

class CodecError : public std::runtime_error {
 public:
  enum class Kind { StuffViolation, CrcMismatch, Truncated, FormError };

  CodecError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ProtocolViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// CAN CRC-15 (polynomial 0x4599, register initialised to zero).
std::uint16_t crc15(std::span<const Bit> bits);

/// Inserts a complement bit after every run of five identical bits.
BitSequence stuff(std::span<const Bit> bits);

/// Inverse of stuff(). Throws CodecError(StuffViolation) on six identical bits.
BitSequence unstuff(std::span<const Bit> bits);

/// Unstuffed SOF..data bits, i.e. the CRC input.
BitSequence crc_region_bits(const CanFrame& frame);

/// Full frame on the wire, SOF through end-of-frame, stuffed where required.
/// The interframe space is not included.
BitSequence serialize(const CanFrame& frame);

/// Parses a stuffed bit stream produced by serialize(). Trailing recessive
/// bits (interframe space) are ignored.
CanFrame deserialize(std::span<const Bit> bits);

/// Bits of the arbitration field in transmission order (identifier and RTR,
/// plus SRR/IDE for extended frames). The standard-frame IDE bit is appended
/// so that mixed-format arbitration resolves the way the bus does.
BitSequence arbitration_bits(const CanFrame& frame);

/// True if `a` wins arbitration against `b`. Throws ProtocolViolation when
/// both frames carry an identical arbitration field.
bool wins_arbitration(const CanFrame& a, const CanFrame& b);

const CanFrame& arbitration_winner(const CanFrame& a, const CanFrame& b);

/// Arbitration field packed left-aligned into 32 bits. A smaller key wins;
/// equal keys mean identical arbitration fields.
std::uint32_t arbitration_key(const CanFrame& frame);

/// Stuffed frame length plus the interframe space, in bits.
std::size_t wire_bits(const CanFrame& frame);

/// Time the frame occupies the bus, rounded up to whole microseconds.
Micros frame_time(const CanFrame& frame, std::uint32_t bitrate);

}  // namespace canwire
