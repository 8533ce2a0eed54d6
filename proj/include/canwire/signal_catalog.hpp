// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "canwire/frame.hpp"

namespace canwire {

class SignalError : public std::invalid_argument {
 public:
  enum class Kind { UnknownId, UnknownSignal, OutOfRange, WrongLength, InvalidCounter, BadValue };

  SignalError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

enum class SignalKind { Scaled, Flag, Enum, Ascii };

/// Numeric signals (scaled, flag, enum raw) carry a double; enums and ASCII
/// fields may also be given as strings.
using SignalValue = std::variant<double, std::string>;
using SignalMap = std::map<std::string, SignalValue, std::less<>>;

/// One field of a message, Intel (little-endian) bit order.
struct SignalSpec {
  std::string name;
  SignalKind kind = SignalKind::Scaled;
  unsigned start_bit = 0;  // byte * 8 + bit
  unsigned length = 1;     // bits, or bytes for ASCII
  double scale = 1.0;
  double offset = 0.0;
  std::string unit;
  double min = 0.0;
  double max = 1.0;
  std::vector<std::pair<std::string, std::uint32_t>> enum_values;

  std::optional<std::uint32_t> enum_raw(std::string_view label) const;
  std::optional<std::string_view> enum_label(std::uint32_t raw) const;
};

struct MessageSpec {
  std::uint32_t id = 0;
  std::uint8_t dlc = 0;
  std::string description;
  std::optional<Micros> period;  // nullopt: sent once per ignition cycle
  bool supervised = false;
  std::optional<unsigned> counter_byte;  // low nibble of this byte
  std::array<std::uint8_t, kMaxDataLength> fill{};
  std::vector<SignalSpec> signals;

  bool counter_protected() const { return counter_byte.has_value(); }
  bool one_shot() const { return !period.has_value(); }
  const SignalSpec* find(std::string_view name) const;
};

/// The message table. The built-in instance is parsed once from the JSON
/// description embedded at build time (data/signal_catalog.json).
class SignalCatalog {
 public:
  static const SignalCatalog& builtin();
  static SignalCatalog parse(std::string_view json_text);
  static SignalCatalog load_file(const std::string& path);

  std::span<const MessageSpec> messages() const { return messages_; }
  const MessageSpec* find(std::uint32_t id) const;
  const MessageSpec& at(std::uint32_t id) const;  // throws SignalError(UnknownId)

 private:
  std::vector<MessageSpec> messages_;
};

inline const SignalCatalog& catalog() { return SignalCatalog::builtin(); }

struct SignalUpdate {
  std::string name;
  SignalValue value;
  std::string unit;

  friend bool operator==(const SignalUpdate&, const SignalUpdate&) = default;
};

inline constexpr std::uint8_t kCounterModulus = 15;
inline constexpr std::uint8_t kReservedCounter = 0xF;

/// Alive-counter successor: 0..14 cyclic. 15 is reserved and rejected.
std::uint8_t next_counter(std::uint8_t counter);

std::uint8_t read_counter(const MessageSpec& spec, std::span<const std::uint8_t> payload);

/// Writes one signal into a payload, touching no other bit.
void write_signal(const SignalSpec& signal, std::span<std::uint8_t> payload,
                  const SignalValue& value);
SignalValue read_signal(const SignalSpec& signal, std::span<const std::uint8_t> payload);

/// Builds the payload for `spec` from the signals present in `view`; absent
/// signals keep the message's fill bytes. A counter must be supplied exactly
/// when the message is counter protected.
std::vector<std::uint8_t> encode(const MessageSpec& spec, const SignalMap& view,
                                 std::optional<std::uint8_t> counter = std::nullopt);
std::vector<std::uint8_t> encode(std::uint32_t id, const SignalMap& view,
                                 std::optional<std::uint8_t> counter = std::nullopt);
CanFrame encode_frame(const MessageSpec& spec, const SignalMap& view,
                      std::optional<std::uint8_t> counter = std::nullopt);

std::vector<SignalUpdate> decode(const MessageSpec& spec, std::span<const std::uint8_t> payload);
std::vector<SignalUpdate> decode(std::uint32_t id, std::span<const std::uint8_t> payload);

double as_number(const SignalValue& value);

}  // namespace canwire
