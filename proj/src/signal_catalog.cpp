// SPDX-License-Identifier: Apache-2.0
#include "canwire/signal_catalog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace canwire {

namespace detail {
extern const char* const kBuiltinCatalogJson;
}

namespace {

using json = nlohmann::json;

std::string hex_id(std::uint32_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%03X", id);
  return buf;
}

std::uint32_t parse_hex(const std::string& text) {
  std::size_t used = 0;
  const auto value = std::stoul(text, &used, 16);
  if (used != text.size()) {
    throw std::invalid_argument("bad hex value '" + text + "'");
  }
  return static_cast<std::uint32_t>(value);
}

std::uint64_t read_bits(std::span<const std::uint8_t> payload, unsigned start, unsigned length) {
  std::uint64_t raw = 0;
  for (unsigned i = 0; i < length; ++i) {
    const unsigned pos = start + i;
    raw |= static_cast<std::uint64_t>((payload[pos / 8] >> (pos % 8)) & 1u) << i;
  }
  return raw;
}

void write_bits(std::span<std::uint8_t> payload, unsigned start, unsigned length,
                std::uint64_t raw) {
  for (unsigned i = 0; i < length; ++i) {
    const unsigned pos = start + i;
    const auto mask = static_cast<std::uint8_t>(1u << (pos % 8));
    if ((raw >> i) & 1u) {
      payload[pos / 8] |= mask;
    } else {
      payload[pos / 8] &= static_cast<std::uint8_t>(~mask);
    }
  }
}

SignalSpec parse_signal(const json& j) {
  SignalSpec s;
  s.name = j.at("name").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  const unsigned start_byte = j.at("start_byte").get<unsigned>();
  const unsigned bit = j.value("bit", 0u);
  s.start_bit = start_byte * 8 + bit;
  if (kind == "scaled") {
    s.kind = SignalKind::Scaled;
    s.length = j.at("length").get<unsigned>();
    s.scale = j.at("scale").get<double>();
    s.offset = j.at("offset").get<double>();
    s.unit = j.at("unit").get<std::string>();
    s.min = j.at("min").get<double>();
    s.max = j.at("max").get<double>();
  } else if (kind == "flag") {
    s.kind = SignalKind::Flag;
    s.length = 1;
  } else if (kind == "enum") {
    s.kind = SignalKind::Enum;
    s.length = j.at("length").get<unsigned>();
    for (const auto& [label, raw] : j.at("values").items()) {
      s.enum_values.emplace_back(label, raw.get<std::uint32_t>());
    }
    std::sort(s.enum_values.begin(), s.enum_values.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
  } else if (kind == "ascii") {
    s.kind = SignalKind::Ascii;
    s.length = j.at("length").get<unsigned>();
    if (bit != 0) {
      throw std::invalid_argument("ascii signal '" + s.name + "' must be byte aligned");
    }
  } else {
    throw std::invalid_argument("unknown signal kind '" + kind + "'");
  }
  if (s.kind != SignalKind::Ascii && s.length > 32) {
    throw std::invalid_argument("signal '" + s.name + "' wider than 32 bits");
  }
  return s;
}

MessageSpec parse_message(const json& j) {
  MessageSpec m;
  m.id = parse_hex(j.at("id").get<std::string>());
  m.dlc = j.at("dlc").get<std::uint8_t>();
  m.description = j.at("description").get<std::string>();
  if (!j.at("period_ms").is_null()) {
    m.period = Micros{j.at("period_ms").get<std::int64_t>() * 1000};
  }
  m.supervised = j.value("supervised", false);
  if (j.contains("counter") && !j.at("counter").is_null()) {
    m.counter_byte = j.at("counter").at("byte").get<unsigned>();
  }
  const auto fill = j.at("fill").get<std::string>();
  if (m.dlc > kMaxDataLength || fill.size() != 2u * m.dlc) {
    throw std::invalid_argument("message " + hex_id(m.id) + ": fill does not match dlc");
  }
  for (std::size_t i = 0; i < m.dlc; ++i) {
    m.fill[i] = static_cast<std::uint8_t>(parse_hex(fill.substr(2 * i, 2)));
  }
  for (const auto& js : j.at("signals")) {
    auto s = parse_signal(js);
    const unsigned end_bit = s.kind == SignalKind::Ascii ? s.start_bit + 8 * s.length
                                                         : s.start_bit + s.length;
    if (end_bit > 8u * m.dlc) {
      throw std::invalid_argument("signal '" + s.name + "' exceeds " + hex_id(m.id));
    }
    m.signals.push_back(std::move(s));
  }
  if (m.counter_byte && *m.counter_byte >= m.dlc) {
    throw std::invalid_argument("counter byte outside " + hex_id(m.id));
  }
  return m;
}

double number_or_throw(const SignalSpec& s, const SignalValue& value) {
  const auto* number = std::get_if<double>(&value);
  if (!number) {
    throw SignalError(SignalError::Kind::BadValue, "signal '" + s.name + "' expects a number");
  }
  if (!std::isfinite(*number)) {
    throw SignalError(SignalError::Kind::OutOfRange, "signal '" + s.name + "' is not finite");
  }
  return *number;
}

}  // namespace

std::optional<std::uint32_t> SignalSpec::enum_raw(std::string_view label) const {
  for (const auto& [name, raw] : enum_values) {
    if (name == label) return raw;
  }
  return std::nullopt;
}

std::optional<std::string_view> SignalSpec::enum_label(std::uint32_t raw) const {
  for (const auto& [name, value] : enum_values) {
    if (value == raw) return name;
  }
  return std::nullopt;
}

const SignalSpec* MessageSpec::find(std::string_view name) const {
  for (const auto& s : signals) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const SignalCatalog& SignalCatalog::builtin() {
  static const SignalCatalog instance = parse(detail::kBuiltinCatalogJson);
  return instance;
}

SignalCatalog SignalCatalog::parse(std::string_view json_text) {
  const auto doc = json::parse(json_text);
  if (doc.at("schema_version").get<int>() != 1) {
    throw std::invalid_argument("unsupported catalog schema version");
  }
  SignalCatalog out;
  for (const auto& jm : doc.at("messages")) {
    auto m = parse_message(jm);
    if (out.find(m.id)) {
      throw std::invalid_argument("duplicate catalog id " + hex_id(m.id));
    }
    out.messages_.push_back(std::move(m));
  }
  std::sort(out.messages_.begin(), out.messages_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

SignalCatalog SignalCatalog::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open catalog " + path);
  }
  std::stringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

const MessageSpec* SignalCatalog::find(std::uint32_t id) const {
  for (const auto& m : messages_) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

const MessageSpec& SignalCatalog::at(std::uint32_t id) const {
  if (const auto* m = find(id)) return *m;
  throw SignalError(SignalError::Kind::UnknownId, "id " + hex_id(id) + " is not in the catalog");
}

std::uint8_t next_counter(std::uint8_t counter) {
  if (counter >= kCounterModulus) {
    throw SignalError(SignalError::Kind::InvalidCounter,
                      "counter value " + std::to_string(counter) + " is reserved or out of range");
  }
  return static_cast<std::uint8_t>((counter + 1) % kCounterModulus);
}

std::uint8_t read_counter(const MessageSpec& spec, std::span<const std::uint8_t> payload) {
  if (!spec.counter_byte || *spec.counter_byte >= payload.size()) {
    throw SignalError(SignalError::Kind::InvalidCounter, hex_id(spec.id) + " carries no counter");
  }
  return payload[*spec.counter_byte] & 0x0F;
}

void write_signal(const SignalSpec& s, std::span<std::uint8_t> payload, const SignalValue& value) {
  switch (s.kind) {
    case SignalKind::Scaled: {
      const double v = number_or_throw(s, value);
      // Half a quantum of slack so values printed and re-read still fit.
      if (v < s.min - s.scale / 2 || v > s.max + s.scale / 2) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "signal '%s' value %g outside [%g, %g]", s.name.c_str(), v,
                      s.min, s.max);
        throw SignalError(SignalError::Kind::OutOfRange, buf);
      }
      const double limit = std::ldexp(1.0, static_cast<int>(s.length)) - 1;
      const double raw = std::clamp(std::round((v - s.offset) / s.scale), 0.0, limit);
      write_bits(payload, s.start_bit, s.length, static_cast<std::uint64_t>(raw));
      return;
    }
    case SignalKind::Flag: {
      const double v = number_or_throw(s, value);
      if (v != 0.0 && v != 1.0) {
        throw SignalError(SignalError::Kind::OutOfRange, "flag '" + s.name + "' must be 0 or 1");
      }
      write_bits(payload, s.start_bit, 1, v == 1.0 ? 1u : 0u);
      return;
    }
    case SignalKind::Enum: {
      std::optional<std::uint32_t> raw;
      if (const auto* label = std::get_if<std::string>(&value)) {
        raw = s.enum_raw(*label);
      } else {
        const double v = number_or_throw(s, value);
        if (v >= 0 && v == std::floor(v) && s.enum_label(static_cast<std::uint32_t>(v))) {
          raw = static_cast<std::uint32_t>(v);
        }
      }
      if (!raw) {
        throw SignalError(SignalError::Kind::OutOfRange, "no such value for enum '" + s.name + "'");
      }
      write_bits(payload, s.start_bit, s.length, *raw);
      return;
    }
    case SignalKind::Ascii: {
      const auto* text = std::get_if<std::string>(&value);
      if (!text) {
        throw SignalError(SignalError::Kind::BadValue, "signal '" + s.name + "' expects text");
      }
      if (text->size() > s.length ||
          !std::all_of(text->begin(), text->end(), [](char c) { return c >= 0x20 && c < 0x7F; })) {
        throw SignalError(SignalError::Kind::OutOfRange,
                          "signal '" + s.name + "' takes up to " + std::to_string(s.length) +
                              " printable characters");
      }
      const unsigned first = s.start_bit / 8;
      for (unsigned i = 0; i < s.length; ++i) {
        payload[first + i] = static_cast<std::uint8_t>(i < text->size() ? (*text)[i] : ' ');
      }
      return;
    }
  }
}

SignalValue read_signal(const SignalSpec& s, std::span<const std::uint8_t> payload) {
  switch (s.kind) {
    case SignalKind::Scaled:
      return static_cast<double>(read_bits(payload, s.start_bit, s.length)) * s.scale + s.offset;
    case SignalKind::Flag:
      return static_cast<double>(read_bits(payload, s.start_bit, 1));
    case SignalKind::Enum: {
      const auto raw = static_cast<std::uint32_t>(read_bits(payload, s.start_bit, s.length));
      if (const auto label = s.enum_label(raw)) return std::string(*label);
      char buf[16];
      std::snprintf(buf, sizeof buf, "0x%02X", raw);
      return std::string(buf);
    }
    case SignalKind::Ascii: {
      const unsigned first = s.start_bit / 8;
      std::string text;
      for (unsigned i = 0; i < s.length; ++i) text.push_back(static_cast<char>(payload[first + i]));
      return text;
    }
  }
  return 0.0;
}

std::vector<std::uint8_t> encode(const MessageSpec& spec, const SignalMap& view,
                                 std::optional<std::uint8_t> counter) {
  if (spec.counter_protected() != counter.has_value()) {
    throw SignalError(SignalError::Kind::InvalidCounter,
                      spec.counter_protected() ? hex_id(spec.id) + " requires a counter"
                                               : hex_id(spec.id) + " carries no counter");
  }
  std::vector<std::uint8_t> payload(spec.fill.begin(), spec.fill.begin() + spec.dlc);
  for (const auto& signal : spec.signals) {
    if (auto it = view.find(signal.name); it != view.end()) {
      write_signal(signal, payload, it->second);
    }
  }
  if (counter) {
    if (*counter >= kCounterModulus) {
      throw SignalError(SignalError::Kind::InvalidCounter, "counter value 15 is reserved");
    }
    auto& byte = payload[*spec.counter_byte];
    byte = static_cast<std::uint8_t>((byte & 0xF0) | *counter);
  }
  return payload;
}

std::vector<std::uint8_t> encode(std::uint32_t id, const SignalMap& view,
                                 std::optional<std::uint8_t> counter) {
  return encode(catalog().at(id), view, counter);
}

CanFrame encode_frame(const MessageSpec& spec, const SignalMap& view,
                      std::optional<std::uint8_t> counter) {
  return make_frame(spec.id, encode(spec, view, counter));
}

std::vector<SignalUpdate> decode(const MessageSpec& spec, std::span<const std::uint8_t> payload) {
  if (payload.size() != spec.dlc) {
    throw SignalError(SignalError::Kind::WrongLength,
                      hex_id(spec.id) + " expects " + std::to_string(spec.dlc) + " bytes, got " +
                          std::to_string(payload.size()));
  }
  std::vector<SignalUpdate> out;
  out.reserve(spec.signals.size());
  for (const auto& signal : spec.signals) {
    out.push_back(SignalUpdate{signal.name, read_signal(signal, payload), signal.unit});
  }
  return out;
}

std::vector<SignalUpdate> decode(std::uint32_t id, std::span<const std::uint8_t> payload) {
  return decode(catalog().at(id), payload);
}

double as_number(const SignalValue& value) {
  if (const auto* number = std::get_if<double>(&value)) return *number;
  throw SignalError(SignalError::Kind::BadValue, "expected a numeric signal value");
}

}  // namespace canwire
