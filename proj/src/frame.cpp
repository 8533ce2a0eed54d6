// SPDX-License-Identifier: Apache-2.0
#include "canwire/frame.hpp"

#include <algorithm>
#include <cstdio>

namespace canwire {

namespace {

constexpr std::uint16_t kCrcPolynomial = 0x4599;
constexpr int kCrcWidth = 15;
constexpr int kStuffRun = 5;
constexpr int kEofBits = 7;

void push_bits(BitSequence& out, std::uint32_t value, int width) {
  for (int i = width - 1; i >= 0; --i) {
    out.push_back(static_cast<Bit>((value >> i) & 1u));
  }
}

// Destuffing reader over the stuffed region, then raw reads for the
// fixed-form tail.
class BitReader {
 public:
  explicit BitReader(std::span<const Bit> bits) : bits_(bits) {}

  Bit next_stuffed() {
    if (run_ == kStuffRun) {
      const Bit stuff_bit = raw();
      if (stuff_bit == last_) {
        throw CodecError(CodecError::Kind::StuffViolation,
                         "six identical bits at position " + std::to_string(pos_ - 1));
      }
      last_ = stuff_bit;
      run_ = 1;
    }
    const Bit b = raw();
    if (run_ > 0 && b == last_) {
      ++run_;
    } else {
      last_ = b;
      run_ = 1;
    }
    unstuffed_.push_back(b);
    return b;
  }

  std::uint32_t read_stuffed(int width) {
    std::uint32_t value = 0;
    for (int i = 0; i < width; ++i) {
      value = (value << 1) | next_stuffed();
    }
    return value;
  }

  // A stuff bit may follow the last bit of the CRC sequence.
  void close_stuffed_region() {
    if (run_ == kStuffRun) {
      const Bit stuff_bit = raw();
      if (stuff_bit == last_) {
        throw CodecError(CodecError::Kind::StuffViolation, "six identical bits at end of CRC");
      }
    }
  }

  Bit raw() {
    if (pos_ >= bits_.size()) {
      throw CodecError(CodecError::Kind::Truncated,
                       "bit stream ends after " + std::to_string(bits_.size()) + " bits");
    }
    return bits_[pos_++];
  }

  std::span<const Bit> remaining() const { return bits_.subspan(pos_); }
  const BitSequence& unstuffed() const { return unstuffed_; }

 private:
  std::span<const Bit> bits_;
  std::size_t pos_ = 0;
  Bit last_ = kRecessive;
  int run_ = 0;
  BitSequence unstuffed_;
};

}  // namespace

CanFrame make_frame(std::uint32_t id, std::span<const std::uint8_t> data, bool extended,
                    bool rtr) {
  const std::uint32_t limit = extended ? kMaxExtendedId : kMaxStandardId;
  if (id > limit) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "id 0x%X exceeds %d bits", id, extended ? 29 : 11);
    throw std::invalid_argument(buf);
  }
  if (data.size() > kMaxDataLength) {
    throw std::invalid_argument("payload of " + std::to_string(data.size()) +
                                " bytes exceeds 8");
  }
  CanFrame frame;
  frame.id = id;
  frame.extended = extended;
  frame.rtr = rtr;
  frame.dlc = static_cast<std::uint8_t>(data.size());
  if (!rtr) {
    std::copy(data.begin(), data.end(), frame.data.begin());
  }
  return frame;
}

CanFrame make_remote_frame(std::uint32_t id, std::uint8_t dlc, bool extended) {
  if (dlc > kMaxDataLength) {
    throw std::invalid_argument("dlc exceeds 8");
  }
  std::array<std::uint8_t, kMaxDataLength> zeros{};
  return make_frame(id, std::span(zeros).first(dlc), extended, true);
}

std::string to_string(const CanFrame& frame) {
  char buf[48];
  std::snprintf(buf, sizeof buf, frame.extended ? "%08X#" : "%03X#", frame.id);
  std::string out = buf;
  if (frame.rtr) {
    return out + "R" + std::to_string(frame.dlc);
  }
  for (auto byte : frame.payload()) {
    std::snprintf(buf, sizeof buf, "%02X", byte);
    out += buf;
  }
  return out;
}

std::uint16_t crc15(std::span<const Bit> bits) {
  std::uint16_t reg = 0;
  for (Bit b : bits) {
    const bool feedback = ((reg >> (kCrcWidth - 1)) & 1u) != (b & 1u);
    reg = static_cast<std::uint16_t>((reg << 1) & 0x7FFF);
    if (feedback) {
      reg ^= kCrcPolynomial;
    }
  }
  return reg;
}

BitSequence stuff(std::span<const Bit> bits) {
  BitSequence out;
  out.reserve(bits.size() + bits.size() / 4 + 1);
  Bit last = kRecessive;
  int run = 0;
  for (Bit b : bits) {
    out.push_back(b);
    if (run > 0 && b == last) {
      ++run;
    } else {
      last = b;
      run = 1;
    }
    if (run == kStuffRun) {
      last = static_cast<Bit>(b ^ 1u);
      out.push_back(last);
      run = 1;
    }
  }
  return out;
}

BitSequence unstuff(std::span<const Bit> bits) {
  BitSequence out;
  out.reserve(bits.size());
  Bit last = kRecessive;
  int run = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const Bit b = bits[i];
    if (run == kStuffRun) {
      if (b == last) {
        throw CodecError(CodecError::Kind::StuffViolation,
                         "six identical bits at position " + std::to_string(i));
      }
      last = b;
      run = 1;
      continue;
    }
    out.push_back(b);
    if (run > 0 && b == last) {
      ++run;
    } else {
      last = b;
      run = 1;
    }
  }
  return out;
}

BitSequence crc_region_bits(const CanFrame& frame) {
  BitSequence bits;
  bits.reserve(64 + 8 * kMaxDataLength);
  bits.push_back(kDominant);  // SOF
  if (frame.extended) {
    push_bits(bits, frame.id >> 18, 11);
    bits.push_back(kRecessive);  // SRR
    bits.push_back(kRecessive);  // IDE
    push_bits(bits, frame.id & 0x3FFFFu, 18);
    bits.push_back(frame.rtr ? kRecessive : kDominant);
    bits.push_back(kDominant);  // r1
    bits.push_back(kDominant);  // r0
  } else {
    push_bits(bits, frame.id, 11);
    bits.push_back(frame.rtr ? kRecessive : kDominant);
    bits.push_back(kDominant);  // IDE
    bits.push_back(kDominant);  // r0
  }
  push_bits(bits, frame.dlc, 4);
  for (auto byte : frame.payload()) {
    push_bits(bits, byte, 8);
  }
  return bits;
}

BitSequence serialize(const CanFrame& frame) {
  BitSequence region = crc_region_bits(frame);
  push_bits(region, crc15(region), kCrcWidth);
  BitSequence out = stuff(region);
  out.push_back(kRecessive);  // CRC delimiter
  out.push_back(kRecessive);  // ACK slot, left recessive by the transmitter
  out.push_back(kRecessive);  // ACK delimiter
  out.insert(out.end(), kEofBits, kRecessive);
  return out;
}

CanFrame deserialize(std::span<const Bit> bits) {
  BitReader in(bits);
  if (in.next_stuffed() != kDominant) {
    throw CodecError(CodecError::Kind::FormError, "missing start of frame");
  }
  CanFrame frame;
  const std::uint32_t base_id = in.read_stuffed(11);
  const Bit rtr_or_srr = in.next_stuffed();
  const Bit ide = in.next_stuffed();
  if (ide == kRecessive) {
    frame.extended = true;
    frame.id = (base_id << 18) | in.read_stuffed(18);
    frame.rtr = in.next_stuffed() == kRecessive;
    in.next_stuffed();  // r1
  } else {
    frame.id = base_id;
    frame.rtr = rtr_or_srr == kRecessive;
  }
  in.next_stuffed();  // r0
  const auto dlc = in.read_stuffed(4);
  if (dlc > kMaxDataLength) {
    throw CodecError(CodecError::Kind::FormError, "dlc " + std::to_string(dlc) + " exceeds 8");
  }
  frame.dlc = static_cast<std::uint8_t>(dlc);
  if (!frame.rtr) {
    for (std::uint32_t i = 0; i < dlc; ++i) {
      frame.data[i] = static_cast<std::uint8_t>(in.read_stuffed(8));
    }
  }
  const std::size_t covered = in.unstuffed().size();
  const auto received_crc = static_cast<std::uint16_t>(in.read_stuffed(kCrcWidth));
  in.close_stuffed_region();
  const auto computed_crc = crc15(std::span(in.unstuffed()).first(covered));
  if (received_crc != computed_crc) {
    throw CodecError(CodecError::Kind::CrcMismatch, "CRC mismatch");
  }

  if (in.raw() != kRecessive) {
    throw CodecError(CodecError::Kind::FormError, "CRC delimiter not recessive");
  }
  in.raw();  // ACK slot: either level is acceptable
  if (in.raw() != kRecessive) {
    throw CodecError(CodecError::Kind::FormError, "ACK delimiter not recessive");
  }
  for (int i = 0; i < kEofBits; ++i) {
    if (in.raw() != kRecessive) {
      throw CodecError(CodecError::Kind::FormError, "end of frame not recessive");
    }
  }
  const auto tail = in.remaining();
  if (std::any_of(tail.begin(), tail.end(), [](Bit b) { return b == kDominant; })) {
    throw CodecError(CodecError::Kind::FormError, "dominant bit after end of frame");
  }
  return frame;
}

BitSequence arbitration_bits(const CanFrame& frame) {
  BitSequence bits;
  if (frame.extended) {
    push_bits(bits, frame.id >> 18, 11);
    bits.push_back(kRecessive);
    bits.push_back(kRecessive);
    push_bits(bits, frame.id & 0x3FFFFu, 18);
    bits.push_back(frame.rtr ? kRecessive : kDominant);
  } else {
    push_bits(bits, frame.id, 11);
    bits.push_back(frame.rtr ? kRecessive : kDominant);
    bits.push_back(kDominant);
  }
  return bits;
}

bool wins_arbitration(const CanFrame& a, const CanFrame& b) {
  const auto bits_a = arbitration_bits(a);
  const auto bits_b = arbitration_bits(b);
  const auto n = std::min(bits_a.size(), bits_b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (bits_a[i] != bits_b[i]) {
      return bits_a[i] == kDominant;
    }
  }
  // Equal prefixes only happen for identical fields: a standard frame always
  // differs from an extended one at the latest in the IDE position.
  throw ProtocolViolation("two transmitters share arbitration field " + to_string(a));
}

const CanFrame& arbitration_winner(const CanFrame& a, const CanFrame& b) {
  return wins_arbitration(a, b) ? a : b;
}

std::uint32_t arbitration_key(const CanFrame& frame) {
  std::uint32_t key = 0;
  int width = 0;
  for (Bit b : arbitration_bits(frame)) {
    key = (key << 1) | b;
    ++width;
  }
  return key << (32 - width);
}

std::size_t wire_bits(const CanFrame& frame) {
  return serialize(frame).size() + kInterframeBits;
}

Micros frame_time(const CanFrame& frame, std::uint32_t bitrate) {
  if (bitrate == 0) {
    throw std::invalid_argument("bitrate must be positive");
  }
  const std::uint64_t bits = wire_bits(frame);
  return Micros{static_cast<Micros::rep>((bits * 1'000'000 + bitrate - 1) / bitrate)};
}

}  // namespace canwire
