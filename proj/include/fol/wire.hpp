#pragma once

// Little-endian byte codec shared by checkpoints, fit serialization, and the
// network message format. Doubles travel as their IEEE-754 bit patterns, so
// encoding is lossless and equal values produce equal bytes.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "fol/errors.hpp"

namespace fol::wire {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  const char* label;  // names the payload in error messages
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos >= buf.size()) throw DataError(std::string("truncated ") + label);
    return buf[pos++];
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos == buf.size(); }
  void expect_done() const {
    if (!done()) throw DataError(std::string("trailing bytes in ") + label);
  }
};

}  // namespace fol::wire
