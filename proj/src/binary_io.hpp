#pragma once

// Little-endian primitives shared by the radar cube, checkpoint and replay
// containers. Reads throw DataError on truncation.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ragc/common.hpp"

namespace ragc::io {

template <typename UInt>
void put_uint(std::ostream& out, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt get_uint(std::istream& in) {
  unsigned char bytes[sizeof(UInt)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(UInt));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(UInt))) throw DataError("unexpected end of binary stream");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

inline void put_u8(std::ostream& out, std::uint8_t v) { put_uint<std::uint8_t>(out, v); }
inline void put_u16(std::ostream& out, std::uint16_t v) { put_uint<std::uint16_t>(out, v); }
inline void put_u32(std::ostream& out, std::uint32_t v) { put_uint<std::uint32_t>(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_uint<std::uint64_t>(out, v); }
inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint8_t get_u8(std::istream& in) { return get_uint<std::uint8_t>(in); }
inline std::uint16_t get_u16(std::istream& in) { return get_uint<std::uint16_t>(in); }
inline std::uint32_t get_u32(std::istream& in) { return get_uint<std::uint32_t>(in); }
inline std::uint64_t get_u64(std::istream& in) { return get_uint<std::uint64_t>(in); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
  char buf[4] = {};
  in.read(buf, 4);
  if (in.gcount() != 4 || std::memcmp(buf, magic, 4) != 0) throw DataError(what + ": bad magic");
}

}  // namespace ragc::io
