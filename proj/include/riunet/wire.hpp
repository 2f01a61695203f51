#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace riunet::wire {

// Little-endian primitives over iostreams. Readers throw on truncation so
// format parsers can stay linear.

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw std::runtime_error(std::string("truncated file while reading ") + what);
}

inline uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

inline float get_f32(std::istream& is, const char* what) {
  const uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// Bulk f32 planes. x86-64 is little-endian, so these are straight copies; the
// element loop kicks in only on a big-endian host.
inline void put_f32_array(std::ostream& os, const float* p, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    put_bytes(os, p, n * 4);
  } else {
    for (size_t i = 0; i < n; ++i) put_f32(os, p[i]);
  }
}

inline void get_f32_array(std::istream& is, float* p, size_t n, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    get_bytes(is, p, n * 4, what);
  } else {
    for (size_t i = 0; i < n; ++i) p[i] = get_f32(is, what);
  }
}

inline void expect_eof(std::istream& is, const char* what) {
  char extra;
  if (is.read(&extra, 1); is.gcount() != 0)
    throw std::runtime_error(std::string("trailing bytes after ") + what);
}

}  // namespace riunet::wire
