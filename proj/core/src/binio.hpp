#pragma once

// Little-endian binary primitives shared by the index and model file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "nexus/error.hpp"

namespace nexus::detail {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(out, b, 8);
}

inline void write_f32(std::ostream& out, float v) {
  write_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void write_f64(std::ostream& out, double v) {
  write_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void read_exact(std::istream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw Error(ErrorCode::TruncatedFile,
                std::string("unexpected end of file while reading ") + what);
  }
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_exact(in, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  read_exact(in, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float read_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(read_u32(in, what));
}

inline double read_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(read_u64(in, what));
}

// Validates a 6-byte magic of the form PREFIX + version digit, e.g. "NXIDX1".
// Wrong prefix -> BadMagic; right prefix, wrong version -> VersionMismatch.
inline void check_magic(std::istream& in, const char* expected, const char* what) {
  char got[6];
  read_exact(in, got, 6, "file magic");
  if (std::memcmp(got, expected, 6) == 0) return;
  if (std::memcmp(got, expected, 5) == 0) {
    throw Error(ErrorCode::VersionMismatch,
                std::string(what) + " has unsupported format version '" + got[5] +
                    "' (expected '" + expected[5] + "')");
  }
  throw Error(ErrorCode::BadMagic,
              std::string(what) + " does not start with the expected magic bytes");
}

inline void expect_eof(std::istream& in, const char* what) {
  char c = 0;
  in.read(&c, 1);
  if (!in.eof()) {
    throw Error(ErrorCode::IoError, std::string(what) + " has trailing bytes after the payload");
  }
}

}  // namespace nexus::detail
