#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lease/common.hpp"

namespace lease::io {

/// Little-endian binary stream helpers shared by every on-disk format.
/// Read failures throw DataError mentioning the path and what was expected.

struct Writer {
  explicit Writer(const std::string& path);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void magic(const char tag[4]);
  void u8(uint8_t x);
  void u16(uint16_t x);
  void u32(uint32_t x);
  void u64(uint64_t x);
  void f32(float x);
  void f64(double x);
  void bytes(const void* data, size_t n);
  void u16_array(const uint16_t* data, size_t n);
  void f32_array(const float* data, size_t n);
  void pad(size_t n);
  void close();

  const std::string path;

 private:
  void* f_ = nullptr;
};

struct Reader {
  explicit Reader(const std::string& path);
  ~Reader();
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  /// Validates a 4-byte magic tag, throwing DataError on mismatch.
  void magic(const char tag[4]);
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  void bytes(void* out, size_t n);
  void u16_array(uint16_t* out, size_t n);
  void f32_array(float* out, size_t n);
  void skip(size_t n);
  bool at_eof();

  const std::string path;

 private:
  void need(size_t n);
  void* f_ = nullptr;
};

/// FNV-1a hash of a whole file; DataError if unreadable.
uint64_t file_hash(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace lease::io
