#include "lease/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

namespace lease::io {

namespace {

FILE* as_file(void* p) { return static_cast<FILE*>(p); }

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

constexpr bool kLittleHost = std::endian::native == std::endian::little;

template <class T>
void to_le(T x, unsigned char* out) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::memcpy(out, &x, sizeof(T));
  if constexpr (!kLittleHost) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(out[i], out[sizeof(T) - 1 - i]);
  }
}

template <class T>
T from_le(const unsigned char* in) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in, sizeof(T));
  if constexpr (!kLittleHost) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T x;
  std::memcpy(&x, buf, sizeof(T));
  return x;
}

}  // namespace

Writer::Writer(const std::string& p) : path(p) {
  f_ = std::fopen(p.c_str(), "wb");
  if (!f_) throw DataError("cannot open for writing: " + p);
}

Writer::~Writer() {
  if (f_) std::fclose(as_file(f_));
}

void Writer::close() {
  if (f_) {
    if (std::fclose(as_file(f_)) != 0) {
      f_ = nullptr;
      throw DataError("write failure on close: " + path);
    }
    f_ = nullptr;
  }
}

void Writer::bytes(const void* data, size_t n) {
  if (n == 0) return;
  if (std::fwrite(data, 1, n, as_file(f_)) != n) throw DataError("write failure: " + path);
}

void Writer::magic(const char tag[4]) { bytes(tag, 4); }
void Writer::u8(uint8_t x) { bytes(&x, 1); }

void Writer::u16(uint16_t x) {
  unsigned char b[2];
  to_le(x, b);
  bytes(b, 2);
}

void Writer::u32(uint32_t x) {
  unsigned char b[4];
  to_le(x, b);
  bytes(b, 4);
}

void Writer::u64(uint64_t x) {
  unsigned char b[8];
  to_le(x, b);
  bytes(b, 8);
}

void Writer::f32(float x) { u32(std::bit_cast<uint32_t>(x)); }
void Writer::f64(double x) { u64(std::bit_cast<uint64_t>(x)); }

void Writer::u16_array(const uint16_t* data, size_t n) {
  if constexpr (kLittleHost) {
    bytes(data, n * 2);
  } else {
    for (size_t i = 0; i < n; ++i) u16(data[i]);
  }
}

void Writer::f32_array(const float* data, size_t n) {
  if constexpr (kLittleHost) {
    bytes(data, n * 4);
  } else {
    for (size_t i = 0; i < n; ++i) f32(data[i]);
  }
}

void Writer::pad(size_t n) {
  static const unsigned char zeros[8] = {0};
  while (n > 0) {
    const size_t chunk = n < 8 ? n : 8;
    bytes(zeros, chunk);
    n -= chunk;
  }
}

Reader::Reader(const std::string& p) : path(p) {
  f_ = std::fopen(p.c_str(), "rb");
  if (!f_) throw DataError("cannot open for reading: " + p);
}

Reader::~Reader() {
  if (f_) std::fclose(as_file(f_));
}

void Reader::bytes(void* out, size_t n) {
  if (n == 0) return;
  if (std::fread(out, 1, n, as_file(f_)) != n)
    throw DataError("truncated file: " + path);
}

void Reader::magic(const char tag[4]) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, tag, 4) != 0)
    throw DataError("bad magic in " + path + " (expected " + std::string(tag, 4) + ")");
}

uint8_t Reader::u8() {
  uint8_t x;
  bytes(&x, 1);
  return x;
}

uint16_t Reader::u16() {
  unsigned char b[2];
  bytes(b, 2);
  return from_le<uint16_t>(b);
}

uint32_t Reader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  return from_le<uint32_t>(b);
}

uint64_t Reader::u64() {
  unsigned char b[8];
  bytes(b, 8);
  return from_le<uint64_t>(b);
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

void Reader::u16_array(uint16_t* out, size_t n) {
  if constexpr (kLittleHost) {
    bytes(out, n * 2);
  } else {
    for (size_t i = 0; i < n; ++i) out[i] = u16();
  }
}

void Reader::f32_array(float* out, size_t n) {
  if constexpr (kLittleHost) {
    bytes(out, n * 4);
  } else {
    for (size_t i = 0; i < n; ++i) out[i] = f32();
  }
}

void Reader::skip(size_t n) {
  unsigned char buf[256];
  while (n > 0) {
    const size_t chunk = n < sizeof(buf) ? n : sizeof(buf);
    bytes(buf, chunk);
    n -= chunk;
  }
}

bool Reader::at_eof() {
  const int c = std::fgetc(as_file(f_));
  if (c == EOF) return true;
  std::ungetc(c, as_file(f_));
  return false;
}

uint64_t file_hash(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open for hashing: " + path);
  uint64_t h = 0xCBF29CE484222325ull;
  unsigned char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) h = fnv1a(buf, n, h);
  std::fclose(f);
  return h;
}

bool file_exists(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (f) std::fclose(f);
  return f != nullptr;
}

}  // namespace lease::io
