#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lease {

/// File or invariant problems in external data (exit code 3 at the CLI).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values where the numeric contract forbids them (exit code 4).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a stream tag.
constexpr uint64_t mix_seed(uint64_t base, uint64_t tag) {
  return splitmix64(base ^ splitmix64(tag));
}

/// Deterministic random stream. All distributions are implemented here so
/// that sequences do not depend on the standard library's distribution
/// internals, only on mt19937_64 (which is pinned by the standard).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Unbiased by rejection.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller, with the spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Gumbel(0, 1).
  double gumbel() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return -std::log(-std::log(u));
  }

  /// Fisher-Yates shuffle of [0, n) index vector.
  std::vector<uint32_t> permutation(uint32_t n) {
    std::vector<uint32_t> p(n);
    for (uint32_t i = 0; i < n; ++i) p[i] = i;
    for (uint32_t i = n; i > 1; --i) {
      const uint64_t j = uniform_int(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Dense row-major matrix. Plain storage, no expression templates; the heavy
/// loops live in net.cpp and are written to auto-vectorize.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

  T* operator[](int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const T* operator[](int r) const { return v.data() + static_cast<size_t>(r) * cols; }

  T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  T at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

using Matf = Mat<float>;
using Matd = Mat<double>;

template <class T>
bool all_finite(const Mat<T>& m) {
  for (const T x : m.v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

/// FNV-1a over raw bytes; used for cheap content fingerprints in tests and
/// the frozen-encoder contract.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace lease
