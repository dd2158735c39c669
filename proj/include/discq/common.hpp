#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace discq {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: corpus invariants, label ranges, shape mismatches.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad configuration values or unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem problems: missing files, unwritable outputs.
class IoError : public Error {
 public:
  using Error::Error;
};

// Model artifact problems: wrong magic, version, or dimension mismatch.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

// Embedding service transport failures.
class NetworkError : public Error {
 public:
  using Error::Error;
};

inline void warn(const std::string& msg) {
  std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

// ---------------------------------------------------------------------------
// Hashing. FNV-1a is used for feature hashing and config fingerprints; it is
// fixed here byte-for-byte so encodings are identical across platforms.

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(std::string_view bytes, uint64_t state = kFnvOffset) {
  uint64_t h = state;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64_byte(uint8_t b, uint64_t state) {
  state ^= b;
  state *= kFnvPrime;
  return state;
}

// splitmix64 finalizer; used to derive independent RNG seeds from a base seed
// so that parallel jobs never share a stream.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
  return mix64(base ^ mix64(a ^ mix64(b)));
}

inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t b = 0) {
  return derive_seed(base, fnv1a64(tag), b);
}

// ---------------------------------------------------------------------------
// RNG. The mt19937_64 engine is specified exactly by the standard; the
// distribution helpers are hand-rolled because the standard distributions are
// implementation-defined and would break cross-platform reproducibility.

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  // Unbiased draw in [0, n). Rejection sampling avoids modulo bias.
  uint64_t below(uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return v % n;
  }

  // Inclusive range draw.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ValidationError("Rng::uniform_int: empty range");
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi) - lo + 1));
  }

  double real01() { return (eng_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return real01() < p; }

  // Box-Muller. Draws two uniforms per call; no cached spare, so the draw
  // count per call is fixed and replay stays aligned.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = real01();
    double u2 = real01();
    while (u1 <= 0.0) u1 = real01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  // Fisher-Yates; std::shuffle is implementation-defined.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// Numerics.

inline double logsumexp(const double* x, int n) {
  double m = -HUGE_VAL;
  for (int i = 0; i < n; ++i)
    if (x[i] > m) m = x[i];
  if (m == -HUGE_VAL) return -HUGE_VAL;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation (divide by n).
inline double pop_stddev(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Shortest-exact decimal formatting for CSV output ("%.17g" round-trips).
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace discq
