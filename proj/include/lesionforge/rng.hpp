#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

#include "lesionforge/error.hpp"

namespace lesionforge {

/// PCG32 (XSH-RR variant, 64-bit state). All randomness in the library goes
/// through this generator so that outputs are identical across platforms;
/// the std:: distributions are implementation-defined and never used.
class Pcg32 {
 public:
  using result_type = std::uint32_t;

  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u32(); }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32u) | next_u32();
  }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform01() {
    std::uint64_t a = next_u32() >> 5u;
    std::uint64_t b = next_u32() >> 6u;
    return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) *
           (1.0 / 9007199254740992.0);
  }

  /// Uniform double on the open interval (lo, hi). Requires lo < hi.
  double uniform_open(double lo, double hi) {
    if (!(lo < hi)) throw ArgumentError("uniform_open: empty interval");
    for (;;) {
      double x = lo + (hi - lo) * uniform01();
      if (x > lo && x < hi) return x;
    }
  }

  /// Uniform double on [lo, hi]; returns lo when the interval is a point.
  double uniform_closed(double lo, double hi) {
    if (hi < lo) throw ArgumentError("uniform_closed: empty interval");
    if (hi == lo) return lo;
    return lo + (hi - lo) * uniform01();
  }

  /// Unbiased integer in [0, bound) (Lemire's multiply-and-reject).
  std::uint32_t below(std::uint32_t bound) {
    if (bound == 0) throw ArgumentError("below: zero bound");
    std::uint64_t m = static_cast<std::uint64_t>(next_u32()) * bound;
    auto low = static_cast<std::uint32_t>(m);
    if (low < bound) {
      std::uint32_t threshold = (-bound) % bound;
      while (low < threshold) {
        m = static_cast<std::uint64_t>(next_u32()) * bound;
        low = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32u);
  }

  /// Uniform integer in the inclusive range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw ArgumentError("uniform_int: empty range");
    auto span = static_cast<std::uint64_t>(hi - lo) + 1u;
    if (span > std::numeric_limits<std::uint32_t>::max())
      throw ArgumentError("uniform_int: range exceeds 32 bits");
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint32_t>(span)));
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30u)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27u)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31u);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stable sub-seed for a named pipeline stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  return splitmix64(seed ^ fnv1a64(stage));
}

}  // namespace lesionforge
