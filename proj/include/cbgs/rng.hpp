#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cbgs {

/// PCG32 generator. All randomness in the project flows through this
/// implementation so that a given (seed, stream) pair produces the same
/// sequence on every platform; std::random distributions are
/// implementation-defined and are not used.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0xda3e39cb94b95bdbULL, 0) {}

  Pcg32(std::uint64_t seed, std::uint64_t stream) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = std::uint32_t(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = std::uint32_t(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint32_t next_below(std::uint32_t bound) {
    std::uint32_t threshold = (~bound + 1u) % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  /// Standard normal via Box-Muller; the spare value is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Poisson draw. Exact inversion for small means, normal approximation
  /// (rounded, clamped at zero) for large means where the relative error of
  /// the approximation is far below the shot-noise scale.
  std::uint64_t next_poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 64.0) {
      double l = std::exp(-mean);
      double p = 1.0;
      std::uint64_t k = 0;
      do {
        ++k;
        p *= next_double();
      } while (p > l);
      return k - 1;
    }
    double draw = mean + std::sqrt(mean) * next_normal();
    if (draw < 0.0) return 0;
    return std::uint64_t(std::llround(draw));
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// FNV-1a hash of a stream name; used to derive named sub-streams from the
/// single run seed (e.g. "simulate", "init", "train", plus a per-view index).
inline std::uint64_t stream_id(std::string_view name, std::uint64_t salt = 0) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : name) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  h ^= salt + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace cbgs
