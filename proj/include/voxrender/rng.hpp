// Deterministic seeded RNG with named sub-streams.
//
// Every random choice in the project flows from a single command-level seed
// through named streams ("dataset", "init", "dropout", ...), so regenerating
// with the same seed is bit-reproducible regardless of evaluation order.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "voxrender/common.hpp"

namespace voxrender {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

  /// Derives an independent stream from this one; does not advance *this.
  Rng stream(std::string_view name) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char ch : name) {
      h ^= static_cast<std::uint8_t>(ch);
      h *= 0x100000001b3ULL;
    }
    return Rng(mix(state_ ^ h));
  }

  Rng stream(std::string_view name, std::uint64_t index) const {
    Rng s = stream(name);
    s.state_ = mix(s.state_ + index * 0x9e3779b97f4a7c15ULL);
    return s;
  }

  // splitmix64
  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller (no cached spare, fixed cost per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace voxrender
