#pragma once

#include <cmath>
#include <cstdint>

#include "lidarmotion/geometry.hpp"

namespace lidarmotion {

// Deterministic 64-bit generator (splitmix64). All randomness in the
// project flows through explicit seeds into this generator, so identical
// seeds give bit-identical streams on every platform.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform01() { return (next() >> 11) * 0x1.0p-53; }  // [0, 1)

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  std::uint64_t below(std::uint64_t n) { return next() % n; }

  // Standard normal via Box-Muller; two raw draws per sample.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }
};

// Stable derivation of independent substreams from one root seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 rng(seed ^ (0x51CAB3F0D1E5ULL + stream * 0x9E3779B97F4A7C15ULL));
  return rng.next();
}

}  // namespace lidarmotion
