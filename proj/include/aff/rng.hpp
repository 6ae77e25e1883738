#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace aff {

// Deterministic, platform-independent RNG (splitmix64 core). The standard
// <random> distributions are implementation-defined, which would make stored
// metrics and checkpoints depend on the stdlib; this keeps every stream
// reproducible from (seed, stream name) alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (one value per call, deterministic).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
};

inline std::uint64_t hash64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent substream: mixing the label in means parameter init does not
// depend on registration order and data shuffling does not depend on epochs
// consuming variable amounts of the parent stream.
inline Rng substream(std::uint64_t seed, std::string_view label) {
  Rng mix(seed ^ hash64(label));
  mix.next_u64();
  return mix;
}

inline Rng substream(std::uint64_t seed, std::string_view label,
                     std::uint64_t index) {
  Rng mix(seed ^ hash64(label) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
  mix.next_u64();
  return mix;
}

}  // namespace aff
