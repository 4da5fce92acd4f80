#pragma once

#include <cstdint>

#include "replab/types.hpp"

namespace replab {

// splitmix64. The generator is pinned so that a (seed, config) pair yields a
// bit-identical event sequence on every platform; std:: distributions are
// avoided for the same reason.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). Modulo bias is irrelevant at simulation scale and the
  // result is the same everywhere.
  uint64_t below(uint64_t n) { return n <= 1 ? 0 : next() % n; }

  // Uniform in [lo, hi], inclusive.
  Tick range(Tick lo, Tick hi) { return lo >= hi ? lo : lo + below(hi - lo + 1); }

  // True with probability p. Uses the top 53 bits so the comparison is exact
  // IEEE arithmetic.
  bool chance(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) {
      next();  // keep the draw count identical across loss settings
      return true;
    }
    return static_cast<double>(next() >> 11) * 0x1.0p-53 < p;
  }

 private:
  uint64_t state_;
};

}  // namespace replab
