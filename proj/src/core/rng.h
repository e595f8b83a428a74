#pragma once

#include <cstdint>

namespace tidal {

// SplitMix64. The only PRNG in the project: fully specified by three
// constants, trivially reproducible in any language, which keeps synthetic
// weights and test fixtures identical everywhere.
class SplitMix64 {
  public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Top 24 bits mapped to [0,1); exactly representable in a float.
    float next_unit() {
        return float(next() >> 40) * (1.0f / 16777216.0f);
    }

    // Uniform in [lo, hi).
    float next_in(float lo, float hi) {
        return lo + (hi - lo) * next_unit();
    }

    uint64_t next_below(uint64_t n) {
        return next() % n;
    }

  private:
    uint64_t state_;
};

} // namespace tidal
