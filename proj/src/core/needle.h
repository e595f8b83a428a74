#pragma once

#include <cstddef>
#include <cstdint>

namespace tidal {

// Selection-level needle-in-a-haystack probe. Each trial plants one key row
// (a scaled copy of the probe query, strictly dominating every filler
// inner product) at a uniform position among n random rows, then asks each
// selection method whether the planted position lands in its selected set.
// An untrained model cannot retrieve semantically, so this isolates the
// selection mechanism itself: exact top-m methods always hit, eviction
// windows hit only when the needle happens to fall inside them.
struct NeedleParams {
    size_t n = 10000;  // haystack rows
    size_t head_dim = 16;
    size_t budget = 64;  // m for the selection methods
    size_t page_size = 16;
    size_t sinks = 4;
    size_t window = 64;
    size_t trials = 1000;
    uint64_t seed = 0;
};

struct NeedleOutcome {
    uint64_t hits = 0;
    uint64_t trials = 0;

    double accuracy() const { return trials == 0 ? 0.0 : double(hits) / double(trials); }
};

struct NeedleReport {
    NeedleOutcome tidal;     // select-layer exact top-m (what PPSA reuses)
    NeedleOutcome perlayer;  // identical mechanism, re-run per layer
    NeedleOutcome page;      // page-envelope estimate
    NeedleOutcome window;    // sink + recency eviction
};

// Throws input_error unless n >= budget >= 1, head_dim >= 1, trials >= 1.
NeedleReport needle_run(const NeedleParams & p);

} // namespace tidal
