#include "core/needle.h"

#include "core/attention.h"
#include "core/error.h"
#include "core/math.h"
#include "core/rng.h"

#include <algorithm>
#include <cmath>

namespace tidal {

NeedleReport needle_run(const NeedleParams & p) {
    if (p.budget < 1 || p.n < p.budget) {
        throw input_error("needle: need n >= budget >= 1");
    }
    if (p.head_dim < 1 || p.trials < 1) {
        throw input_error("needle: head_dim and trials must be >= 1");
    }
    if (p.page_size < 1) throw input_error("needle: page_size must be >= 1");
    if (p.sinks + p.window < 1) throw input_error("needle: sinks + window must be >= 1");

    SplitMix64 rng(p.seed);
    NeedleReport rep;
    Matrix keys(p.n, p.head_dim);
    Vector q(p.head_dim);
    for (uint64_t t = 0; t < p.trials; ++t) {
        for (float & x : keys.data) x = rng.next_in(-1.0f, 1.0f);
        for (float & x : q) x = rng.next_in(-1.0f, 1.0f);
        const size_t pos = size_t(rng.next_below(p.n));

        // Scale the needle so its inner product is twice the strongest
        // filler plus one: strictly dominant with margin to spare, so float
        // rounding can never demote it below a filler.
        float max_abs = 0.0f;
        for (size_t i = 0; i < p.n; ++i) {
            max_abs = std::max(max_abs, std::fabs(dot(q.data(), keys.row(i), p.head_dim)));
        }
        const float qq = dot(q.data(), q.data(), p.head_dim);
        const float scale = (2.0f * max_abs + 1.0f) / qq;
        for (size_t d = 0; d < p.head_dim; ++d) keys.at(pos, d) = scale * q[d];

        const MatrixView kv(keys);
        const std::vector<Vector> group{q};
        const auto hit = [pos](const std::vector<uint32_t> & set) {
            return std::binary_search(set.begin(), set.end(), uint32_t(pos));
        };

        Vector scores = group_scores(group, kv, GroupAgg::sum);
        const bool exact_hit = hit(arg_top_k(scores, p.budget));
        rep.tidal.hits += exact_hit;    // the select layer's top-m is exact
        rep.perlayer.hits += exact_hit; // ...and re-running it per layer changes nothing
        rep.page.hits += hit(page_estimate_select(group, kv, p.budget, p.page_size));
        rep.window.hits += hit(window_select(p.n, p.sinks, p.window));
    }
    rep.tidal.trials = rep.perlayer.trials = rep.page.trials = rep.window.trials = p.trials;
    return rep;
}

} // namespace tidal
