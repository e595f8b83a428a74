#include "core/bench.h"

#include "core/analysis.h"
#include "core/attention.h"
#include "core/error.h"
#include "core/math.h"
#include "core/rng.h"

#include <chrono>

namespace tidal {

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

} // namespace

BenchReport bench_run(const BenchParams & p) {
    if (p.m < 1 || p.m > p.n) throw input_error("bench: need 1 <= m <= n");
    if (p.head_dim < 1 || p.iters < 1 || p.page_size < 1) {
        throw input_error("bench: head_dim, iters and page_size must be >= 1");
    }
    if (p.n_layers < 4) throw input_error("bench: n_layers must be >= 4");

    SplitMix64 rng(p.seed);
    Matrix keys(p.n, p.head_dim);
    Matrix values(p.n, p.head_dim);
    Vector q(p.head_dim);
    for (float & x : keys.data) x = rng.next_in(-1.0f, 1.0f);
    for (float & x : values.data) x = rng.next_in(-1.0f, 1.0f);
    for (float & x : q) x = rng.next_in(-1.0f, 1.0f);
    const MatrixView kv(keys);
    const MatrixView vv(values);
    const std::vector<Vector> group{q};
    std::vector<uint32_t> subset(p.m);
    for (size_t i = 0; i < p.m; ++i) subset[i] = uint32_t(i * (p.n / p.m));

    BenchReport rep;
    const auto run = [&](KernelBench & kb, auto && body) {
        AccessStats stats(1);
        stats.begin_step();
        const auto t0 = clock_type::now();
        for (size_t i = 0; i < p.iters; ++i) body(stats);
        kb.mean_ms = ms_since(t0) / double(p.iters);
        const AccessStats::Counts c = stats.total();
        kb.key_loads = c.key_token_loads / p.iters;
        kb.value_loads = c.value_token_loads / p.iters;
        kb.scans = c.selection_scans / p.iters;
    };

    run(rep.full, [&](AccessStats & st) {
        const Vector o = full_attention(q, kv, vv, &st);
        rep.checksum += o[0];
    });
    run(rep.select, [&](AccessStats & st) {
        const auto [outs, idx] =
            full_attention_with_selection(group, kv, vv, p.m, GroupAgg::sum, &st);
        rep.checksum += outs[0][0] + double(idx[0]);
    });
    run(rep.sparse, [&](AccessStats & st) {
        const Vector o = sparse_attention(q, kv, vv, subset, &st);
        rep.checksum += o[0];
    });
    run(rep.page, [&](AccessStats & st) {
        const auto idx = page_estimate_select(group, kv, p.m, p.page_size, GroupAgg::sum, &st);
        rep.checksum += double(idx[0]);
    });

    rep.load_ratio = analytic_load_ratio(p.n_layers, 2, 2, p.n_layers - 4, p.n, p.m);
    return rep;
}

} // namespace tidal
