#pragma once

#include <cstddef>
#include <cstdint>

namespace tidal {

// CPU microbenchmark of the four kernels at a given (n, m): mean wall-clock
// per call plus exact per-call token-load counts. Wall-clock numbers are
// machine-dependent and never asserted; the load counts and the analytic
// ratio are the reproducible part.
struct BenchParams {
    size_t n = 4096;      // cache rows
    size_t m = 64;        // budget
    size_t head_dim = 64;
    size_t page_size = 16;
    size_t iters = 10;
    size_t n_layers = 32;  // for the reported schedule load ratio
    uint64_t seed = 0;
};

struct KernelBench {
    double mean_ms = 0.0;
    uint64_t key_loads = 0;    // per call
    uint64_t value_loads = 0;  // per call
    uint64_t scans = 0;        // per call
};

struct BenchReport {
    KernelBench full;
    KernelBench select;
    KernelBench sparse;
    KernelBench page;
    // (L*n) / (4n + (L-4)m): the default schedule's per-step ratio at this n, m.
    double load_ratio = 0.0;
    double checksum = 0.0;  // folds kernel outputs so the timed work is real
};

// Throws input_error unless 1 <= m <= n and the dimensions are >= 1.
BenchReport bench_run(const BenchParams & p);

} // namespace tidal
