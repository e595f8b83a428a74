#pragma once

#include "core/model.h"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tidal {

// Exact per-layer top-k token sets recorded under full attention, the raw
// material for the overlap / recall diagnostics.
struct TraceRecord {
    uint32_t k = 0;
    size_t n_layers = 0;
    size_t n_kv_heads = 0;
    // [step][layer][kv_head] -> ascending positions, exactly k of them
    std::vector<std::vector<std::vector<std::vector<uint32_t>>>> sets;
    std::vector<size_t> cache_lens;  // cache length at each recorded step

    size_t n_steps() const { return sets.size(); }
};

// Runs n_steps of greedy full-attention decoding from the prompt, recording
// each (layer, kv head)'s exact top-k set per step. Requires 1 <= k <=
// prompt length (budget_error) and n_steps >= 1 (input_error).
TraceRecord trace_topk(const ModelWeights & weights, std::span<const uint32_t> prompt,
                       uint32_t k, size_t n_steps);

using OverlapMatrix = std::vector<std::vector<double>>;

// entry (i,j) = mean over steps and kv heads of |S_i n S_j| / k.
// Diagonal is exactly 1; the matrix is symmetric by construction.
// Throws state_error on an empty trace.
OverlapMatrix overlap_matrix(const TraceRecord & trace);

// Recall of the simulated persistent buffer against layer's ground truth:
// the buffer holds S_base for layers before r and is refreshed to S_r from
// layer r on, so layer r itself always scores 1. Requires
// base < r < n_layers and base < layer < n_layers (schedule_error).
double layer_recall(const TraceRecord & trace, size_t base, size_t r, size_t layer);

// Mean of layer_recall over the sparse layers (base, n_layers) excluding r
// itself (r is a selection layer, its set is ground truth by construction).
// Degenerate schedules with no sparse layer recall 1 vacuously.
double recall_by_reselection(const TraceRecord & trace, size_t base, size_t r);

// CSV emitters. Real values carry 6 decimal places, index columns are plain
// integers, rows are newline-terminated.
std::string overlap_csv(const OverlapMatrix & m);
// one row per candidate r in [base+1, n_layers): "reselect_layer,mean_recall"
std::string recall_csv(const TraceRecord & trace, size_t base = 2);
// one row per (step, layer, rank): "step,layer,rank,token_position"
std::string heatmap_csv(const TraceRecord & trace, size_t kv_head);
// inverse of heatmap_csv: [step][layer] -> positions in rank order
std::vector<std::vector<std::vector<uint32_t>>> heatmap_parse(const std::string & csv);

// Token-load ratios for a finished session: counted from its AccessStats,
// analytic from the schedule shape and per-step cache lengths. The two are
// identical (exactly) in tidal and full modes.
struct AccessReport {
    uint64_t counted_loads = 0;     // key + value loads actually recorded
    uint64_t full_equiv_loads = 0;  // the same run under all-full attention
    double counted_ratio = 0.0;     // full_equiv / counted
    double analytic_ratio = 0.0;
};

AccessReport access_report(const Session & session);

// Closed form (L*n) / ((n_full + n_select)*n + n_sparse*m): per-step load
// ratio of a fixed-length-n cache under the given layer mix.
double analytic_load_ratio(size_t n_layers, size_t n_full, size_t n_select, size_t n_sparse,
                           size_t n, size_t m);

} // namespace tidal
