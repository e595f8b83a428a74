#pragma once

#include "core/math.h"

#include <cstdint>
#include <utility>
#include <vector>

namespace tidal {

// Per-(layer, step) token-load counters. "Loads" are unique K or V token
// rows fetched from the cache for one kv head: a full-attention pass over a
// length-n cache costs n key loads and n value loads, a sparse pass over an
// m-token buffer costs m of each. selection_scans counts rows touched by
// selection machinery (score scans, page envelopes) separately, since
// selection layers reuse the inner products they already computed for
// attention.
class AccessStats {
  public:
    struct Counts {
        uint64_t key_token_loads = 0;
        uint64_t value_token_loads = 0;
        uint64_t selection_scans = 0;
    };

    explicit AccessStats(size_t n_layers) : n_layers_(n_layers) {}

    size_t n_layers() const { return n_layers_; }
    size_t n_steps() const { return steps_.size(); }

    void begin_step();
    void add(size_t layer, uint64_t key_loads, uint64_t value_loads, uint64_t scans = 0);

    const Counts & at(size_t step, size_t layer) const { return steps_[step][layer]; }
    Counts layer_total(size_t layer) const;
    Counts total() const;

  private:
    size_t n_layers_;
    std::vector<std::vector<Counts>> steps_;
};

// Selected token positions, one list per kv head. Entries are distinct,
// ascending, and valid for the cache length they were selected from.
struct TokenBuffer {
    std::vector<std::vector<uint32_t>> per_head;

    explicit TokenBuffer(size_t n_kv_heads = 0) : per_head(n_kv_heads) {}
    bool empty_head(size_t h) const { return per_head[h].empty(); }
};

// How a GQA group folds its query heads' inner products into one selection
// score per token.
enum class GroupAgg {
    sum,  // total attention mass of the group
    max,  // strongest single head
};

// softmax((q . K^T) / sqrt(d)) . V over the whole view.
// Records rows key loads + rows value loads when stats is given.
// Throws state_error on an empty view.
Vector full_attention(const Vector & q, const MatrixView & keys, const MatrixView & values,
                      AccessStats * stats = nullptr, size_t layer = 0);

// Group inner-product scores: per token, query-head dot products folded by
// `agg`. Scores are pre-softmax; ordering matches post-softmax ranks.
Vector group_scores(const std::vector<Vector> & q_group, const MatrixView & keys, GroupAgg agg);

// Full attention for every query head in a GQA group, plus the top-m token
// selection from the group-aggregated scores. Inner products are computed
// once and shared between the attention outputs and the selection.
// Counts rows key/value loads once for the group plus rows selection scans.
std::pair<std::vector<Vector>, std::vector<uint32_t>> full_attention_with_selection(
    const std::vector<Vector> & q_group, const MatrixView & keys, const MatrixView & values,
    size_t m, GroupAgg agg = GroupAgg::sum, AccessStats * stats = nullptr, size_t layer = 0);

// Attention over exactly the buffered positions, softmax renormalized over
// that subset. Bit-identical to gathering the rows and running
// full_attention. Counts |indices| key and value loads.
// Throws bounds_error on a stale index.
Vector sparse_attention(const Vector & q, const MatrixView & keys, const MatrixView & values,
                        const std::vector<uint32_t> & indices,
                        AccessStats * stats = nullptr, size_t layer = 0);

// Quest-style baseline: per page of `page_size` consecutive tokens, an
// elementwise min/max envelope of the keys scores the page as
// sum_d max(q_d*min_d, q_d*max_d), an upper bound on every member token's
// exact score. Highest-scoring pages are taken until >= m tokens are
// covered, then truncated to m by exact per-token score. Counts rows
// selection scans (envelope pass) plus covered-token key loads (exact
// rescoring).
std::vector<uint32_t> page_estimate_select(const std::vector<Vector> & q_group,
                                           const MatrixView & keys, size_t m, size_t page_size,
                                           GroupAgg agg = GroupAgg::sum,
                                           AccessStats * stats = nullptr, size_t layer = 0);

// StreamingLLM-style eviction mask: positions [0, sinks) plus
// [seq_len - window, seq_len), clipped and deduplicated.
std::vector<uint32_t> window_select(size_t seq_len, size_t sinks, size_t window);

} // namespace tidal
