#include "core/attention.h"

#include "core/error.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tidal {

void AccessStats::begin_step() {
    steps_.emplace_back(n_layers_);
}

void AccessStats::add(size_t layer, uint64_t key_loads, uint64_t value_loads, uint64_t scans) {
    if (layer >= n_layers_) {
        throw bounds_error("AccessStats: layer out of range");
    }
    if (steps_.empty()) {
        begin_step();
    }
    Counts & c = steps_.back()[layer];
    c.key_token_loads += key_loads;
    c.value_token_loads += value_loads;
    c.selection_scans += scans;
}

AccessStats::Counts AccessStats::layer_total(size_t layer) const {
    Counts out;
    for (const auto & step : steps_) {
        out.key_token_loads += step[layer].key_token_loads;
        out.value_token_loads += step[layer].value_token_loads;
        out.selection_scans += step[layer].selection_scans;
    }
    return out;
}

AccessStats::Counts AccessStats::total() const {
    Counts out;
    for (size_t l = 0; l < n_layers_; ++l) {
        const Counts c = layer_total(l);
        out.key_token_loads += c.key_token_loads;
        out.value_token_loads += c.value_token_loads;
        out.selection_scans += c.selection_scans;
    }
    return out;
}

namespace {

// Scores, softmax, and the weighted value sum share one code path so the
// sparse kernel and the gather-then-full oracle agree bit for bit.
Vector attend_rows(const Vector & q, const MatrixView & keys, const MatrixView & values,
                   const uint32_t * rows, size_t n_rows) {
    const size_t d = keys.cols;
    const float scale = 1.0f / std::sqrt(float(d));
    Vector scores(n_rows);
    for (size_t i = 0; i < n_rows; ++i) {
        const size_t r = rows ? rows[i] : i;
        scores[i] = dot(q.data(), keys.row(r), d) * scale;
    }
    const Vector probs = softmax_row(scores);
    Vector out(values.cols, 0.0f);
    for (size_t i = 0; i < n_rows; ++i) {
        const size_t r = rows ? rows[i] : i;
        const float * vrow = values.row(r);
        const float p = probs[i];
        for (size_t c = 0; c < values.cols; ++c) {
            out[c] += p * vrow[c];
        }
    }
    return out;
}

void check_qkv(const Vector & q, const MatrixView & keys, const MatrixView & values) {
    if (keys.rows == 0) {
        throw state_error("attention: empty cache");
    }
    if (keys.rows != values.rows) {
        throw shape_error("attention: keys/values row count mismatch");
    }
    if (q.size() != keys.cols || keys.cols != values.cols) {
        throw shape_error("attention: head dimension mismatch");
    }
}

} // namespace

Vector full_attention(const Vector & q, const MatrixView & keys, const MatrixView & values,
                      AccessStats * stats, size_t layer) {
    check_qkv(q, keys, values);
    if (stats) {
        stats->add(layer, keys.rows, keys.rows);
    }
    return attend_rows(q, keys, values, nullptr, keys.rows);
}

Vector group_scores(const std::vector<Vector> & q_group, const MatrixView & keys, GroupAgg agg) {
    if (q_group.empty()) {
        throw shape_error("group_scores: empty query group");
    }
    const size_t d = keys.cols;
    Vector scores(keys.rows, 0.0f);
    for (size_t h = 0; h < q_group.size(); ++h) {
        const Vector & q = q_group[h];
        if (q.size() != d) {
            throw shape_error("group_scores: query length mismatch");
        }
        for (size_t r = 0; r < keys.rows; ++r) {
            const float s = dot(q.data(), keys.row(r), d);
            if (agg == GroupAgg::sum) {
                scores[r] = (h == 0) ? s : scores[r] + s;
            } else {
                scores[r] = (h == 0) ? s : std::max(scores[r], s);
            }
        }
    }
    return scores;
}

std::pair<std::vector<Vector>, std::vector<uint32_t>> full_attention_with_selection(
    const std::vector<Vector> & q_group, const MatrixView & keys, const MatrixView & values,
    size_t m, GroupAgg agg, AccessStats * stats, size_t layer) {
    if (q_group.empty()) {
        throw shape_error("full_attention_with_selection: empty query group");
    }
    check_qkv(q_group[0], keys, values);
    if (m < 1 || m > keys.rows) {
        throw budget_error("full_attention_with_selection: budget " + std::to_string(m) +
                           " out of range for " + std::to_string(keys.rows) + " tokens");
    }

    const size_t d = keys.cols;
    const float scale = 1.0f / std::sqrt(float(d));

    // One pass of inner products per query head, reused for both the
    // attention softmax and the selection scores.
    std::vector<Vector> raw(q_group.size(), Vector(keys.rows));
    for (size_t h = 0; h < q_group.size(); ++h) {
        if (q_group[h].size() != d) {
            throw shape_error("full_attention_with_selection: query length mismatch");
        }
        for (size_t r = 0; r < keys.rows; ++r) {
            raw[h][r] = dot(q_group[h].data(), keys.row(r), d);
        }
    }

    std::vector<Vector> outputs;
    outputs.reserve(q_group.size());
    for (size_t h = 0; h < q_group.size(); ++h) {
        Vector scaled(keys.rows);
        for (size_t r = 0; r < keys.rows; ++r) {
            scaled[r] = raw[h][r] * scale;
        }
        const Vector probs = softmax_row(scaled);
        Vector out(values.cols, 0.0f);
        for (size_t r = 0; r < keys.rows; ++r) {
            const float * vrow = values.row(r);
            for (size_t c = 0; c < values.cols; ++c) {
                out[c] += probs[r] * vrow[c];
            }
        }
        outputs.push_back(std::move(out));
    }

    Vector agg_scores(keys.rows, 0.0f);
    for (size_t r = 0; r < keys.rows; ++r) {
        float s = raw[0][r];
        for (size_t h = 1; h < q_group.size(); ++h) {
            s = (agg == GroupAgg::sum) ? s + raw[h][r] : std::max(s, raw[h][r]);
        }
        agg_scores[r] = s;
    }
    std::vector<uint32_t> selected = arg_top_k(agg_scores, m);

    if (stats) {
        stats->add(layer, keys.rows, keys.rows, keys.rows);
    }
    return {std::move(outputs), std::move(selected)};
}

Vector sparse_attention(const Vector & q, const MatrixView & keys, const MatrixView & values,
                        const std::vector<uint32_t> & indices,
                        AccessStats * stats, size_t layer) {
    if (indices.empty()) {
        throw state_error("sparse_attention: empty token buffer");
    }
    if (keys.rows != values.rows || q.size() != keys.cols) {
        throw shape_error("sparse_attention: dimension mismatch");
    }
    for (uint32_t idx : indices) {
        if (idx >= keys.rows) {
            throw bounds_error("sparse_attention: stale buffer index " + std::to_string(idx) +
                               " >= len " + std::to_string(keys.rows));
        }
    }
    if (stats) {
        stats->add(layer, indices.size(), indices.size());
    }
    return attend_rows(q, keys, values, indices.data(), indices.size());
}

std::vector<uint32_t> page_estimate_select(const std::vector<Vector> & q_group,
                                           const MatrixView & keys, size_t m, size_t page_size,
                                           GroupAgg agg, AccessStats * stats, size_t layer) {
    if (page_size < 1) {
        throw shape_error("page_estimate_select: page_size must be >= 1");
    }
    if (m < 1 || m > keys.rows) {
        throw budget_error("page_estimate_select: budget out of range");
    }
    if (q_group.empty()) {
        throw shape_error("page_estimate_select: empty query group");
    }
    const size_t d = keys.cols;
    const size_t n = keys.rows;
    for (const Vector & q : q_group) {
        if (q.size() != d) {
            throw shape_error("page_estimate_select: query length mismatch");
        }
    }
    const size_t n_pages = (n + page_size - 1) / page_size;

    // Page score: envelope bound on the group score, summed or maxed over
    // query heads to mirror the exact-selection aggregation.
    std::vector<float> page_score(n_pages);
    for (size_t p = 0; p < n_pages; ++p) {
        const size_t begin = p * page_size;
        const size_t end = std::min(begin + page_size, n);
        Vector lo(keys.row(begin), keys.row(begin) + d);
        Vector hi(lo);
        for (size_t r = begin + 1; r < end; ++r) {
            const float * row = keys.row(r);
            for (size_t c = 0; c < d; ++c) {
                lo[c] = std::min(lo[c], row[c]);
                hi[c] = std::max(hi[c], row[c]);
            }
        }
        float score = 0.0f;
        for (size_t h = 0; h < q_group.size(); ++h) {
            const Vector & q = q_group[h];
            float s = 0.0f;
            for (size_t c = 0; c < d; ++c) {
                s += std::max(q[c] * lo[c], q[c] * hi[c]);
            }
            score = (h == 0) ? s
                  : (agg == GroupAgg::sum) ? score + s
                                           : std::max(score, s);
        }
        page_score[p] = score;
    }

    // Highest-scoring pages first, ties toward the lower page index.
    std::vector<uint32_t> order(n_pages);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&page_score](uint32_t a, uint32_t b) {
        if (page_score[a] != page_score[b]) {
            return page_score[a] > page_score[b];
        }
        return a < b;
    });

    std::vector<uint32_t> covered;
    for (uint32_t p : order) {
        const size_t begin = size_t(p) * page_size;
        const size_t end = std::min(begin + page_size, n);
        for (size_t r = begin; r < end; ++r) {
            covered.push_back(uint32_t(r));
        }
        if (covered.size() >= m) {
            break;
        }
    }

    // Exact scores inside the chosen pages pick the final m; only covered
    // rows are rescored, which is exactly what the key-load counter records.
    std::sort(covered.begin(), covered.end());
    std::vector<float> covered_scores(covered.size());
    for (size_t i = 0; i < covered.size(); ++i) {
        const float * row = keys.row(covered[i]);
        float s = 0.0f;
        for (size_t h = 0; h < q_group.size(); ++h) {
            const float v = dot(q_group[h].data(), row, d);
            s = (h == 0) ? v : (agg == GroupAgg::sum) ? s + v : std::max(s, v);
        }
        covered_scores[i] = s;
    }
    const std::vector<uint32_t> local = arg_top_k(covered_scores.data(), covered_scores.size(), m);
    std::vector<uint32_t> result(m);
    for (size_t i = 0; i < m; ++i) {
        result[i] = covered[local[i]];
    }
    std::sort(result.begin(), result.end());

    if (stats) {
        stats->add(layer, covered.size(), 0, n);
    }
    return result;
}

std::vector<uint32_t> window_select(size_t seq_len, size_t sinks, size_t window) {
    std::vector<uint32_t> out;
    const size_t sink_end = std::min(sinks, seq_len);
    for (size_t i = 0; i < sink_end; ++i) {
        out.push_back(uint32_t(i));
    }
    const size_t win_begin = std::max(seq_len > window ? seq_len - window : 0, sink_end);
    for (size_t i = win_begin; i < seq_len; ++i) {
        out.push_back(uint32_t(i));
    }
    return out;
}

} // namespace tidal
