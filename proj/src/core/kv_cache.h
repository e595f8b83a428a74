#pragma once

#include "core/math.h"

#include <cstdint>
#include <utility>
#include <vector>

namespace tidal {

// Append-only key/value store, one contiguous row-major block per
// (layer, kv_head). Keys are stored with rotary embedding already applied,
// so decode-time queries never re-rotate cached rows. Length is uniform
// across layers and heads: the decode loop appends to every layer exactly
// once per token.
class KvCache {
  public:
    KvCache(size_t n_layers, size_t n_kv_heads, size_t head_dim);

    size_t n_layers() const { return n_layers_; }
    size_t n_kv_heads() const { return n_kv_heads_; }
    size_t head_dim() const { return head_dim_; }
    size_t len() const { return len_; }

    // k and v hold all heads for one layer, concatenated head-major
    // (n_kv_heads * head_dim floats). Throws shape_error otherwise.
    // Advances len once all layers have appended for the current token.
    void append(size_t layer, const Vector & k, const Vector & v);

    // Rows for the given positions, in the order given. Throws bounds_error
    // on any index >= len.
    std::pair<Matrix, Matrix> gather(size_t layer, size_t kv_head,
                                     const std::vector<uint32_t> & indices) const;

    // Zero-copy view of all rows (or keys/values separately).
    MatrixView keys(size_t layer, size_t kv_head) const;
    MatrixView values(size_t layer, size_t kv_head) const;

    // Replace the row at `position` in every head of `layer`. Same vector
    // layout as append. Throws bounds_error when position >= len.
    void overwrite(size_t layer, size_t position, const Vector & k, const Vector & v);

  private:
    struct Slot {
        std::vector<float> keys;
        std::vector<float> values;
    };

    Slot & slot(size_t layer, size_t head) { return slots_[layer * n_kv_heads_ + head]; }
    const Slot & slot(size_t layer, size_t head) const { return slots_[layer * n_kv_heads_ + head]; }
    void check_layer(size_t layer) const;

    size_t n_layers_;
    size_t n_kv_heads_;
    size_t head_dim_;
    size_t len_ = 0;
    // Appends per layer for the token in flight; len_ advances when every
    // layer has caught up.
    std::vector<size_t> layer_len_;
    std::vector<Slot> slots_;
};

// Positions decoded under a sparse schedule since the last correction.
// Kept sorted ascending and deduplicated.
class PollutionLog {
  public:
    void mark(size_t position);
    void clear() { positions_.clear(); }
    bool empty() const { return positions_.empty(); }
    const std::vector<size_t> & positions() const { return positions_; }

  private:
    std::vector<size_t> positions_;
};

// Total cache footprint in bytes: layers * kv_heads * head_dim * seq_len *
// bytes_per_scalar * 2 (keys and values).
uint64_t kv_cache_size_bytes(uint64_t n_layers, uint64_t n_kv_heads, uint64_t head_dim,
                             uint64_t seq_len, uint64_t bytes_per_scalar);

} // namespace tidal
