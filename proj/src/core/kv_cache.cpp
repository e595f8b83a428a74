#include "core/kv_cache.h"

#include "core/error.h"

#include <algorithm>
#include <cstring>

namespace tidal {

KvCache::KvCache(size_t n_layers, size_t n_kv_heads, size_t head_dim)
    : n_layers_(n_layers), n_kv_heads_(n_kv_heads), head_dim_(head_dim),
      layer_len_(n_layers, 0), slots_(n_layers * n_kv_heads) {
    if (n_layers == 0 || n_kv_heads == 0 || head_dim == 0) {
        throw shape_error("KvCache: all dimensions must be nonzero");
    }
}

void KvCache::check_layer(size_t layer) const {
    if (layer >= n_layers_) {
        throw bounds_error("KvCache: layer " + std::to_string(layer) + " out of range");
    }
}

void KvCache::append(size_t layer, const Vector & k, const Vector & v) {
    check_layer(layer);
    const size_t expect = n_kv_heads_ * head_dim_;
    if (k.size() != expect || v.size() != expect) {
        throw shape_error("KvCache::append: expected " + std::to_string(expect) +
                          " floats per vector, got k=" + std::to_string(k.size()) +
                          " v=" + std::to_string(v.size()));
    }
    if (layer_len_[layer] != len_) {
        throw state_error("KvCache::append: layer " + std::to_string(layer) +
                          " already appended for this token");
    }
    for (size_t h = 0; h < n_kv_heads_; ++h) {
        Slot & s = slot(layer, h);
        s.keys.insert(s.keys.end(), k.begin() + h * head_dim_, k.begin() + (h + 1) * head_dim_);
        s.values.insert(s.values.end(), v.begin() + h * head_dim_, v.begin() + (h + 1) * head_dim_);
    }
    layer_len_[layer] = len_ + 1;
    // Token is complete once every layer has its row.
    if (std::all_of(layer_len_.begin(), layer_len_.end(),
                    [this](size_t l) { return l == len_ + 1; })) {
        ++len_;
    }
}

MatrixView KvCache::keys(size_t layer, size_t kv_head) const {
    check_layer(layer);
    const Slot & s = slot(layer, kv_head);
    return MatrixView(layer_len_[layer], head_dim_, s.keys.data());
}

MatrixView KvCache::values(size_t layer, size_t kv_head) const {
    check_layer(layer);
    const Slot & s = slot(layer, kv_head);
    return MatrixView(layer_len_[layer], head_dim_, s.values.data());
}

std::pair<Matrix, Matrix> KvCache::gather(size_t layer, size_t kv_head,
                                          const std::vector<uint32_t> & indices) const {
    const MatrixView ks = keys(layer, kv_head);
    const MatrixView vs = values(layer, kv_head);
    Matrix gk(indices.size(), head_dim_);
    Matrix gv(indices.size(), head_dim_);
    for (size_t i = 0; i < indices.size(); ++i) {
        const uint32_t pos = indices[i];
        if (pos >= ks.rows) {
            throw bounds_error("KvCache::gather: position " + std::to_string(pos) +
                               " >= len " + std::to_string(ks.rows));
        }
        std::memcpy(gk.row(i), ks.row(pos), head_dim_ * sizeof(float));
        std::memcpy(gv.row(i), vs.row(pos), head_dim_ * sizeof(float));
    }
    return {std::move(gk), std::move(gv)};
}

void KvCache::overwrite(size_t layer, size_t position, const Vector & k, const Vector & v) {
    check_layer(layer);
    const size_t expect = n_kv_heads_ * head_dim_;
    if (k.size() != expect || v.size() != expect) {
        throw shape_error("KvCache::overwrite: wrong vector length");
    }
    if (position >= layer_len_[layer]) {
        throw bounds_error("KvCache::overwrite: position " + std::to_string(position) +
                           " >= len " + std::to_string(layer_len_[layer]));
    }
    for (size_t h = 0; h < n_kv_heads_; ++h) {
        Slot & s = slot(layer, h);
        std::memcpy(s.keys.data() + position * head_dim_, k.data() + h * head_dim_,
                    head_dim_ * sizeof(float));
        std::memcpy(s.values.data() + position * head_dim_, v.data() + h * head_dim_,
                    head_dim_ * sizeof(float));
    }
}

void PollutionLog::mark(size_t position) {
    auto it = std::lower_bound(positions_.begin(), positions_.end(), position);
    if (it == positions_.end() || *it != position) {
        positions_.insert(it, position);
    }
}

uint64_t kv_cache_size_bytes(uint64_t n_layers, uint64_t n_kv_heads, uint64_t head_dim,
                             uint64_t seq_len, uint64_t bytes_per_scalar) {
    return n_layers * n_kv_heads * head_dim * seq_len * bytes_per_scalar * 2;
}

} // namespace tidal
