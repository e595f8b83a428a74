#include "core/model.h"

#include "core/error.h"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tidal {

void ModelConfig::validate() const {
    if (n_layers == 0 || n_heads == 0 || n_kv_heads == 0 || head_dim == 0 || d_ff == 0 ||
        vocab_size == 0) {
        throw shape_error("model config: all dimensions must be nonzero");
    }
    if (n_heads % n_kv_heads != 0) {
        throw shape_error("model config: n_kv_heads (" + std::to_string(n_kv_heads) +
                          ") must divide n_heads (" + std::to_string(n_heads) + ")");
    }
}

LayerSchedule::LayerSchedule(std::vector<LayerRole> roles) : roles_(std::move(roles)) {
    bool select_seen = false;
    for (size_t i = 0; i < roles_.size(); ++i) {
        if (i < 2 && roles_[i] != LayerRole::full) {
            throw schedule_error("layers 0 and 1 must be full attention");
        }
        if (roles_[i] == LayerRole::select) select_seen = true;
        if (roles_[i] == LayerRole::sparse && !select_seen) {
            throw schedule_error("sparse layer " + std::to_string(i) +
                                 " has no select layer before it");
        }
    }
}

size_t LayerSchedule::count(LayerRole r) const {
    return size_t(std::count(roles_.begin(), roles_.end(), r));
}

LayerSchedule LayerSchedule::all_full(size_t n_layers) {
    return LayerSchedule(std::vector<LayerRole>(n_layers, LayerRole::full));
}

LayerSchedule default_schedule(size_t n_layers, size_t reselect_layer) {
    if (n_layers < 4) {
        throw schedule_error("default schedule needs at least 4 layers");
    }
    if (reselect_layer <= 2 || reselect_layer >= n_layers) {
        throw schedule_error("reselect layer " + std::to_string(reselect_layer) +
                             " outside [3, " + std::to_string(n_layers) + ")");
    }
    std::vector<LayerRole> roles(n_layers, LayerRole::sparse);
    roles[0] = LayerRole::full;
    roles[1] = LayerRole::full;
    roles[2] = LayerRole::select;
    roles[reselect_layer] = LayerRole::select;
    return LayerSchedule(std::move(roles));
}

uint32_t default_reselect_layer(const ModelConfig & cfg) {
    if (cfg.n_layers == 32) {
        return cfg.n_kv_heads == cfg.n_heads ? 7u : 13u;
    }
    long long r = llround(0.41 * double(cfg.n_layers));
    if (r < 3) r = 3;
    if (r >= (long long)cfg.n_layers && cfg.n_layers > 0) r = (long long)cfg.n_layers - 1;
    return uint32_t(r);
}

ModelWeights::ModelWeights(const ModelConfig & cfg) : config(cfg) {
    cfg.validate();
    const size_t dm = cfg.d_model();
    token_embedding = Matrix(cfg.vocab_size, dm);
    layers.resize(cfg.n_layers);
    for (LayerWeights & l : layers) {
        l.attn_norm.assign(dm, 0.0f);
        l.w_q = Matrix(dm, size_t(cfg.n_heads) * cfg.head_dim);
        l.w_k = Matrix(dm, size_t(cfg.n_kv_heads) * cfg.head_dim);
        l.w_v = Matrix(dm, size_t(cfg.n_kv_heads) * cfg.head_dim);
        l.w_o = Matrix(size_t(cfg.n_heads) * cfg.head_dim, dm);
        l.ffn_norm.assign(dm, 0.0f);
        l.w_gate = Matrix(dm, cfg.d_ff);
        l.w_up = Matrix(dm, cfg.d_ff);
        l.w_down = Matrix(cfg.d_ff, dm);
    }
    final_norm.assign(dm, 0.0f);
    lm_head = Matrix(dm, cfg.vocab_size);
}

const char * decode_mode_name(DecodeMode m) {
    switch (m) {
    case DecodeMode::full: return "full";
    case DecodeMode::tidal: return "tidal";
    case DecodeMode::perlayer_topk: return "perlayer_topk";
    case DecodeMode::page_estimate: return "page_estimate";
    case DecodeMode::window: return "window";
    }
    return "?";
}

std::optional<DecodeMode> decode_mode_from_name(const std::string & name) {
    if (name == "full") return DecodeMode::full;
    if (name == "tidal") return DecodeMode::tidal;
    if (name == "perlayer_topk") return DecodeMode::perlayer_topk;
    if (name == "page_estimate") return DecodeMode::page_estimate;
    if (name == "window") return DecodeMode::window;
    return std::nullopt;
}

namespace {

struct Qkv {
    Vector q, k, v;
};

// Norm + projections + rotary for one position. Shared by the step path and
// the batch prefill so the two stay bit-identical.
Qkv project_qkv(const ModelConfig & cfg, const LayerWeights & lw, const Vector & x,
                size_t position) {
    const Vector h = rms_norm(x, lw.attn_norm, cfg.norm_eps);
    Qkv r;
    r.q = vecmat(h, lw.w_q);
    r.k = vecmat(h, lw.w_k);
    r.v = vecmat(h, lw.w_v);
    rope_apply_inplace(r.q, position, cfg.head_dim, cfg.rope_theta);
    rope_apply_inplace(r.k, position, cfg.head_dim, cfg.rope_theta);
    return r;
}

Vector ffn_forward(const LayerWeights & lw, const Vector & h) {
    Vector gate = vecmat(h, lw.w_gate);
    const Vector up = vecmat(h, lw.w_up);
    for (size_t i = 0; i < gate.size(); ++i) gate[i] = silu(gate[i]) * up[i];
    return vecmat(gate, lw.w_down);
}

Vector output_logits(const ModelWeights & w, const Vector & x) {
    return vecmat(rms_norm(x, w.final_norm, w.config.norm_eps), w.lm_head);
}

void add_inplace(Vector & x, const Vector & y) {
    for (size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

} // namespace

Session::Session(const ModelWeights & weights, DecodeConfig cfg, std::span<const uint32_t> prompt)
    : w_(weights), cfg_(std::move(cfg)),
      cache_(weights.config.n_layers, weights.config.n_kv_heads, weights.config.head_dim),
      buffer_(weights.config.n_kv_heads), stats_(weights.config.n_layers) {
    w_.config.validate();
    if (cfg_.mode != DecodeMode::full && cfg_.budget < 1) {
        throw input_error("budget must be >= 1 outside full mode");
    }
    if (cfg_.mode == DecodeMode::page_estimate && cfg_.page_size < 1) {
        throw input_error("page_size must be >= 1");
    }
    if (cfg_.mode == DecodeMode::window && cfg_.sinks + cfg_.window < 1) {
        throw input_error("sinks + window must be >= 1");
    }
    if (cfg_.mode == DecodeMode::tidal) {
        if (cfg_.schedule) {
            if (cfg_.schedule->n_layers() != w_.config.n_layers) {
                throw schedule_error("schedule length != n_layers");
            }
            schedule_ = *cfg_.schedule;
        } else {
            const uint32_t r = cfg_.reselect_layer >= 0 ? uint32_t(cfg_.reselect_layer)
                                                        : default_reselect_layer(w_.config);
            schedule_ = default_schedule(w_.config.n_layers, r);
        }
    } else {
        schedule_ = LayerSchedule::all_full(w_.config.n_layers);
    }
    auto [cache, logits] = prefill(w_, prompt);
    cache_ = std::move(cache);
    logits_ = std::move(logits);
    tokens_.assign(prompt.begin(), prompt.end());
}

Vector Session::step(uint32_t token) {
    if (token >= w_.config.vocab_size) {
        throw input_error("token id " + std::to_string(token) + " >= vocab_size");
    }
    const size_t position = cache_.len();
    tokens_.push_back(token);
    stats_.begin_step();
    if (capture_k_ > 0) {
        capture_sets_.emplace_back(
            w_.config.n_layers,
            std::vector<std::vector<uint32_t>>(w_.config.n_kv_heads));
    }
    logits_ = forward_one(token, position);
    step_lens_.push_back(cache_.len());
    if (cfg_.mode != DecodeMode::full) {
        pollution_.mark(position);
        if (cfg_.correction_period > 0 &&
            ++steps_since_correction_ >= cfg_.correction_period) {
            correct_cache();
            steps_since_correction_ = 0;
        }
    }
    return logits_;
}

uint32_t Session::decode_next() {
    uint32_t best = 0;
    for (uint32_t i = 1; i < logits_.size(); ++i) {
        if (logits_[i] > logits_[best]) best = i;
    }
    step(best);
    return best;
}

std::vector<uint32_t> Session::generate(size_t n_steps) {
    std::vector<uint32_t> out;
    out.reserve(n_steps);
    for (size_t i = 0; i < n_steps; ++i) out.push_back(decode_next());
    return out;
}

Vector Session::forward_one(uint32_t token, size_t position) {
    const ModelConfig & cfg = w_.config;
    const size_t hd = cfg.head_dim;
    const size_t gs = cfg.group_size();
    const float * emb = w_.token_embedding.row(token);
    Vector x(emb, emb + cfg.d_model());
    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights & lw = w_.layers[l];
        const Qkv qkv = project_qkv(cfg, lw, x, position);
        cache_.append(l, qkv.k, qkv.v);
        Vector out_all(cfg.d_model(), 0.0f);
        for (size_t g = 0; g < cfg.n_kv_heads; ++g) {
            std::vector<Vector> qg(gs);
            for (size_t j = 0; j < gs; ++j) {
                const size_t off = (g * gs + j) * hd;
                qg[j].assign(qkv.q.begin() + off, qkv.q.begin() + off + hd);
            }
            attend_group(l, g, qg, out_all);
        }
        add_inplace(x, vecmat(out_all, lw.w_o));
        add_inplace(x, ffn_forward(lw, rms_norm(x, lw.ffn_norm, cfg.norm_eps)));
    }
    return output_logits(w_, x);
}

void Session::attend_group(size_t layer, size_t kv_head, const std::vector<Vector> & q_group,
                           Vector & out_all) {
    const ModelConfig & cfg = w_.config;
    const size_t hd = cfg.head_dim;
    const size_t gs = cfg.group_size();
    const MatrixView keys = cache_.keys(layer, kv_head);
    const MatrixView values = cache_.values(layer, kv_head);
    const size_t len = keys.rows;
    const size_t m_eff = std::min<size_t>(cfg_.budget, len);
    const auto write = [&](size_t j, const Vector & o) {
        std::copy(o.begin(), o.end(), out_all.begin() + (kv_head * gs + j) * hd);
    };
    const auto dense = [&] {
        for (size_t j = 0; j < gs; ++j) {
            write(j, full_attention(q_group[j], keys, values, j == 0 ? &stats_ : nullptr, layer));
        }
    };
    if (capture_k_ > 0) {
        capture_sets_.back()[layer][kv_head] =
            arg_top_k(group_scores(q_group, keys, cfg_.group_agg), capture_k_);
    }
    switch (cfg_.mode) {
    case DecodeMode::full:
        dense();
        return;
    case DecodeMode::tidal:
        switch (schedule_.role(layer)) {
        case LayerRole::full:
            dense();
            return;
        case LayerRole::select: {
            auto [outs, idx] = full_attention_with_selection(q_group, keys, values, m_eff,
                                                             cfg_.group_agg, &stats_, layer);
            buffer_.per_head[kv_head] = std::move(idx);
            for (size_t j = 0; j < gs; ++j) write(j, outs[j]);
            return;
        }
        case LayerRole::sparse: {
            if (buffer_.empty_head(kv_head)) {
                throw schedule_error("sparse layer " + std::to_string(layer) +
                                     " reached with an empty token buffer");
            }
            const std::vector<uint32_t> * idx = &buffer_.per_head[kv_head];
            std::vector<uint32_t> with_current;
            if (cfg_.include_current && idx->back() != uint32_t(len - 1)) {
                with_current = *idx;
                with_current.push_back(uint32_t(len - 1));
                idx = &with_current;
            }
            for (size_t j = 0; j < gs; ++j) {
                write(j, sparse_attention(q_group[j], keys, values, *idx,
                                          j == 0 ? &stats_ : nullptr, layer));
            }
            return;
        }
        }
        return;
    case DecodeMode::perlayer_topk: {
        if (layer < 2) {
            dense();
            return;
        }
        const std::vector<uint32_t> idx =
            arg_top_k(group_scores(q_group, keys, cfg_.group_agg), m_eff);
        // The score pass touches every key; attention then re-reads only the
        // m selected values (the keys' inner products are already in hand).
        stats_.add(layer, len, m_eff, len);
        for (size_t j = 0; j < gs; ++j) {
            write(j, sparse_attention(q_group[j], keys, values, idx, nullptr, layer));
        }
        return;
    }
    case DecodeMode::page_estimate: {
        if (layer < 2) {
            dense();
            return;
        }
        const std::vector<uint32_t> idx = page_estimate_select(
            q_group, keys, m_eff, cfg_.page_size, cfg_.group_agg, &stats_, layer);
        stats_.add(layer, 0, m_eff);
        for (size_t j = 0; j < gs; ++j) {
            write(j, sparse_attention(q_group[j], keys, values, idx, nullptr, layer));
        }
        return;
    }
    case DecodeMode::window: {
        if (layer < 2) {
            dense();
            return;
        }
        const std::vector<uint32_t> idx = window_select(len, cfg_.sinks, cfg_.window);
        for (size_t j = 0; j < gs; ++j) {
            write(j, sparse_attention(q_group[j], keys, values, idx,
                                      j == 0 ? &stats_ : nullptr, layer));
        }
        return;
    }
    }
}

void Session::correct_cache() {
    if (pollution_.empty()) return;
    if (tokens_.size() < cache_.len()) {
        throw state_error("cache correction: realized token list shorter than cache");
    }
    auto [scratch, logits] = prefill(w_, std::span<const uint32_t>(tokens_).first(cache_.len()));
    (void)logits;
    const size_t hd = w_.config.head_dim;
    const size_t n_kv = w_.config.n_kv_heads;
    Vector k(n_kv * hd);
    Vector v(n_kv * hd);
    for (const size_t pos : pollution_.positions()) {
        for (size_t l = 0; l < w_.config.n_layers; ++l) {
            for (size_t h = 0; h < n_kv; ++h) {
                std::memcpy(k.data() + h * hd, scratch.keys(l, h).row(pos), hd * sizeof(float));
                std::memcpy(v.data() + h * hd, scratch.values(l, h).row(pos), hd * sizeof(float));
            }
            cache_.overwrite(l, pos, k, v);
        }
    }
    pollution_.clear();
}

void Session::enable_topk_capture(uint32_t k) {
    if (k < 1) throw budget_error("capture k must be >= 1");
    capture_k_ = k;
}

std::pair<KvCache, Vector> prefill(const ModelWeights & w, std::span<const uint32_t> tokens) {
    const ModelConfig & cfg = w.config;
    cfg.validate();
    if (tokens.empty()) throw input_error("prefill: empty prompt");
    for (const uint32_t t : tokens) {
        if (t >= cfg.vocab_size) {
            throw input_error("prefill: token id " + std::to_string(t) + " >= vocab_size");
        }
    }
    const size_t n = tokens.size();
    const size_t hd = cfg.head_dim;
    const size_t gs = cfg.group_size();
    const size_t dm = cfg.d_model();

    std::vector<Vector> xs(n);
    for (size_t i = 0; i < n; ++i) {
        const float * emb = w.token_embedding.row(tokens[i]);
        xs[i].assign(emb, emb + dm);
    }

    // Per-(layer, kv head) K/V rows in cache layout. The pass is layer-major,
    // so rows are staged here and appended to the cache token-major at the
    // end (the cache insists on one append per layer per token).
    std::vector<std::vector<float>> lk(size_t(cfg.n_layers) * cfg.n_kv_heads);
    std::vector<std::vector<float>> lv(lk.size());

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights & lw = w.layers[l];
        std::vector<Vector> qs(n);
        for (size_t i = 0; i < n; ++i) {
            Qkv qkv = project_qkv(cfg, lw, xs[i], i);
            qs[i] = std::move(qkv.q);
            for (size_t h = 0; h < cfg.n_kv_heads; ++h) {
                auto & K = lk[l * cfg.n_kv_heads + h];
                auto & V = lv[l * cfg.n_kv_heads + h];
                K.insert(K.end(), qkv.k.begin() + h * hd, qkv.k.begin() + (h + 1) * hd);
                V.insert(V.end(), qkv.v.begin() + h * hd, qkv.v.begin() + (h + 1) * hd);
            }
        }
        for (size_t i = 0; i < n; ++i) {
            Vector out_all(dm, 0.0f);
            for (size_t g = 0; g < cfg.n_kv_heads; ++g) {
                const MatrixView keys(i + 1, hd, lk[l * cfg.n_kv_heads + g].data());
                const MatrixView values(i + 1, hd, lv[l * cfg.n_kv_heads + g].data());
                for (size_t j = 0; j < gs; ++j) {
                    const size_t off = (g * gs + j) * hd;
                    const Vector q(qs[i].begin() + off, qs[i].begin() + off + hd);
                    const Vector o = full_attention(q, keys, values);
                    std::copy(o.begin(), o.end(), out_all.begin() + off);
                }
            }
            add_inplace(xs[i], vecmat(out_all, lw.w_o));
            add_inplace(xs[i], ffn_forward(lw, rms_norm(xs[i], lw.ffn_norm, cfg.norm_eps)));
        }
    }

    KvCache cache(cfg.n_layers, cfg.n_kv_heads, hd);
    Vector krow(size_t(cfg.n_kv_heads) * hd);
    Vector vrow(krow.size());
    for (size_t i = 0; i < n; ++i) {
        for (size_t l = 0; l < cfg.n_layers; ++l) {
            for (size_t h = 0; h < cfg.n_kv_heads; ++h) {
                std::memcpy(krow.data() + h * hd, lk[l * cfg.n_kv_heads + h].data() + i * hd,
                            hd * sizeof(float));
                std::memcpy(vrow.data() + h * hd, lv[l * cfg.n_kv_heads + h].data() + i * hd,
                            hd * sizeof(float));
            }
            cache.append(l, krow, vrow);
        }
    }
    return {std::move(cache), output_logits(w, xs[n - 1])};
}

double eval_cross_entropy(const ModelWeights & weights, const DecodeConfig & cfg,
                          std::span<const uint32_t> tokens, size_t warmup) {
    if (warmup < 1 || warmup >= tokens.size()) {
        throw input_error("eval: warmup must be in [1, n_tokens)");
    }
    Session s(weights, cfg, tokens.first(warmup));
    double sum = 0.0;
    for (size_t p = warmup; p < tokens.size(); ++p) {
        const uint32_t target = tokens[p];
        if (target >= weights.config.vocab_size) {
            throw input_error("eval: token id " + std::to_string(target) + " >= vocab_size");
        }
        const Vector & lg = s.logits();
        const float mx = *std::max_element(lg.begin(), lg.end());
        double se = 0.0;
        for (const float v : lg) se += std::exp(double(v) - double(mx));
        sum += std::log(se) + double(mx) - double(lg[target]);
        if (p + 1 < tokens.size()) s.step(target);
    }
    return sum / double(tokens.size() - warmup);
}

} // namespace tidal
