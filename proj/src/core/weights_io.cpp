#include "core/weights_io.h"

#include "core/error.h"
#include "core/rng.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace tidal {

// Tensors are written with memcpy semantics, so the host must already be
// little-endian for the on-disk format to come out right.
static_assert(std::endian::native == std::endian::little,
              "TDW1 serialization assumes a little-endian host");

namespace {

constexpr char magic[4] = {'T', 'D', 'W', '1'};

struct Writer {
    std::ofstream out;

    explicit Writer(const std::string & path) : out(path, std::ios::binary) {
        if (!out) throw format_error("cannot open " + path + " for writing");
    }
    void u32(uint32_t v) { out.write(reinterpret_cast<const char *>(&v), 4); }
    void f32(float v) { out.write(reinterpret_cast<const char *>(&v), 4); }
    void floats(const float * p, size_t n) {
        out.write(reinterpret_cast<const char *>(p), std::streamsize(n * 4));
    }
};

struct Cursor {
    const uint8_t * p;
    size_t left;

    void need(size_t n, const char * what) {
        if (left < n) throw format_error(std::string("truncated file: ") + what);
    }
    uint32_t u32(const char * what) {
        need(4, what);
        uint32_t v;
        std::memcpy(&v, p, 4);
        p += 4;
        left -= 4;
        return v;
    }
    float f32(const char * what) {
        need(4, what);
        float v;
        std::memcpy(&v, p, 4);
        p += 4;
        left -= 4;
        return v;
    }
    void floats(float * dst, size_t n, const char * what) {
        need(n * 4, what);
        std::memcpy(dst, p, n * 4);
        p += n * 4;
        left -= n * 4;
    }
};

} // namespace

uint64_t weights_scalar_count(const ModelConfig & cfg) {
    const uint64_t dm = cfg.d_model();
    const uint64_t per_layer = dm                                        // attn_norm
                               + dm * (uint64_t(cfg.n_heads) * cfg.head_dim)      // W_q
                               + 2 * dm * (uint64_t(cfg.n_kv_heads) * cfg.head_dim) // W_k, W_v
                               + (uint64_t(cfg.n_heads) * cfg.head_dim) * dm      // W_o
                               + dm                                       // ffn_norm
                               + 2 * dm * cfg.d_ff                        // W_gate, W_up
                               + uint64_t(cfg.d_ff) * dm;                 // W_down
    return uint64_t(cfg.vocab_size) * dm + uint64_t(cfg.n_layers) * per_layer + dm +
           dm * uint64_t(cfg.vocab_size);
}

uint64_t weights_file_bytes(const ModelConfig & cfg) {
    return weights_header_bytes + 4 * weights_scalar_count(cfg);
}

void save_weights(const ModelWeights & w, const std::string & path) {
    w.config.validate();
    Writer wr(path);
    wr.out.write(magic, 4);
    wr.u32(weights_format_version);
    wr.u32(w.config.n_layers);
    wr.u32(w.config.n_heads);
    wr.u32(w.config.n_kv_heads);
    wr.u32(w.config.head_dim);
    wr.u32(w.config.d_ff);
    wr.u32(w.config.vocab_size);
    wr.f32(w.config.rope_theta);
    wr.f32(w.config.norm_eps);

    wr.floats(w.token_embedding.data.data(), w.token_embedding.data.size());
    for (const LayerWeights & l : w.layers) {
        wr.floats(l.attn_norm.data(), l.attn_norm.size());
        wr.floats(l.w_q.data.data(), l.w_q.data.size());
        wr.floats(l.w_k.data.data(), l.w_k.data.size());
        wr.floats(l.w_v.data.data(), l.w_v.data.size());
        wr.floats(l.w_o.data.data(), l.w_o.data.size());
        wr.floats(l.ffn_norm.data(), l.ffn_norm.size());
        wr.floats(l.w_gate.data.data(), l.w_gate.data.size());
        wr.floats(l.w_up.data.data(), l.w_up.data.size());
        wr.floats(l.w_down.data.data(), l.w_down.data.size());
    }
    wr.floats(w.final_norm.data(), w.final_norm.size());
    wr.floats(w.lm_head.data.data(), w.lm_head.data.size());
    wr.out.flush();
    if (!wr.out) throw format_error("write failed: " + path);
}

ModelWeights load_weights(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    Cursor c{bytes.data(), bytes.size()};

    c.need(4, "magic");
    if (std::memcmp(c.p, magic, 4) != 0) throw format_error("bad magic (not a TDW1 file)");
    c.p += 4;
    c.left -= 4;
    const uint32_t version = c.u32("version");
    if (version != weights_format_version) {
        throw format_error("unsupported format version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.n_layers = c.u32("n_layers");
    cfg.n_heads = c.u32("n_heads");
    cfg.n_kv_heads = c.u32("n_kv_heads");
    cfg.head_dim = c.u32("head_dim");
    cfg.d_ff = c.u32("d_ff");
    cfg.vocab_size = c.u32("vocab_size");
    cfg.rope_theta = c.f32("rope_theta");
    cfg.norm_eps = c.f32("norm_eps");
    try {
        cfg.validate();
    } catch (const error & e) {
        throw format_error(std::string("invalid header dimensions: ") + e.what());
    }

    ModelWeights w(cfg);
    c.floats(w.token_embedding.data.data(), w.token_embedding.data.size(), "token_embedding");
    for (LayerWeights & l : w.layers) {
        c.floats(l.attn_norm.data(), l.attn_norm.size(), "attn_norm");
        c.floats(l.w_q.data.data(), l.w_q.data.size(), "W_q");
        c.floats(l.w_k.data.data(), l.w_k.data.size(), "W_k");
        c.floats(l.w_v.data.data(), l.w_v.data.size(), "W_v");
        c.floats(l.w_o.data.data(), l.w_o.data.size(), "W_o");
        c.floats(l.ffn_norm.data(), l.ffn_norm.size(), "ffn_norm");
        c.floats(l.w_gate.data.data(), l.w_gate.data.size(), "W_gate");
        c.floats(l.w_up.data.data(), l.w_up.data.size(), "W_up");
        c.floats(l.w_down.data.data(), l.w_down.data.size(), "W_down");
    }
    c.floats(w.final_norm.data(), w.final_norm.size(), "final_norm");
    c.floats(w.lm_head.data.data(), w.lm_head.data.size(), "lm_head");
    if (c.left != 0) {
        throw format_error("trailing bytes after payload (" + std::to_string(c.left) + ")");
    }
    return w;
}

ModelWeights synth_weights(const ModelConfig & cfg, uint64_t seed) {
    cfg.validate();
    ModelWeights w(cfg);
    SplitMix64 rng(seed);
    const auto fill = [&rng](Matrix & m) {
        const float a = float(std::sqrt(6.0 / double(m.rows + m.cols)));
        for (float & x : m.data) x = rng.next_in(-a, a);
    };
    const size_t dm = cfg.d_model();
    fill(w.token_embedding);
    for (LayerWeights & l : w.layers) {
        l.attn_norm.assign(dm, 1.0f);
        fill(l.w_q);
        fill(l.w_k);
        fill(l.w_v);
        fill(l.w_o);
        l.ffn_norm.assign(dm, 1.0f);
        fill(l.w_gate);
        fill(l.w_up);
        fill(l.w_down);
    }
    w.final_norm.assign(dm, 1.0f);
    fill(w.lm_head);
    return w;
}

} // namespace tidal
