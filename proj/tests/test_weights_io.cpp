#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "core/error.h"
#include "core/rng.h"
#include "core/weights_io.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace tidal;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 1;
    cfg.head_dim = 4;
    cfg.d_ff = 16;
    cfg.vocab_size = 32;
    return cfg;  // d_model 8
}

std::string tmp_path(const std::string & name) {
    return (fs::temp_directory_path() /
            ("tidal_wio_" + std::to_string(::getpid()) + "_" + name))
        .string();
}

std::vector<uint8_t> read_bytes(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

void write_bytes(const std::string & path, const std::vector<uint8_t> & bytes) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(bool(out));
    out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
}

bool weights_equal(const ModelWeights & a, const ModelWeights & b) {
    if (a.token_embedding.data != b.token_embedding.data) return false;
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l) {
        const LayerWeights & x = a.layers[l];
        const LayerWeights & y = b.layers[l];
        if (x.attn_norm != y.attn_norm || x.ffn_norm != y.ffn_norm) return false;
        if (x.w_q.data != y.w_q.data || x.w_k.data != y.w_k.data ||
            x.w_v.data != y.w_v.data || x.w_o.data != y.w_o.data) return false;
        if (x.w_gate.data != y.w_gate.data || x.w_up.data != y.w_up.data ||
            x.w_down.data != y.w_down.data) return false;
    }
    return a.final_norm == b.final_norm && a.lm_head.data == b.lm_head.data;
}

} // namespace

TEST_CASE("scalar and byte counts") {
    const ModelConfig cfg = tiny_config();
    // embedding 256 + 2 layers * (8+64+32+32+64+8+128+128+128) + 8 + 256
    CHECK(weights_scalar_count(cfg) == 1704);
    CHECK(weights_file_bytes(cfg) == 40 + 4 * 1704);
}

TEST_CASE("synthetic weights") {
    const ModelConfig cfg = tiny_config();

    SUBCASE("deterministic per seed, distinct across seeds") {
        CHECK(weights_equal(synth_weights(cfg, 42), synth_weights(cfg, 42)));
        CHECK_FALSE(weights_equal(synth_weights(cfg, 1), synth_weights(cfg, 2)));
    }
    SUBCASE("norm weights are exactly one") {
        const ModelWeights w = synth_weights(cfg, 7);
        for (const LayerWeights & l : w.layers) {
            for (const float v : l.attn_norm) CHECK(v == 1.0f);
            for (const float v : l.ffn_norm) CHECK(v == 1.0f);
        }
        for (const float v : w.final_norm) CHECK(v == 1.0f);
    }
    SUBCASE("every matrix stays inside its Xavier range") {
        const ModelWeights w = synth_weights(cfg, 3);
        const auto in_range = [](const Matrix & m) {
            const float a = float(std::sqrt(6.0 / double(m.rows + m.cols)));
            for (const float x : m.data) {
                if (x < -a || x > a) return false;
            }
            return true;
        };
        CHECK(in_range(w.token_embedding));
        CHECK(in_range(w.layers[0].w_q));
        CHECK(in_range(w.layers[1].w_down));
        CHECK(in_range(w.lm_head));
    }
    SUBCASE("one stream feeds the tensors in save order") {
        // Re-derive a few scalars straight from the generator: 256 embedding
        // draws, then 576 matrix draws per layer; norms consume nothing.
        const uint64_t seed = 99;
        const ModelWeights w = synth_weights(cfg, seed);
        SplitMix64 ref(seed);
        const float a_emb = float(std::sqrt(6.0 / 40.0));   // 32 x 8
        const float a_q = float(std::sqrt(6.0 / 16.0));     // 8 x 8
        CHECK(w.token_embedding.data[0] == ref.next_in(-a_emb, a_emb));
        for (size_t i = 1; i < 256; ++i) ref.next();
        CHECK(w.layers[0].w_q.data[0] == ref.next_in(-a_q, a_q));
        for (size_t i = 1; i < 576; ++i) ref.next();
        CHECK(w.layers[1].w_q.data[0] == ref.next_in(-a_q, a_q));
        for (size_t i = 1; i < 576; ++i) ref.next();
        CHECK(w.lm_head.data[0] == ref.next_in(-a_emb, a_emb));  // 8 x 32
    }
}

TEST_CASE("save and load round trip") {
    const ModelConfig cfg = tiny_config();
    const ModelWeights w = synth_weights(cfg, 2026);
    const std::string p1 = tmp_path("round1.tdw");
    const std::string p2 = tmp_path("round2.tdw");

    save_weights(w, p1);
    CHECK(fs::file_size(p1) == weights_file_bytes(cfg));

    const ModelWeights r = load_weights(p1);
    CHECK(r.config.n_layers == cfg.n_layers);
    CHECK(r.config.vocab_size == cfg.vocab_size);
    CHECK(r.config.rope_theta == cfg.rope_theta);
    CHECK(r.config.norm_eps == cfg.norm_eps);
    CHECK(weights_equal(w, r));

    save_weights(r, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));

    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("load rejects malformed files") {
    const ModelConfig cfg = tiny_config();
    const std::string good_path = tmp_path("good.tdw");
    save_weights(synth_weights(cfg, 1), good_path);
    const std::vector<uint8_t> good = read_bytes(good_path);
    const std::string bad_path = tmp_path("bad.tdw");

    SUBCASE("nonexistent file") {
        CHECK_THROWS_AS(load_weights(tmp_path("missing.tdw")), format_error);
    }
    SUBCASE("bad magic") {
        std::vector<uint8_t> b = good;
        b[0] = 'X';
        write_bytes(bad_path, b);
        CHECK_THROWS_WITH_AS(load_weights(bad_path), "bad magic (not a TDW1 file)",
                             format_error);
    }
    SUBCASE("unsupported version") {
        std::vector<uint8_t> b = good;
        b[4] = 2;
        write_bytes(bad_path, b);
        CHECK_THROWS_AS(load_weights(bad_path), format_error);
    }
    SUBCASE("zero dimension in the header") {
        std::vector<uint8_t> b = good;
        b[8] = b[9] = b[10] = b[11] = 0;  // n_layers = 0
        write_bytes(bad_path, b);
        CHECK_THROWS_AS(load_weights(bad_path), format_error);
    }
    SUBCASE("truncated payload") {
        std::vector<uint8_t> b = good;
        b.resize(b.size() - 4);
        write_bytes(bad_path, b);
        CHECK_THROWS_AS(load_weights(bad_path), format_error);
    }
    SUBCASE("truncated header") {
        std::vector<uint8_t> b(good.begin(), good.begin() + 10);
        write_bytes(bad_path, b);
        CHECK_THROWS_AS(load_weights(bad_path), format_error);
    }
    SUBCASE("trailing bytes") {
        std::vector<uint8_t> b = good;
        b.push_back(0);
        write_bytes(bad_path, b);
        CHECK_THROWS_AS(load_weights(bad_path), format_error);
    }

    fs::remove(good_path);
    fs::remove(bad_path);
}
