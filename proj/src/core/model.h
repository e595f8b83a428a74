#pragma once

#include "core/attention.h"
#include "core/kv_cache.h"
#include "core/math.h"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tidal {

// LLaMA-family decoder-only configuration. d_model is always
// n_heads * head_dim; n_kv_heads must divide n_heads (GQA).
struct ModelConfig {
    uint32_t n_layers = 0;
    uint32_t n_heads = 0;
    uint32_t n_kv_heads = 0;
    uint32_t head_dim = 0;
    uint32_t d_ff = 0;
    uint32_t vocab_size = 0;
    float rope_theta = 10000.0f;
    float norm_eps = 1e-5f;

    uint32_t d_model() const { return n_heads * head_dim; }
    uint32_t group_size() const { return n_heads / n_kv_heads; }

    // Throws shape_error if any dimension is zero or GQA grouping is
    // inconsistent.
    void validate() const;
};

enum class LayerRole : uint8_t {
    full,    // dense attention over the whole cache
    select,  // dense attention plus token-buffer update
    sparse,  // position persistent sparse attention over the buffer
};

// Per-layer role assignment. First two layers are always full attention;
// a sparse layer must have a select layer somewhere before it.
class LayerSchedule {
  public:
    LayerSchedule() = default;
    explicit LayerSchedule(std::vector<LayerRole> roles);  // validates

    size_t n_layers() const { return roles_.size(); }
    LayerRole role(size_t layer) const { return roles_[layer]; }
    const std::vector<LayerRole> & roles() const { return roles_; }

    size_t count(LayerRole r) const;

    static LayerSchedule all_full(size_t n_layers);

  private:
    std::vector<LayerRole> roles_;
};

// [full, full, select, sparse..., select at r, sparse...]. Requires
// n_layers >= 4 and 3 <= r < n_layers; throws schedule_error otherwise.
LayerSchedule default_schedule(size_t n_layers, size_t reselect_layer);

// Default re-selection layer: 13 for 32-layer GQA configs, 7 for 32-layer
// MHA configs, otherwise round(0.41 * n_layers) clamped to the valid range.
uint32_t default_reselect_layer(const ModelConfig & cfg);

struct LayerWeights {
    Vector attn_norm;  // [d_model]
    Matrix w_q;        // [d_model x n_heads*head_dim]
    Matrix w_k;        // [d_model x n_kv_heads*head_dim]
    Matrix w_v;        // [d_model x n_kv_heads*head_dim]
    Matrix w_o;        // [n_heads*head_dim x d_model]
    Vector ffn_norm;   // [d_model]
    Matrix w_gate;     // [d_model x d_ff]
    Matrix w_up;       // [d_model x d_ff]
    Matrix w_down;     // [d_ff x d_model]
};

struct ModelWeights {
    ModelConfig config;
    Matrix token_embedding;  // [vocab x d_model]
    std::vector<LayerWeights> layers;
    Vector final_norm;  // [d_model]
    Matrix lm_head;     // [d_model x vocab]

    ModelWeights() = default;
    explicit ModelWeights(const ModelConfig & cfg);  // zero-initialized
};

enum class DecodeMode : uint8_t {
    full,           // dense attention everywhere
    tidal,          // position persistent sparse attention (the schedule)
    perlayer_topk,  // exact top-m re-selected at every non-full layer
    page_estimate,  // Quest-style page envelope selection per layer
    window,         // sink + recency window eviction mask
};

const char * decode_mode_name(DecodeMode m);
std::optional<DecodeMode> decode_mode_from_name(const std::string & name);

struct DecodeConfig {
    DecodeMode mode = DecodeMode::full;
    uint32_t budget = 64;                    // m; capped at cache length per step
    int32_t reselect_layer = -1;             // -1 = default_reselect_layer
    std::optional<LayerSchedule> schedule;   // tidal only; overrides reselect_layer
    uint32_t correction_period = 0;          // T; 0 = off
    uint32_t page_size = 16;
    uint32_t sinks = 4;
    uint32_t window = 64;
    GroupAgg group_agg = GroupAgg::sum;
    // When set, sparse layers also attend to the freshly appended token
    // even if the buffer missed it.
    bool include_current = false;
};

// One generation session: owns the cache, token buffer, pollution log and
// load counters. Weights are borrowed and never modified, so any number of
// sessions can share them. A session is single-threaded.
class Session {
  public:
    // Runs a full-attention prefill over the prompt. Throws input_error on
    // an empty prompt or out-of-vocabulary ids.
    Session(const ModelWeights & weights, DecodeConfig cfg, std::span<const uint32_t> prompt);

    // Teacher-forced step: appends `token`, runs one scheduled decode pass,
    // returns the next-token logits.
    Vector step(uint32_t token);

    // Greedy step: emits argmax of the current logits (ties toward the
    // lowest id), advances the cache with it, and handles pollution
    // bookkeeping plus periodic cache correction.
    uint32_t decode_next();

    std::vector<uint32_t> generate(size_t n_steps);

    // Recomputes the K/V rows of every polluted position from a
    // full-attention pass over the realized token sequence, then clears the
    // log. No-op when nothing is polluted.
    void correct_cache();

    const Vector & logits() const { return logits_; }
    const KvCache & cache() const { return cache_; }
    const AccessStats & stats() const { return stats_; }
    const PollutionLog & pollution() const { return pollution_; }
    const std::vector<uint32_t> & tokens() const { return tokens_; }
    const LayerSchedule & schedule() const { return schedule_; }
    const DecodeConfig & config() const { return cfg_; }
    // Cache length at each recorded decode step (attention-time length).
    const std::vector<size_t> & step_lens() const { return step_lens_; }

    // Full-attention top-k capture for trace analysis: at every decode
    // step, each (layer, kv head) records arg_top_k of the group scores.
    void enable_topk_capture(uint32_t k);
    const std::vector<std::vector<std::vector<std::vector<uint32_t>>>> & captured_topk() const {
        return capture_sets_;  // [step][layer][kv_head]
    }

  private:
    Vector forward_one(uint32_t token, size_t position);
    // One GQA group at one layer: dispatches on mode/role, writes each query
    // head's slice of out_all, updates buffer/stats/capture as needed.
    void attend_group(size_t layer, size_t kv_head, const std::vector<Vector> & q_group,
                      Vector & out_all);

    const ModelWeights & w_;
    DecodeConfig cfg_;
    LayerSchedule schedule_;
    KvCache cache_;
    TokenBuffer buffer_;
    PollutionLog pollution_;
    AccessStats stats_;
    Vector logits_;
    std::vector<uint32_t> tokens_;    // realized sequence: prompt + emitted
    std::vector<size_t> step_lens_;
    size_t steps_since_correction_ = 0;

    uint32_t capture_k_ = 0;
    std::vector<std::vector<std::vector<std::vector<uint32_t>>>> capture_sets_;
};

// Full-attention prefill as a standalone operation: builds a cache over the
// prompt (batched per layer) and returns the last-position logits. The
// session constructor and the cache-correction pass both run this path.
std::pair<KvCache, Vector> prefill(const ModelWeights & weights,
                                   std::span<const uint32_t> tokens);

// Teacher-forced mean next-token cross-entropy in nats over predictions at
// positions >= warmup. warmup must be in [1, tokens.size()).
double eval_cross_entropy(const ModelWeights & weights, const DecodeConfig & cfg,
                          std::span<const uint32_t> tokens, size_t warmup);

} // namespace tidal
