#pragma once

#include "core/model.h"

#include <cstdint>
#include <string>

namespace tidal {

// TDW1 flat binary weight format. 40-byte little-endian header:
//   magic "TDW1", format_version u32, then u32 n_layers, n_heads,
//   n_kv_heads, head_dim, d_ff, vocab_size, then f32 rope_theta, norm_eps.
// Payload: raw row-major little-endian f32 tensors in a fixed order:
//   token_embedding; per layer attn_norm, W_q, W_k, W_v, W_o, ffn_norm,
//   W_gate, W_up, W_down; final_norm; lm_head.
// Byte-by-byte description in docs/weights_format.md.
inline constexpr uint32_t weights_format_version = 1;
inline constexpr size_t weights_header_bytes = 40;

uint64_t weights_scalar_count(const ModelConfig & cfg);

// Header plus payload: weights_header_bytes + 4 * weights_scalar_count.
uint64_t weights_file_bytes(const ModelConfig & cfg);

// Throws format_error on any I/O failure.
void save_weights(const ModelWeights & w, const std::string & path);

// Throws format_error on bad magic/version, inconsistent header dimensions,
// or a payload whose length differs from the header's implied byte count.
ModelWeights load_weights(const std::string & path);

// Deterministic synthetic weights: one SplitMix64 stream seeded with `seed`
// feeds every 2-D tensor in save order, each scalar uniform in [-a, a) with
// a = sqrt(6 / (rows + cols)) per tensor (Xavier range). Norm weights are
// set to 1 and consume nothing from the stream.
ModelWeights synth_weights(const ModelConfig & cfg, uint64_t seed);

} // namespace tidal
