/*
 * C API for the tidal sparse-attention decoding engine.
 *
 * Conventions:
 *  - Every fallible call returns a td_status; TD_OK is 0. On failure,
 *    td_last_error() returns a thread-local human-readable message.
 *  - Out-parameters are written only on TD_OK.
 *  - Handles are opaque; free them with the matching *_free call. A
 *    td_model must outlive every td_session opened on it.
 */
#ifndef TIDAL_H
#define TIDAL_H

#include <stddef.h>
#include <stdint.h>

#ifndef TD_API
#if defined(_WIN32)
#define TD_API
#else
#define TD_API __attribute__((visibility("default")))
#endif
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum td_status {
    TD_OK = 0,
    TD_ERR_SHAPE = 1,    /* dimension mismatch / invalid config */
    TD_ERR_BUDGET = 2,   /* token budget outside [1, len] */
    TD_ERR_BOUNDS = 3,   /* index past the cache length */
    TD_ERR_SCHEDULE = 4, /* invalid layer schedule / reselect layer */
    TD_ERR_FORMAT = 5,   /* malformed weight file or CSV */
    TD_ERR_STATE = 6,    /* operation illegal in the current state */
    TD_ERR_INPUT = 7,    /* bad user-supplied value (token id, flag) */
    TD_ERR_INTERNAL = 8  /* anything else (allocation, unexpected) */
} td_status;

TD_API const char * td_status_name(td_status s);
TD_API const char * td_last_error(void);

/* ---------------- model ---------------- */

typedef struct td_model_config {
    uint32_t n_layers;
    uint32_t n_heads;
    uint32_t n_kv_heads; /* must divide n_heads */
    uint32_t head_dim;
    uint32_t d_ff;
    uint32_t vocab_size;
    float rope_theta;
    float norm_eps;
} td_model_config;

/* Fills in the defaults: rope_theta 10000, norm_eps 1e-5, dims zeroed. */
TD_API void td_model_config_init(td_model_config * cfg);

typedef struct td_model td_model;

/* Deterministic synthetic weights (SplitMix64 stream; see docs). */
TD_API td_status td_model_synth(const td_model_config * cfg, uint64_t seed, td_model ** out);
/* TDW1 file I/O; round-trips are bit-identical. */
TD_API td_status td_model_load(const char * path, td_model ** out);
TD_API td_status td_model_save(const td_model * m, const char * path);
TD_API td_status td_model_config_of(const td_model * m, td_model_config * out);
TD_API void td_model_free(td_model * m);

/* The default re-selection layer for this config (overridable per run). */
TD_API uint32_t td_default_reselect_layer(const td_model_config * cfg);

/* ---------------- decoding ---------------- */

typedef enum td_mode {
    TD_MODE_FULL = 0,
    TD_MODE_TIDAL = 1,
    TD_MODE_PERLAYER_TOPK = 2,
    TD_MODE_PAGE_ESTIMATE = 3,
    TD_MODE_WINDOW = 4
} td_mode;

typedef struct td_decode_config {
    td_mode mode;
    uint32_t budget;            /* m; capped at the cache length per step */
    int32_t reselect_layer;     /* -1 = config default */
    uint32_t correction_period; /* T; 0 = off */
    uint32_t page_size;
    uint32_t sinks;
    uint32_t window;
    int group_agg_max;   /* 0: sum group scores (default), 1: max */
    int include_current; /* sparse layers also see the newest token */
} td_decode_config;

TD_API void td_decode_config_init(td_decode_config * cfg);

typedef struct td_session td_session;

/* Runs a full-attention prefill over the prompt. */
TD_API td_status td_session_open(const td_model * m, const td_decode_config * cfg,
                                 const uint32_t * prompt, size_t prompt_len, td_session ** out);
/* Teacher-forced: append `token`, run one scheduled step. */
TD_API td_status td_session_step(td_session * s, uint32_t token);
/* Greedy: emit n_steps tokens (argmax, ties to the lowest id) into out. */
TD_API td_status td_session_decode(td_session * s, size_t n_steps, uint32_t * tokens_out);
/* Borrowed view of the current next-token logits; valid until the next
 * step/decode/free on this session. */
TD_API td_status td_session_logits(const td_session * s, const float ** data, size_t * len);
TD_API td_status td_session_cache_len(const td_session * s, size_t * len);
/* Recompute polluted K/V rows from the realized tokens (idempotent). */
TD_API td_status td_session_correct(td_session * s);
TD_API td_status td_session_loads(const td_session * s, uint64_t * key_loads,
                                  uint64_t * value_loads, uint64_t * scans);
/* counted: full-equivalent loads / recorded loads; analytic: schedule form.
 * The two agree exactly in full and tidal modes. */
TD_API td_status td_session_load_ratios(const td_session * s, double * counted,
                                        double * analytic);
TD_API void td_session_free(td_session * s);

/* Teacher-forced mean next-token cross-entropy (nats) over positions >=
 * warmup; warmup must be in [1, n_tokens). */
TD_API td_status td_eval_cross_entropy(const td_model * m, const td_decode_config * cfg,
                                       const uint32_t * tokens, size_t n_tokens, size_t warmup,
                                       double * out_nats);

/* ---------------- analyses ---------------- */

typedef struct td_trace td_trace;

/* Full-attention generation recording each (layer, kv head) exact top-k set
 * per step. Requires 1 <= k <= prompt_len and n_steps >= 1. */
TD_API td_status td_trace_run(const td_model * m, const uint32_t * prompt, size_t prompt_len,
                              uint32_t k, size_t n_steps, td_trace ** out);
/* CSV strings are malloc'd; release with td_string_free. */
TD_API td_status td_trace_overlap_csv(const td_trace * t, char ** out);
TD_API td_status td_trace_recall_csv(const td_trace * t, uint32_t base, char ** out);
TD_API td_status td_trace_heatmap_csv(const td_trace * t, uint32_t kv_head, char ** out);
/* Mean buffer recall over sparse layers for reselection layer r. */
TD_API td_status td_trace_recall(const td_trace * t, uint32_t base, uint32_t r, double * out);
TD_API void td_trace_free(td_trace * t);
TD_API void td_string_free(char * s);

/* Selection-level needle retrieval (see docs: planted dominant key). */
typedef struct td_needle_params {
    size_t n;
    size_t head_dim;
    size_t budget;
    size_t page_size;
    size_t sinks;
    size_t window;
    size_t trials;
    uint64_t seed;
} td_needle_params;

TD_API void td_needle_params_init(td_needle_params * p);

typedef struct td_needle_report {
    uint64_t trials;
    uint64_t tidal_hits;
    uint64_t perlayer_hits;
    uint64_t page_hits;
    uint64_t window_hits;
} td_needle_report;

TD_API td_status td_needle_run(const td_needle_params * p, td_needle_report * out);

/* Kernel microbenchmark: wall-clock plus exact per-call token loads. */
typedef struct td_bench_params {
    size_t n;
    size_t m;
    size_t head_dim;
    size_t page_size;
    size_t iters;
    size_t n_layers;
    uint64_t seed;
} td_bench_params;

TD_API void td_bench_params_init(td_bench_params * p);

typedef struct td_kernel_bench {
    double mean_ms;
    uint64_t key_loads;
    uint64_t value_loads;
    uint64_t scans;
} td_kernel_bench;

typedef struct td_bench_report {
    td_kernel_bench full;
    td_kernel_bench select;
    td_kernel_bench sparse;
    td_kernel_bench page;
    double load_ratio;
    double checksum;
} td_bench_report;

TD_API td_status td_bench_run(const td_bench_params * p, td_bench_report * out);

/* ---------------- utilities ---------------- */

/* Deterministic synthetic prompt: len ids in [0, vocab_size) drawn from
 * SplitMix64 seeded with seed ^ 0x70726F6D7074 ("prompt"). */
TD_API td_status td_synth_prompt(uint64_t seed, uint32_t vocab_size, size_t len,
                                 uint32_t * out);

/* layers * kv_heads * head_dim * seq_len * bytes_per_scalar * 2. */
TD_API uint64_t td_kv_cache_size_bytes(uint64_t n_layers, uint64_t n_kv_heads,
                                       uint64_t head_dim, uint64_t seq_len,
                                       uint64_t bytes_per_scalar);

/* (L*n) / ((n_full + n_select)*n + n_sparse*m). */
TD_API double td_analytic_load_ratio(size_t n_layers, size_t n_full, size_t n_select,
                                     size_t n_sparse, size_t n, size_t m);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TIDAL_H */
