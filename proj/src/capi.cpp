#include "tidal.h"

#include "core/analysis.h"
#include "core/bench.h"
#include "core/error.h"
#include "core/kv_cache.h"
#include "core/model.h"
#include "core/needle.h"
#include "core/rng.h"
#include "core/weights_io.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <span>
#include <string>

struct td_model {
    tidal::ModelWeights w;
};

struct td_session {
    tidal::Session s;
};

struct td_trace {
    tidal::TraceRecord t;
};

namespace {

thread_local std::string g_last_error;

td_status fail(td_status s, const char * what) {
    g_last_error = what;
    return s;
}

// Runs f() and folds every exception into a status code. The error
// hierarchy maps 1:1 onto td_status values.
template <typename F>
td_status wrap(F && f) {
    try {
        f();
        g_last_error.clear();
        return TD_OK;
    } catch (const tidal::shape_error & e) {
        return fail(TD_ERR_SHAPE, e.what());
    } catch (const tidal::budget_error & e) {
        return fail(TD_ERR_BUDGET, e.what());
    } catch (const tidal::bounds_error & e) {
        return fail(TD_ERR_BOUNDS, e.what());
    } catch (const tidal::schedule_error & e) {
        return fail(TD_ERR_SCHEDULE, e.what());
    } catch (const tidal::format_error & e) {
        return fail(TD_ERR_FORMAT, e.what());
    } catch (const tidal::state_error & e) {
        return fail(TD_ERR_STATE, e.what());
    } catch (const tidal::input_error & e) {
        return fail(TD_ERR_INPUT, e.what());
    } catch (const tidal::error & e) {
        return fail(TD_ERR_INTERNAL, e.what());
    } catch (const std::bad_alloc &) {
        return fail(TD_ERR_INTERNAL, "out of memory");
    } catch (const std::exception & e) {
        return fail(TD_ERR_INTERNAL, e.what());
    }
}

td_status need(bool ok, const char * what) {
    return ok ? TD_OK : fail(TD_ERR_INPUT, what);
}

tidal::ModelConfig to_config(const td_model_config & c) {
    tidal::ModelConfig cfg;
    cfg.n_layers = c.n_layers;
    cfg.n_heads = c.n_heads;
    cfg.n_kv_heads = c.n_kv_heads;
    cfg.head_dim = c.head_dim;
    cfg.d_ff = c.d_ff;
    cfg.vocab_size = c.vocab_size;
    cfg.rope_theta = c.rope_theta;
    cfg.norm_eps = c.norm_eps;
    return cfg;
}

tidal::DecodeConfig to_decode_config(const td_decode_config & c) {
    tidal::DecodeConfig cfg;
    switch (c.mode) {
    case TD_MODE_FULL: cfg.mode = tidal::DecodeMode::full; break;
    case TD_MODE_TIDAL: cfg.mode = tidal::DecodeMode::tidal; break;
    case TD_MODE_PERLAYER_TOPK: cfg.mode = tidal::DecodeMode::perlayer_topk; break;
    case TD_MODE_PAGE_ESTIMATE: cfg.mode = tidal::DecodeMode::page_estimate; break;
    case TD_MODE_WINDOW: cfg.mode = tidal::DecodeMode::window; break;
    default: throw tidal::input_error("unknown mode " + std::to_string(int(c.mode)));
    }
    cfg.budget = c.budget;
    cfg.reselect_layer = c.reselect_layer;
    cfg.correction_period = c.correction_period;
    cfg.page_size = c.page_size;
    cfg.sinks = c.sinks;
    cfg.window = c.window;
    cfg.group_agg = c.group_agg_max ? tidal::GroupAgg::max : tidal::GroupAgg::sum;
    cfg.include_current = c.include_current != 0;
    return cfg;
}

char * dup_string(const std::string & s) {
    char * out = static_cast<char *>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

extern "C" {

const char * td_status_name(td_status s) {
    switch (s) {
    case TD_OK: return "ok";
    case TD_ERR_SHAPE: return "shape";
    case TD_ERR_BUDGET: return "budget";
    case TD_ERR_BOUNDS: return "bounds";
    case TD_ERR_SCHEDULE: return "schedule";
    case TD_ERR_FORMAT: return "format";
    case TD_ERR_STATE: return "state";
    case TD_ERR_INPUT: return "input";
    case TD_ERR_INTERNAL: return "internal";
    }
    return "?";
}

const char * td_last_error(void) { return g_last_error.c_str(); }

void td_model_config_init(td_model_config * cfg) {
    if (!cfg) return;
    std::memset(cfg, 0, sizeof(*cfg));
    cfg->rope_theta = 10000.0f;
    cfg->norm_eps = 1e-5f;
}

td_status td_model_synth(const td_model_config * cfg, uint64_t seed, td_model ** out) {
    if (td_status s = need(cfg && out, "td_model_synth: null argument")) return s;
    return wrap([&] { *out = new td_model{tidal::synth_weights(to_config(*cfg), seed)}; });
}

td_status td_model_load(const char * path, td_model ** out) {
    if (td_status s = need(path && out, "td_model_load: null argument")) return s;
    return wrap([&] { *out = new td_model{tidal::load_weights(path)}; });
}

td_status td_model_save(const td_model * m, const char * path) {
    if (td_status s = need(m && path, "td_model_save: null argument")) return s;
    return wrap([&] { tidal::save_weights(m->w, path); });
}

td_status td_model_config_of(const td_model * m, td_model_config * out) {
    if (td_status s = need(m && out, "td_model_config_of: null argument")) return s;
    const tidal::ModelConfig & c = m->w.config;
    out->n_layers = c.n_layers;
    out->n_heads = c.n_heads;
    out->n_kv_heads = c.n_kv_heads;
    out->head_dim = c.head_dim;
    out->d_ff = c.d_ff;
    out->vocab_size = c.vocab_size;
    out->rope_theta = c.rope_theta;
    out->norm_eps = c.norm_eps;
    return TD_OK;
}

void td_model_free(td_model * m) { delete m; }

uint32_t td_default_reselect_layer(const td_model_config * cfg) {
    if (!cfg) return 0;
    return tidal::default_reselect_layer(to_config(*cfg));
}

void td_decode_config_init(td_decode_config * cfg) {
    if (!cfg) return;
    std::memset(cfg, 0, sizeof(*cfg));
    cfg->mode = TD_MODE_FULL;
    cfg->budget = 64;
    cfg->reselect_layer = -1;
    cfg->page_size = 16;
    cfg->sinks = 4;
    cfg->window = 64;
}

td_status td_session_open(const td_model * m, const td_decode_config * cfg,
                          const uint32_t * prompt, size_t prompt_len, td_session ** out) {
    if (td_status s = need(m && cfg && prompt && out, "td_session_open: null argument")) return s;
    return wrap([&] {
        *out = new td_session{tidal::Session(m->w, to_decode_config(*cfg),
                                             std::span<const uint32_t>(prompt, prompt_len))};
    });
}

td_status td_session_step(td_session * s, uint32_t token) {
    if (td_status st = need(s != nullptr, "td_session_step: null session")) return st;
    return wrap([&] { s->s.step(token); });
}

td_status td_session_decode(td_session * s, size_t n_steps, uint32_t * tokens_out) {
    if (td_status st = need(s && (tokens_out || n_steps == 0), "td_session_decode: null argument"))
        return st;
    return wrap([&] {
        for (size_t i = 0; i < n_steps; ++i) tokens_out[i] = s->s.decode_next();
    });
}

td_status td_session_logits(const td_session * s, const float ** data, size_t * len) {
    if (td_status st = need(s && data && len, "td_session_logits: null argument")) return st;
    *data = s->s.logits().data();
    *len = s->s.logits().size();
    return TD_OK;
}

td_status td_session_cache_len(const td_session * s, size_t * len) {
    if (td_status st = need(s && len, "td_session_cache_len: null argument")) return st;
    *len = s->s.cache().len();
    return TD_OK;
}

td_status td_session_correct(td_session * s) {
    if (td_status st = need(s != nullptr, "td_session_correct: null session")) return st;
    return wrap([&] { s->s.correct_cache(); });
}

td_status td_session_loads(const td_session * s, uint64_t * key_loads, uint64_t * value_loads,
                           uint64_t * scans) {
    if (td_status st = need(s != nullptr, "td_session_loads: null session")) return st;
    const tidal::AccessStats::Counts c = s->s.stats().total();
    if (key_loads) *key_loads = c.key_token_loads;
    if (value_loads) *value_loads = c.value_token_loads;
    if (scans) *scans = c.selection_scans;
    return TD_OK;
}

td_status td_session_load_ratios(const td_session * s, double * counted, double * analytic) {
    if (td_status st = need(s != nullptr, "td_session_load_ratios: null session")) return st;
    return wrap([&] {
        const tidal::AccessReport rep = tidal::access_report(s->s);
        if (counted) *counted = rep.counted_ratio;
        if (analytic) *analytic = rep.analytic_ratio;
    });
}

void td_session_free(td_session * s) { delete s; }

td_status td_eval_cross_entropy(const td_model * m, const td_decode_config * cfg,
                                const uint32_t * tokens, size_t n_tokens, size_t warmup,
                                double * out_nats) {
    if (td_status s = need(m && cfg && tokens && out_nats, "td_eval_cross_entropy: null argument"))
        return s;
    return wrap([&] {
        *out_nats = tidal::eval_cross_entropy(m->w, to_decode_config(*cfg),
                                              std::span<const uint32_t>(tokens, n_tokens), warmup);
    });
}

td_status td_trace_run(const td_model * m, const uint32_t * prompt, size_t prompt_len,
                       uint32_t k, size_t n_steps, td_trace ** out) {
    if (td_status s = need(m && prompt && out, "td_trace_run: null argument")) return s;
    return wrap([&] {
        *out = new td_trace{
            tidal::trace_topk(m->w, std::span<const uint32_t>(prompt, prompt_len), k, n_steps)};
    });
}

td_status td_trace_overlap_csv(const td_trace * t, char ** out) {
    if (td_status s = need(t && out, "td_trace_overlap_csv: null argument")) return s;
    return wrap([&] { *out = dup_string(tidal::overlap_csv(tidal::overlap_matrix(t->t))); });
}

td_status td_trace_recall_csv(const td_trace * t, uint32_t base, char ** out) {
    if (td_status s = need(t && out, "td_trace_recall_csv: null argument")) return s;
    return wrap([&] { *out = dup_string(tidal::recall_csv(t->t, base)); });
}

td_status td_trace_heatmap_csv(const td_trace * t, uint32_t kv_head, char ** out) {
    if (td_status s = need(t && out, "td_trace_heatmap_csv: null argument")) return s;
    return wrap([&] { *out = dup_string(tidal::heatmap_csv(t->t, kv_head)); });
}

td_status td_trace_recall(const td_trace * t, uint32_t base, uint32_t r, double * out) {
    if (td_status s = need(t && out, "td_trace_recall: null argument")) return s;
    return wrap([&] { *out = tidal::recall_by_reselection(t->t, base, r); });
}

void td_trace_free(td_trace * t) { delete t; }

void td_string_free(char * s) { std::free(s); }

void td_needle_params_init(td_needle_params * p) {
    if (!p) return;
    const tidal::NeedleParams d;
    p->n = d.n;
    p->head_dim = d.head_dim;
    p->budget = d.budget;
    p->page_size = d.page_size;
    p->sinks = d.sinks;
    p->window = d.window;
    p->trials = d.trials;
    p->seed = d.seed;
}

td_status td_needle_run(const td_needle_params * p, td_needle_report * out) {
    if (td_status s = need(p && out, "td_needle_run: null argument")) return s;
    return wrap([&] {
        tidal::NeedleParams np;
        np.n = p->n;
        np.head_dim = p->head_dim;
        np.budget = p->budget;
        np.page_size = p->page_size;
        np.sinks = p->sinks;
        np.window = p->window;
        np.trials = p->trials;
        np.seed = p->seed;
        const tidal::NeedleReport r = tidal::needle_run(np);
        out->trials = r.tidal.trials;
        out->tidal_hits = r.tidal.hits;
        out->perlayer_hits = r.perlayer.hits;
        out->page_hits = r.page.hits;
        out->window_hits = r.window.hits;
    });
}

void td_bench_params_init(td_bench_params * p) {
    if (!p) return;
    const tidal::BenchParams d;
    p->n = d.n;
    p->m = d.m;
    p->head_dim = d.head_dim;
    p->page_size = d.page_size;
    p->iters = d.iters;
    p->n_layers = d.n_layers;
    p->seed = d.seed;
}

td_status td_bench_run(const td_bench_params * p, td_bench_report * out) {
    if (td_status s = need(p && out, "td_bench_run: null argument")) return s;
    return wrap([&] {
        tidal::BenchParams bp;
        bp.n = p->n;
        bp.m = p->m;
        bp.head_dim = p->head_dim;
        bp.page_size = p->page_size;
        bp.iters = p->iters;
        bp.n_layers = p->n_layers;
        bp.seed = p->seed;
        const tidal::BenchReport r = tidal::bench_run(bp);
        const auto put = [](td_kernel_bench & dst, const tidal::KernelBench & src) {
            dst.mean_ms = src.mean_ms;
            dst.key_loads = src.key_loads;
            dst.value_loads = src.value_loads;
            dst.scans = src.scans;
        };
        put(out->full, r.full);
        put(out->select, r.select);
        put(out->sparse, r.sparse);
        put(out->page, r.page);
        out->load_ratio = r.load_ratio;
        out->checksum = r.checksum;
    });
}

td_status td_synth_prompt(uint64_t seed, uint32_t vocab_size, size_t len, uint32_t * out) {
    if (td_status s = need(out || len == 0, "td_synth_prompt: null output")) return s;
    if (td_status s = need(vocab_size > 0, "td_synth_prompt: vocab_size must be > 0")) return s;
    tidal::SplitMix64 rng(seed ^ 0x70726F6D7074ULL);
    for (size_t i = 0; i < len; ++i) out[i] = uint32_t(rng.next_below(vocab_size));
    return TD_OK;
}

uint64_t td_kv_cache_size_bytes(uint64_t n_layers, uint64_t n_kv_heads, uint64_t head_dim,
                                uint64_t seq_len, uint64_t bytes_per_scalar) {
    return tidal::kv_cache_size_bytes(n_layers, n_kv_heads, head_dim, seq_len, bytes_per_scalar);
}

double td_analytic_load_ratio(size_t n_layers, size_t n_full, size_t n_select, size_t n_sparse,
                              size_t n, size_t m) {
    return tidal::analytic_load_ratio(n_layers, n_full, n_select, n_sparse, n, m);
}

} // extern "C"
