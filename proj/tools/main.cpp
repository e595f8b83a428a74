// Command-line harness over the C API: decoding runs, perplexity eval,
// selection-level needle retrieval, trace analyses, kernel benchmarks.
// Reports are JSON (stable field order); analyses additionally emit CSV.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 internal
// invariant violation (shape/schedule/bounds/... from the engine).
#include "tidal.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using ordered_json = nlohmann::ordered_json;

namespace {

struct CliError {
    td_status status;
    std::string message;
};

void check(td_status st, const std::string & context) {
    if (st != TD_OK) {
        throw CliError{st, context + ": " + td_last_error()};
    }
}

int exit_code(td_status s) {
    switch (s) {
    case TD_OK: return 0;
    case TD_ERR_FORMAT:
    case TD_ERR_INPUT: return 3;
    default: return 4;
    }
}

struct ModelHandle {
    td_model * m = nullptr;
    ~ModelHandle() { td_model_free(m); }
};

struct SessionHandle {
    td_session * s = nullptr;
    ~SessionHandle() { td_session_free(s); }
};

struct TraceHandle {
    td_trace * t = nullptr;
    ~TraceHandle() { td_trace_free(t); }
};

struct CsvString {
    char * p = nullptr;
    ~CsvString() { td_string_free(p); }
};

struct ModelFlags {
    std::string weights_path;
    uint64_t seed = 0;
    uint32_t layers = 8;
    uint32_t heads = 4;
    uint32_t kv_heads = 2;
    uint32_t head_dim = 16;
    uint32_t ff = 128;
    uint32_t vocab = 128;
    CLI::Option * weights_opt = nullptr;

    bool from_file() const { return weights_opt && weights_opt->count() > 0; }
};

void add_model_flags(CLI::App * cmd, ModelFlags & mf) {
    auto * src = cmd->add_option_group("model source");
    mf.weights_opt = src->add_option("--weights", mf.weights_path, "TDW1 weight file to load");
    src->add_option("--synth-seed", mf.seed, "deterministic synthetic-weight seed");
    src->require_option(1);
    cmd->add_option("--layers", mf.layers, "synthetic config: layers")->capture_default_str();
    cmd->add_option("--heads", mf.heads, "synthetic config: query heads")->capture_default_str();
    cmd->add_option("--kv-heads", mf.kv_heads, "synthetic config: kv heads")
        ->capture_default_str();
    cmd->add_option("--head-dim", mf.head_dim, "synthetic config: head dim")
        ->capture_default_str();
    cmd->add_option("--ff", mf.ff, "synthetic config: FFN width")->capture_default_str();
    cmd->add_option("--vocab", mf.vocab, "synthetic config: vocab size")->capture_default_str();
}

void open_model(const ModelFlags & mf, ModelHandle & h) {
    if (mf.from_file()) {
        check(td_model_load(mf.weights_path.c_str(), &h.m), "loading " + mf.weights_path);
    } else {
        td_model_config c;
        td_model_config_init(&c);
        c.n_layers = mf.layers;
        c.n_heads = mf.heads;
        c.n_kv_heads = mf.kv_heads;
        c.head_dim = mf.head_dim;
        c.d_ff = mf.ff;
        c.vocab_size = mf.vocab;
        check(td_model_synth(&c, mf.seed, &h.m), "building synthetic weights");
    }
}

ordered_json model_json(const ModelFlags & mf, const td_model * m) {
    td_model_config c;
    check(td_model_config_of(m, &c), "reading model config");
    ordered_json j;
    if (mf.from_file()) {
        j["source"] = mf.weights_path;
    } else {
        j["source"] = "synthetic";
        j["seed"] = mf.seed;
    }
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["n_kv_heads"] = c.n_kv_heads;
    j["head_dim"] = c.head_dim;
    j["d_ff"] = c.d_ff;
    j["vocab_size"] = c.vocab_size;
    j["rope_theta"] = c.rope_theta;
    j["norm_eps"] = c.norm_eps;
    return j;
}

struct DecodeFlags {
    std::string mode = "full";
    uint32_t budget = 64;
    int32_t reselect = -1;
    uint32_t correction_period = 0;
    uint32_t page_size = 16;
    uint32_t sinks = 4;
    uint32_t window = 64;
};

void add_decode_flags(CLI::App * cmd, DecodeFlags & df) {
    cmd->add_option("--mode", df.mode, "attention mode")
        ->check(CLI::IsMember({"full", "tidal", "perlayer_topk", "page_estimate", "window"}))
        ->capture_default_str();
    cmd->add_option("--budget", df.budget, "token budget m")->capture_default_str();
    cmd->add_option("--reselect", df.reselect, "re-selection layer (-1 = default)")
        ->capture_default_str();
    cmd->add_option("--correction-period", df.correction_period,
                    "cache correction every T steps (0 = off)")
        ->capture_default_str();
    cmd->add_option("--page-size", df.page_size, "page size (page_estimate mode)")
        ->capture_default_str();
    cmd->add_option("--sinks", df.sinks, "sink tokens (window mode)")->capture_default_str();
    cmd->add_option("--window", df.window, "recency window (window mode)")
        ->capture_default_str();
}

td_mode mode_from(const std::string & s) {
    if (s == "full") return TD_MODE_FULL;
    if (s == "tidal") return TD_MODE_TIDAL;
    if (s == "perlayer_topk") return TD_MODE_PERLAYER_TOPK;
    if (s == "page_estimate") return TD_MODE_PAGE_ESTIMATE;
    return TD_MODE_WINDOW;
}

td_decode_config decode_config_from(const DecodeFlags & df) {
    td_decode_config dc;
    td_decode_config_init(&dc);
    dc.mode = mode_from(df.mode);
    dc.budget = df.budget;
    dc.reselect_layer = df.reselect;
    dc.correction_period = df.correction_period;
    dc.page_size = df.page_size;
    dc.sinks = df.sinks;
    dc.window = df.window;
    return dc;
}

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

void write_file(const std::string & path, const std::string & text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw CliError{TD_ERR_FORMAT, "cannot write " + path};
}

void emit_report(const ordered_json & j, const std::string & out_path) {
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        write_file(out_path, text);
    }
}

std::vector<uint32_t> read_token_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw CliError{TD_ERR_FORMAT, "cannot open " + path};
    std::vector<uint32_t> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        uint32_t v = 0;
        auto [p, ec] = std::from_chars(line.data() + b, line.data() + e + 1, v);
        if (ec != std::errc() || p != line.data() + e + 1) {
            throw CliError{TD_ERR_FORMAT,
                           path + ":" + std::to_string(lineno) + ": not a token id"};
        }
        out.push_back(v);
    }
    return out;
}

void write_token_file(const std::string & path, const std::vector<uint32_t> & tokens) {
    std::string text;
    for (const uint32_t t : tokens) {
        text += std::to_string(t);
        text += '\n';
    }
    write_file(path, text);
}

// ---------------- decode ----------------

struct DecodeCmd {
    ModelFlags model;
    DecodeFlags dec;
    uint32_t steps = 8;
    uint32_t prompt_len = 32;
    bool compare_full = false;
    std::string out, trace_out, save_weights;
};

int run_decode(const DecodeCmd & fl) {
    const auto t0 = clock_type::now();
    ModelHandle mh;
    open_model(fl.model, mh);
    td_model_config mc;
    check(td_model_config_of(mh.m, &mc), "reading model config");

    std::vector<uint32_t> prompt(fl.prompt_len);
    check(td_synth_prompt(fl.model.seed, mc.vocab_size, prompt.size(), prompt.data()),
          "deriving prompt");
    const td_decode_config dc = decode_config_from(fl.dec);
    SessionHandle sh;
    check(td_session_open(mh.m, &dc, prompt.data(), prompt.size(), &sh.s), "opening session");
    std::vector<uint32_t> emitted(fl.steps);
    check(td_session_decode(sh.s, emitted.size(), emitted.data()), "decoding");

    uint64_t key_loads = 0, value_loads = 0, scans = 0;
    check(td_session_loads(sh.s, &key_loads, &value_loads, &scans), "reading load counters");
    double counted = 0.0, analytic = 0.0;
    check(td_session_load_ratios(sh.s, &counted, &analytic), "computing load ratios");

    ordered_json rep;
    rep["command"] = "decode";
    rep["mode"] = fl.dec.mode;
    rep["budget"] = fl.dec.budget;
    rep["reselect_layer"] =
        fl.dec.reselect >= 0 ? uint32_t(fl.dec.reselect) : td_default_reselect_layer(&mc);
    rep["steps"] = fl.steps;
    rep["prompt_len"] = fl.prompt_len;
    rep["correction_period"] = fl.dec.correction_period;
    rep["model"] = model_json(fl.model, mh.m);
    rep["emitted"] = emitted;
    rep["loads"] = ordered_json{{"key_token_loads", key_loads},
                                {"value_token_loads", value_loads},
                                {"selection_scans", scans}};
    rep["counted_ratio"] = counted;
    rep["analytic_ratio"] = analytic;

    if (fl.compare_full) {
        td_decode_config fc = dc;
        fc.mode = TD_MODE_FULL;
        SessionHandle fs;
        check(td_session_open(mh.m, &fc, prompt.data(), prompt.size(), &fs.s),
              "opening full-mode session");
        std::vector<uint32_t> full_emitted(fl.steps);
        check(td_session_decode(fs.s, full_emitted.size(), full_emitted.data()),
              "decoding full-mode reference");
        size_t same = 0;
        for (size_t i = 0; i < emitted.size(); ++i) same += emitted[i] == full_emitted[i];
        rep["agreement_vs_full"] = double(same) / double(emitted.size());
    }

    if (!fl.save_weights.empty()) {
        check(td_model_save(mh.m, fl.save_weights.c_str()), "saving weights");
    }
    if (!fl.trace_out.empty()) {
        std::vector<uint32_t> realized = prompt;
        realized.insert(realized.end(), emitted.begin(), emitted.end());
        write_token_file(fl.trace_out, realized);
    }
    rep["wall_clock_ms"] = ms_since(t0);
    emit_report(rep, fl.out);
    return 0;
}

// ---------------- eval-ppl ----------------

struct EvalCmd {
    ModelFlags model;
    DecodeFlags dec;
    std::string tokens_path;
    uint32_t warmup = 1;
    std::string out;
};

int run_eval(const EvalCmd & fl) {
    const auto t0 = clock_type::now();
    ModelHandle mh;
    open_model(fl.model, mh);
    const std::vector<uint32_t> tokens = read_token_file(fl.tokens_path);
    const td_decode_config dc = decode_config_from(fl.dec);
    double nats = 0.0;
    check(td_eval_cross_entropy(mh.m, &dc, tokens.data(), tokens.size(), fl.warmup, &nats),
          "evaluating " + fl.tokens_path);

    ordered_json rep;
    rep["command"] = "eval-ppl";
    rep["mode"] = fl.dec.mode;
    rep["budget"] = fl.dec.budget;
    rep["warmup"] = fl.warmup;
    rep["n_tokens"] = tokens.size();
    rep["model"] = model_json(fl.model, mh.m);
    rep["cross_entropy_nats"] = nats;
    rep["perplexity"] = std::exp(nats);
    rep["wall_clock_ms"] = ms_since(t0);
    emit_report(rep, fl.out);
    return 0;
}

// ---------------- needle ----------------

struct NeedleCmd {
    td_needle_params p{};
    std::string out;
};

int run_needle(const NeedleCmd & fl) {
    const auto t0 = clock_type::now();
    td_needle_report r{};
    check(td_needle_run(&fl.p, &r), "running needle trials");
    const auto acc = [&](uint64_t hits) { return double(hits) / double(r.trials); };

    ordered_json rep;
    rep["command"] = "needle";
    rep["n"] = fl.p.n;
    rep["head_dim"] = fl.p.head_dim;
    rep["budget"] = fl.p.budget;
    rep["page_size"] = fl.p.page_size;
    rep["sinks"] = fl.p.sinks;
    rep["window"] = fl.p.window;
    rep["trials"] = fl.p.trials;
    rep["seed"] = fl.p.seed;
    rep["hits"] = ordered_json{{"tidal", r.tidal_hits},
                               {"perlayer_topk", r.perlayer_hits},
                               {"page_estimate", r.page_hits},
                               {"window", r.window_hits}};
    rep["accuracy"] = ordered_json{{"tidal", acc(r.tidal_hits)},
                                   {"perlayer_topk", acc(r.perlayer_hits)},
                                   {"page_estimate", acc(r.page_hits)},
                                   {"window", acc(r.window_hits)}};
    rep["wall_clock_ms"] = ms_since(t0);
    emit_report(rep, fl.out);
    return 0;
}

// ---------------- analyze ----------------

struct AnalyzeCmd {
    ModelFlags model;
    uint32_t topk = 16;
    uint32_t steps = 8;
    uint32_t prompt_len = 32;
    std::string out = "analysis.json";
    std::string trace_out;
};

std::string strip_json_suffix(const std::string & p) {
    const std::string suffix = ".json";
    if (p.size() > suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return p.substr(0, p.size() - suffix.size());
    }
    return p;
}

int run_analyze(const AnalyzeCmd & fl) {
    const auto t0 = clock_type::now();
    ModelHandle mh;
    open_model(fl.model, mh);
    td_model_config mc;
    check(td_model_config_of(mh.m, &mc), "reading model config");

    std::vector<uint32_t> prompt(fl.prompt_len);
    check(td_synth_prompt(fl.model.seed, mc.vocab_size, prompt.size(), prompt.data()),
          "deriving prompt");
    TraceHandle th;
    check(td_trace_run(mh.m, prompt.data(), prompt.size(), fl.topk, fl.steps, &th.t),
          "recording trace");

    const std::string base = strip_json_suffix(fl.out);
    const std::string overlap_path = base + ".overlap.csv";
    const std::string recall_path = base + ".recall.csv";
    const std::string heatmap_path = fl.trace_out.empty() ? base + ".heatmap.csv" : fl.trace_out;

    CsvString overlap, recall, heatmap;
    check(td_trace_overlap_csv(th.t, &overlap.p), "building overlap matrix");
    check(td_trace_recall_csv(th.t, 2, &recall.p), "building recall curve");
    check(td_trace_heatmap_csv(th.t, 0, &heatmap.p), "building heatmap");
    write_file(overlap_path, overlap.p);
    write_file(recall_path, recall.p);
    write_file(heatmap_path, heatmap.p);

    ordered_json rep;
    rep["command"] = "analyze";
    rep["top_k"] = fl.topk;
    rep["steps"] = fl.steps;
    rep["prompt_len"] = fl.prompt_len;
    rep["base_select_layer"] = 2;
    rep["model"] = model_json(fl.model, mh.m);
    rep["files"] = ordered_json{
        {"overlap", overlap_path}, {"recall", recall_path}, {"heatmap", heatmap_path}};

    // The reselection sensitivity sweep: best candidate r by mean recall.
    double best_recall = -1.0;
    uint32_t best_r = 0;
    for (uint32_t r = 3; r < mc.n_layers; ++r) {
        double v = 0.0;
        check(td_trace_recall(th.t, 2, r, &v), "recall sweep");
        if (v > best_recall) {
            best_recall = v;
            best_r = r;
        }
    }
    if (best_recall >= 0.0) {
        rep["best_reselect_layer"] = best_r;
        rep["best_mean_recall"] = best_recall;
    }
    rep["wall_clock_ms"] = ms_since(t0);
    emit_report(rep, fl.out);
    return 0;
}

// ---------------- bench ----------------

struct BenchCmd {
    td_bench_params p{};
    std::string out;
};

int run_bench(const BenchCmd & fl) {
    const auto t0 = clock_type::now();
    td_bench_report r{};
    check(td_bench_run(&fl.p, &r), "running benchmark");
    const auto kernel = [](const td_kernel_bench & k) {
        return ordered_json{{"mean_ms", k.mean_ms},
                            {"key_loads", k.key_loads},
                            {"value_loads", k.value_loads},
                            {"selection_scans", k.scans}};
    };

    ordered_json rep;
    rep["command"] = "bench";
    rep["n"] = fl.p.n;
    rep["m"] = fl.p.m;
    rep["head_dim"] = fl.p.head_dim;
    rep["page_size"] = fl.p.page_size;
    rep["iters"] = fl.p.iters;
    rep["n_layers"] = fl.p.n_layers;
    rep["seed"] = fl.p.seed;
    rep["kernels"] = ordered_json{{"full", kernel(r.full)},
                                  {"select", kernel(r.select)},
                                  {"sparse", kernel(r.sparse)},
                                  {"page", kernel(r.page)}};
    rep["load_ratio"] = r.load_ratio;
    rep["checksum"] = r.checksum;
    rep["wall_clock_ms"] = ms_since(t0);
    emit_report(rep, fl.out);
    return 0;
}

template <typename F>
int guarded(F && f) {
    try {
        return f();
    } catch (const CliError & e) {
        std::fprintf(stderr, "error (%s): %s\n", td_status_name(e.status), e.message.c_str());
        return exit_code(e.status);
    }
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"tidal: sparse-attention decoding engine (decode, eval, analyses)"};
    app.require_subcommand(1);

    DecodeCmd decode_fl;
    auto * decode = app.add_subcommand("decode", "greedy generation run with a load report");
    add_model_flags(decode, decode_fl.model);
    add_decode_flags(decode, decode_fl.dec);
    decode->add_option("--steps", decode_fl.steps, "decode steps")
        ->check(CLI::Range(1u, 1000000u))
        ->capture_default_str();
    decode->add_option("--prompt-len", decode_fl.prompt_len, "derived synthetic prompt length")
        ->check(CLI::Range(1u, 1000000u))
        ->capture_default_str();
    decode->add_flag("--compare-full", decode_fl.compare_full,
                     "also run full mode and report emitted-token agreement");
    decode->add_option("--out", decode_fl.out, "report JSON path (default: stdout)");
    decode->add_option("--trace-out", decode_fl.trace_out,
                       "write the realized token sequence (prompt + emitted), one id per line");
    decode->add_option("--save-weights", decode_fl.save_weights,
                       "also save the model weights as TDW1");

    EvalCmd eval_fl;
    auto * eval = app.add_subcommand("eval-ppl", "teacher-forced cross-entropy over a token file");
    add_model_flags(eval, eval_fl.model);
    add_decode_flags(eval, eval_fl.dec);
    eval->add_option("--tokens", eval_fl.tokens_path, "token file, one decimal id per line")
        ->required();
    eval->add_option("--warmup", eval_fl.warmup, "first predicted position")
        ->check(CLI::Range(1u, 1000000u))
        ->capture_default_str();
    eval->add_option("--out", eval_fl.out, "report JSON path (default: stdout)");

    NeedleCmd needle_fl;
    td_needle_params_init(&needle_fl.p);
    auto * needle = app.add_subcommand("needle", "selection-level needle retrieval trials");
    needle->add_option("--n", needle_fl.p.n, "haystack rows")->capture_default_str();
    needle->add_option("--head-dim", needle_fl.p.head_dim, "key dimension")
        ->capture_default_str();
    needle->add_option("--budget", needle_fl.p.budget, "token budget m")->capture_default_str();
    needle->add_option("--page-size", needle_fl.p.page_size, "page size")->capture_default_str();
    needle->add_option("--sinks", needle_fl.p.sinks, "sink tokens")->capture_default_str();
    needle->add_option("--window", needle_fl.p.window, "recency window")->capture_default_str();
    needle->add_option("--trials", needle_fl.p.trials, "trial count")->capture_default_str();
    needle->add_option("--synth-seed", needle_fl.p.seed, "trial RNG seed")->capture_default_str();
    needle->add_option("--out", needle_fl.out, "report JSON path (default: stdout)");

    AnalyzeCmd analyze_fl;
    auto * analyze = app.add_subcommand(
        "analyze", "full-attention top-k trace: overlap matrix, recall curve, heatmap");
    add_model_flags(analyze, analyze_fl.model);
    analyze->add_option("--budget", analyze_fl.topk, "trace top-k depth")->capture_default_str();
    analyze->add_option("--steps", analyze_fl.steps, "decode steps to trace")
        ->check(CLI::Range(1u, 1000000u))
        ->capture_default_str();
    analyze->add_option("--prompt-len", analyze_fl.prompt_len, "derived prompt length")
        ->check(CLI::Range(1u, 1000000u))
        ->capture_default_str();
    analyze->add_option("--out", analyze_fl.out, "report JSON path; CSVs are written beside it")
        ->capture_default_str();
    analyze->add_option("--trace-out", analyze_fl.trace_out, "heatmap CSV path override");

    BenchCmd bench_fl;
    td_bench_params_init(&bench_fl.p);
    auto * bench = app.add_subcommand("bench", "kernel wall-clock and load-count microbenchmark");
    bench->add_option("--n", bench_fl.p.n, "cache rows")->capture_default_str();
    bench->add_option("--budget", bench_fl.p.m, "token budget m")->capture_default_str();
    bench->add_option("--head-dim", bench_fl.p.head_dim, "head dimension")->capture_default_str();
    bench->add_option("--page-size", bench_fl.p.page_size, "page size")->capture_default_str();
    bench->add_option("--iters", bench_fl.p.iters, "iterations per kernel")
        ->check(CLI::Range(size_t(1), size_t(1000000)))
        ->capture_default_str();
    bench->add_option("--layers", bench_fl.p.n_layers, "layers for the schedule load ratio")
        ->capture_default_str();
    bench->add_option("--synth-seed", bench_fl.p.seed, "input RNG seed")->capture_default_str();
    bench->add_option("--out", bench_fl.out, "report JSON path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 2;
    }

    if (decode->parsed()) return guarded([&] { return run_decode(decode_fl); });
    if (eval->parsed()) return guarded([&] { return run_eval(eval_fl); });
    if (needle->parsed()) return guarded([&] { return run_needle(needle_fl); });
    if (analyze->parsed()) return guarded([&] { return run_analyze(analyze_fl); });
    if (bench->parsed()) return guarded([&] { return run_bench(bench_fl); });
    return 2;
}
