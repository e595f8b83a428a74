#include "core/analysis.h"

#include "core/attention.h"
#include "core/error.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>

namespace tidal {

namespace {

size_t intersect_count(const std::vector<uint32_t> & a, const std::vector<uint32_t> & b) {
    size_t i = 0, j = 0, c = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            ++c;
            ++i;
            ++j;
        }
    }
    return c;
}

void append_f6(std::string & out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    out += buf;
}

} // namespace

TraceRecord trace_topk(const ModelWeights & weights, std::span<const uint32_t> prompt,
                       uint32_t k, size_t n_steps) {
    if (k < 1 || k > prompt.size()) {
        throw budget_error("trace: k must be in [1, prompt length]");
    }
    if (n_steps < 1) throw input_error("trace: n_steps must be >= 1");
    if (prompt.size() < 2) throw input_error("trace: prompt must hold at least 2 tokens");
    DecodeConfig cfg;
    cfg.mode = DecodeMode::full;
    // The first traced step replays the last prompt token teacher-forced, so
    // its attention (and top-k) covers exactly the prompt-length cache; with
    // k == prompt length the recorded sets are the full range. Subsequent
    // steps decode greedily, identical to generating from the whole prompt.
    Session s(weights, cfg, prompt.first(prompt.size() - 1));
    s.enable_topk_capture(k);
    s.step(prompt.back());
    for (size_t i = 1; i < n_steps; ++i) s.decode_next();
    TraceRecord trace;
    trace.k = k;
    trace.n_layers = weights.config.n_layers;
    trace.n_kv_heads = weights.config.n_kv_heads;
    trace.sets = s.captured_topk();
    trace.cache_lens = s.step_lens();
    return trace;
}

OverlapMatrix overlap_matrix(const TraceRecord & trace) {
    if (trace.n_steps() == 0 || trace.n_layers == 0 || trace.n_kv_heads == 0 || trace.k == 0) {
        throw state_error("overlap: empty trace");
    }
    const size_t L = trace.n_layers;
    const uint64_t samples = uint64_t(trace.n_steps()) * trace.n_kv_heads;
    OverlapMatrix m(L, std::vector<double>(L, 0.0));
    for (size_t i = 0; i < L; ++i) {
        for (size_t j = i; j < L; ++j) {
            uint64_t common = 0;
            for (const auto & step : trace.sets) {
                for (size_t h = 0; h < trace.n_kv_heads; ++h) {
                    common += intersect_count(step[i][h], step[j][h]);
                }
            }
            const double v = double(common) / double(samples * trace.k);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    return m;
}

double layer_recall(const TraceRecord & trace, size_t base, size_t r, size_t layer) {
    if (!(base < r && r < trace.n_layers)) {
        throw schedule_error("recall: need base < r < n_layers");
    }
    if (!(base < layer && layer < trace.n_layers)) {
        throw schedule_error("recall: layer must lie in (base, n_layers)");
    }
    const size_t src = layer < r ? base : r;
    uint64_t common = 0;
    for (const auto & step : trace.sets) {
        for (size_t h = 0; h < trace.n_kv_heads; ++h) {
            common += intersect_count(step[src][h], step[layer][h]);
        }
    }
    const uint64_t samples = uint64_t(trace.n_steps()) * trace.n_kv_heads;
    return double(common) / double(samples * trace.k);
}

double recall_by_reselection(const TraceRecord & trace, size_t base, size_t r) {
    if (!(base < r && r < trace.n_layers)) {
        throw schedule_error("recall: need base < r < n_layers");
    }
    double sum = 0.0;
    size_t n = 0;
    for (size_t layer = base + 1; layer < trace.n_layers; ++layer) {
        if (layer == r) continue;  // selection layer, ground truth by construction
        sum += layer_recall(trace, base, r, layer);
        ++n;
    }
    return n == 0 ? 1.0 : sum / double(n);
}

std::string overlap_csv(const OverlapMatrix & m) {
    std::string out;
    for (size_t j = 0; j < m.size(); ++j) {
        if (j) out += ',';
        out += "layer_" + std::to_string(j);
    }
    out += '\n';
    for (const auto & row : m) {
        for (size_t j = 0; j < row.size(); ++j) {
            if (j) out += ',';
            append_f6(out, row[j]);
        }
        out += '\n';
    }
    return out;
}

std::string recall_csv(const TraceRecord & trace, size_t base) {
    std::string out = "reselect_layer,mean_recall\n";
    for (size_t r = base + 1; r < trace.n_layers; ++r) {
        out += std::to_string(r);
        out += ',';
        append_f6(out, recall_by_reselection(trace, base, r));
        out += '\n';
    }
    return out;
}

std::string heatmap_csv(const TraceRecord & trace, size_t kv_head) {
    if (kv_head >= trace.n_kv_heads) throw bounds_error("heatmap: kv_head out of range");
    std::string out = "step,layer,rank,token_position\n";
    for (size_t s = 0; s < trace.n_steps(); ++s) {
        for (size_t l = 0; l < trace.n_layers; ++l) {
            const auto & set = trace.sets[s][l][kv_head];
            for (size_t rank = 0; rank < set.size(); ++rank) {
                out += std::to_string(s);
                out += ',';
                out += std::to_string(l);
                out += ',';
                out += std::to_string(rank);
                out += ',';
                out += std::to_string(set[rank]);
                out += '\n';
            }
        }
    }
    return out;
}

std::vector<std::vector<std::vector<uint32_t>>> heatmap_parse(const std::string & csv) {
    std::vector<std::vector<std::vector<uint32_t>>> out;
    size_t pos = 0;
    bool header = true;
    while (pos < csv.size()) {
        size_t eol = csv.find('\n', pos);
        if (eol == std::string::npos) eol = csv.size();
        const std::string_view line(csv.data() + pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        if (header) {
            if (line != "step,layer,rank,token_position") {
                throw format_error("heatmap: unexpected header");
            }
            header = false;
            continue;
        }
        uint64_t field[4];
        const char * p = line.data();
        const char * end = line.data() + line.size();
        for (int f = 0; f < 4; ++f) {
            auto [next, ec] = std::from_chars(p, end, field[f]);
            if (ec != std::errc()) throw format_error("heatmap: bad integer field");
            p = next;
            if (f < 3) {
                if (p == end || *p != ',') throw format_error("heatmap: expected comma");
                ++p;
            }
        }
        if (p != end) throw format_error("heatmap: trailing characters");
        const size_t step = field[0], layer = field[1], rank = field[2];
        if (step >= out.size()) out.resize(step + 1);
        if (layer >= out[step].size()) out[step].resize(layer + 1);
        if (rank != out[step][layer].size()) {
            throw format_error("heatmap: ranks out of order");
        }
        out[step][layer].push_back(uint32_t(field[3]));
    }
    if (header) throw format_error("heatmap: missing header");
    return out;
}

AccessReport access_report(const Session & session) {
    const AccessStats & st = session.stats();
    const auto & lens = session.step_lens();
    const size_t L = st.n_layers();
    const uint64_t n_kv = session.cache().n_kv_heads();
    AccessReport rep;
    const AccessStats::Counts totals = st.total();
    rep.counted_loads = totals.key_token_loads + totals.value_token_loads;
    uint64_t sum_len = 0;
    for (const size_t len : lens) sum_len += len;
    rep.full_equiv_loads = 2 * uint64_t(L) * n_kv * sum_len;
    rep.counted_ratio =
        rep.counted_loads == 0 ? 1.0 : double(rep.full_equiv_loads) / double(rep.counted_loads);

    // Analytic side: full/select layers touch the whole cache, the other
    // layers touch the per-step sparse set.
    size_t n_dense = L, n_sparse = 0;
    const DecodeConfig & cfg = session.config();
    if (cfg.mode == DecodeMode::tidal) {
        const LayerSchedule & sched = session.schedule();
        n_dense = sched.count(LayerRole::full) + sched.count(LayerRole::select);
        n_sparse = sched.count(LayerRole::sparse);
    } else if (cfg.mode != DecodeMode::full) {
        n_dense = 2;
        n_sparse = L - 2;
    }
    uint64_t sum_m = 0;
    for (const size_t len : lens) {
        if (cfg.mode == DecodeMode::window) {
            sum_m += window_select(len, cfg.sinks, cfg.window).size();
        } else {
            sum_m += std::min<size_t>(cfg.budget, len);
        }
    }
    const uint64_t denom = uint64_t(n_dense) * sum_len + uint64_t(n_sparse) * sum_m;
    rep.analytic_ratio = denom == 0 ? 1.0 : double(uint64_t(L) * sum_len) / double(denom);
    return rep;
}

double analytic_load_ratio(size_t n_layers, size_t n_full, size_t n_select, size_t n_sparse,
                           size_t n, size_t m) {
    const double denom =
        double(n_full + n_select) * double(n) + double(n_sparse) * double(m);
    if (denom == 0.0) return 1.0;
    return double(n_layers) * double(n) / denom;
}

} // namespace tidal
