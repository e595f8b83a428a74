#include "core/math.h"

#include "core/error.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tidal {

Matrix matmul(const MatrixView & a, const MatrixView & b) {
    if (a.cols != b.rows) {
        throw shape_error("matmul: inner dimensions differ (" +
                          std::to_string(a.cols) + " vs " + std::to_string(b.rows) + ")");
    }
    Matrix out(a.rows, b.cols);
    for (size_t i = 0; i < a.rows; ++i) {
        const float * arow = a.row(i);
        float * orow = out.row(i);
        for (size_t j = 0; j < b.cols; ++j) {
            float acc = 0.0f;
            for (size_t k = 0; k < a.cols; ++k) {
                acc += arow[k] * b.at(k, j);
            }
            orow[j] = acc;
        }
    }
    return out;
}

float dot(const float * a, const float * b, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

Vector vecmat(const Vector & v, const MatrixView & m) {
    if (v.size() != m.rows) {
        throw shape_error("vecmat: vector length " + std::to_string(v.size()) +
                          " vs matrix rows " + std::to_string(m.rows));
    }
    Vector out(m.cols, 0.0f);
    // Accumulate row by row; same result order as matmul with a 1-row lhs.
    for (size_t j = 0; j < m.cols; ++j) {
        float acc = 0.0f;
        for (size_t k = 0; k < m.rows; ++k) {
            acc += v[k] * m.at(k, j);
        }
        out[j] = acc;
    }
    return out;
}

Vector softmax_row(const Vector & x) {
    if (x.empty()) {
        throw shape_error("softmax_row: empty input");
    }
    float mx = x[0];
    for (float v : x) {
        mx = std::max(mx, v);
    }
    Vector out(x.size());
    float sum = 0.0f;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (float & v : out) {
        v /= sum;
    }
    return out;
}

std::vector<uint32_t> arg_top_k(const float * scores, size_t len, size_t m) {
    if (m < 1 || m > len) {
        throw budget_error("arg_top_k: budget " + std::to_string(m) +
                           " out of range for " + std::to_string(len) + " scores");
    }
    std::vector<uint32_t> idx(len);
    std::iota(idx.begin(), idx.end(), 0u);
    std::partial_sort(idx.begin(), idx.begin() + m, idx.end(),
                      [scores](uint32_t a, uint32_t b) {
                          if (scores[a] != scores[b]) {
                              return scores[a] > scores[b];
                          }
                          return a < b;  // tie: lower index wins
                      });
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<uint32_t> arg_top_k(const Vector & scores, size_t m) {
    return arg_top_k(scores.data(), scores.size(), m);
}

Vector rms_norm(const Vector & x, const Vector & weight, float eps) {
    if (x.size() != weight.size()) {
        throw shape_error("rms_norm: length mismatch");
    }
    float ss = 0.0f;
    for (float v : x) {
        ss += v * v;
    }
    const float inv = 1.0f / std::sqrt(ss / float(x.size()) + eps);
    Vector out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * inv * weight[i];
    }
    return out;
}

void rope_apply_inplace(Vector & x, size_t position, size_t head_dim, float theta_base) {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw shape_error("rope_apply: head_dim must be even and nonzero");
    }
    if (x.size() % head_dim != 0) {
        throw shape_error("rope_apply: length not a multiple of head_dim");
    }
    const size_t n_heads = x.size() / head_dim;
    for (size_t h = 0; h < n_heads; ++h) {
        float * head = x.data() + h * head_dim;
        for (size_t i = 0; i < head_dim / 2; ++i) {
            const float freq = std::pow(theta_base, -2.0f * float(i) / float(head_dim));
            const float angle = float(position) * freq;
            const float c = std::cos(angle);
            const float s = std::sin(angle);
            const float x0 = head[2 * i];
            const float x1 = head[2 * i + 1];
            head[2 * i]     = x0 * c - x1 * s;
            head[2 * i + 1] = x0 * s + x1 * c;
        }
    }
}

Vector rope_apply(const Vector & x, size_t position, size_t head_dim, float theta_base) {
    Vector out = x;
    rope_apply_inplace(out, position, head_dim, theta_base);
    return out;
}

} // namespace tidal
