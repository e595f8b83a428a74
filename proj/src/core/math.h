#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace tidal {

using Vector = std::vector<float>;

// Row-major dense float32 matrix.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float & at(size_t r, size_t c) { return data[r * cols + c]; }
    float at(size_t r, size_t c) const { return data[r * cols + c]; }
    const float * row(size_t r) const { return data.data() + r * cols; }
    float * row(size_t r) { return data.data() + r * cols; }
};

// Non-owning view of row-major storage. The attention kernels take views so
// they can run over a prefix of a growing cache without copying.
struct MatrixView {
    size_t rows = 0;
    size_t cols = 0;
    const float * data = nullptr;

    MatrixView() = default;
    MatrixView(size_t r, size_t c, const float * d) : rows(r), cols(c), data(d) {}
    MatrixView(const Matrix & m) : rows(m.rows), cols(m.cols), data(m.data.data()) {}

    const float * row(size_t r) const { return data + r * cols; }
    float at(size_t r, size_t c) const { return data[r * cols + c]; }

    // First n rows.
    MatrixView prefix(size_t n) const { return MatrixView(n, cols, data); }
};

// All accumulations below run in a fixed left-to-right order so results are
// bit-identical between runs on one platform.

// Standard product; throws shape_error on inner-dimension mismatch.
Matrix matmul(const MatrixView & a, const MatrixView & b);

float dot(const float * a, const float * b, size_t n);

// out = v (1 x n) times m (n x c); the workhorse of the model forward pass.
Vector vecmat(const Vector & v, const MatrixView & m);

// Numerically stable (max-subtracted) softmax. Throws shape_error on empty
// input.
Vector softmax_row(const Vector & x);

// Indices of the m largest entries, ties broken toward the lower index,
// returned sorted ascending. Throws budget_error unless 1 <= m <= len.
std::vector<uint32_t> arg_top_k(const float * scores, size_t len, size_t m);
std::vector<uint32_t> arg_top_k(const Vector & scores, size_t m);

// x / sqrt(mean(x^2) + eps) * weight, elementwise.
Vector rms_norm(const Vector & x, const Vector & weight, float eps);

// Rotary embedding: within each head, the (2i, 2i+1) pair is rotated by
// angle position * theta_base^(-2i/head_dim). Applied in place.
void rope_apply_inplace(Vector & x, size_t position, size_t head_dim, float theta_base);
Vector rope_apply(const Vector & x, size_t position, size_t head_dim, float theta_base);

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

} // namespace tidal
