#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "core/error.h"
#include "core/math.h"
#include "core/rng.h"

#include <algorithm>
#include <cmath>

using namespace tidal;

TEST_CASE("splitmix64 matches an independently coded reference") {
    // First outputs of the seed-0 stream, recomputed outside this codebase
    // from the three SplitMix64 constants.
    SplitMix64 rng(0);
    CHECK(rng.next() == 0xe220a8397b1dcdafULL);
    CHECK(rng.next() == 0x6e789e6aa1b965f4ULL);
    CHECK(rng.next() == 0x06c45d188009454fULL);
    CHECK(rng.next() == 0xf88bb8a8724c81ecULL);

    SplitMix64 u(0);
    CHECK(u.next_unit() == doctest::Approx(0.8833107948303223).epsilon(1e-12));
    CHECK(u.next_unit() == doctest::Approx(0.4315279722213745).epsilon(1e-12));
    CHECK(u.next_unit() == doctest::Approx(0.02643376588821411).epsilon(1e-12));
    CHECK(u.next_unit() == doctest::Approx(0.9708819389343262).epsilon(1e-12));

    SplitMix64 one(1);
    CHECK(one.next() == 0x910a2dec89025cc1ULL);
}

TEST_CASE("splitmix64 derived draws stay in range") {
    SplitMix64 rng(123);
    for (int i = 0; i < 1000; ++i) {
        const float v = rng.next_unit();
        CHECK(v >= 0.0f);
        CHECK(v < 1.0f);
    }
    for (int i = 0; i < 1000; ++i) {
        const float v = rng.next_in(-2.5f, 0.5f);
        CHECK(v >= -2.5f);
        CHECK(v < 0.5f);
    }
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng.next_below(7) < 7);
    }
}

TEST_CASE("matmul against a hand-computed product") {
    Matrix a(2, 3);
    a.data = {1, 2, 3, 4, 5, 6};
    Matrix b(3, 2);
    b.data = {7, 8, 9, 10, 11, 12};
    const Matrix c = matmul(a, b);
    REQUIRE(c.rows == 2);
    REQUIRE(c.cols == 2);
    CHECK(c.at(0, 0) == 58.0f);
    CHECK(c.at(0, 1) == 64.0f);
    CHECK(c.at(1, 0) == 139.0f);
    CHECK(c.at(1, 1) == 154.0f);

    CHECK_THROWS_AS(matmul(a, a), shape_error);
}

TEST_CASE("vecmat equals matmul with a one-row lhs") {
    SplitMix64 rng(5);
    Matrix m(7, 4);
    for (float & x : m.data) x = rng.next_in(-1.0f, 1.0f);
    Vector v(7);
    for (float & x : v) x = rng.next_in(-1.0f, 1.0f);

    Matrix vrow(1, 7);
    vrow.data.assign(v.begin(), v.end());
    const Matrix ref = matmul(vrow, m);
    const Vector out = vecmat(v, m);
    REQUIRE(out.size() == 4);
    for (size_t j = 0; j < 4; ++j) CHECK(out[j] == ref.at(0, j));

    CHECK_THROWS_AS(vecmat(Vector(3, 0.0f), m), shape_error);
}

TEST_CASE("dot") {
    const float a[3] = {1.0f, 2.0f, 3.0f};
    const float b[3] = {4.0f, -5.0f, 6.0f};
    CHECK(dot(a, b, 3) == 1.0f * 4.0f + 2.0f * -5.0f + 3.0f * 6.0f);
    CHECK(dot(a, b, 0) == 0.0f);
}

TEST_CASE("softmax_row") {
    SUBCASE("normalizes and preserves order") {
        const Vector p = softmax_row({1.0f, 3.0f, 2.0f});
        float sum = 0.0f;
        for (float v : p) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(p[1] > p[2]);
        CHECK(p[2] > p[0]);
    }
    SUBCASE("single element is exactly one") {
        const Vector p = softmax_row({42.0f});
        REQUIRE(p.size() == 1);
        CHECK(p[0] == 1.0f);
    }
    SUBCASE("uniform input gives uniform output") {
        const Vector p = softmax_row(Vector(8, -3.5f));
        for (float v : p) CHECK(v == doctest::Approx(0.125).epsilon(1e-6));
    }
    SUBCASE("large magnitudes stay finite") {
        const Vector p = softmax_row({1000.0f, 999.0f, -1000.0f});
        for (float v : p) CHECK(std::isfinite(v));
        CHECK(p[0] > p[1]);
    }
    SUBCASE("empty input throws") {
        CHECK_THROWS_AS(softmax_row({}), shape_error);
    }
}

TEST_CASE("arg_top_k basics") {
    const Vector s = {0.5f, 2.0f, -1.0f, 2.0f, 1.0f};
    SUBCASE("picks the largest, sorted ascending") {
        CHECK(arg_top_k(s, 2) == std::vector<uint32_t>{1, 3});
        CHECK(arg_top_k(s, 3) == std::vector<uint32_t>{1, 3, 4});
    }
    SUBCASE("ties break toward the lower index") {
        const Vector t(4, 7.0f);
        CHECK(arg_top_k(t, 2) == std::vector<uint32_t>{0, 1});
    }
    SUBCASE("m == len returns every index") {
        CHECK(arg_top_k(s, 5) == std::vector<uint32_t>{0, 1, 2, 3, 4});
    }
    SUBCASE("budget out of range throws") {
        CHECK_THROWS_AS(arg_top_k(s, 0), budget_error);
        CHECK_THROWS_AS(arg_top_k(s, 6), budget_error);
    }
}

TEST_CASE("arg_top_k is invariant under softmax") {
    // The softmax is strictly monotone, so selecting on raw scores or on
    // softmax probabilities must give the same set.
    SplitMix64 rng(77);
    for (int it = 0; it < 200; ++it) {
        const size_t len = 8 + size_t(rng.next_below(500));
        Vector scores(len);
        for (float & v : scores) v = rng.next_in(-4.0f, 4.0f);
        const Vector probs = softmax_row(scores);
        for (const size_t m : {size_t(1), size_t(8), size_t(64)}) {
            if (m > len) continue;
            CHECK(arg_top_k(scores, m) == arg_top_k(probs, m));
        }
    }
}

TEST_CASE("rms_norm") {
    SUBCASE("hand case") {
        const Vector x = {3.0f, 4.0f};
        const Vector w = {1.0f, 2.0f};
        // mean square 12.5; eps 0 for the clean closed form
        const Vector out = rms_norm(x, w, 0.0f);
        const float inv = 1.0f / std::sqrt(12.5f);
        CHECK(out[0] == doctest::Approx(3.0f * inv).epsilon(1e-6));
        CHECK(out[1] == doctest::Approx(4.0f * inv * 2.0f).epsilon(1e-6));
    }
    SUBCASE("zero vector stays finite thanks to eps") {
        const Vector out = rms_norm(Vector(4, 0.0f), Vector(4, 1.0f), 1e-5f);
        for (float v : out) CHECK(v == 0.0f);
    }
    SUBCASE("length mismatch throws") {
        CHECK_THROWS_AS(rms_norm(Vector(3, 1.0f), Vector(4, 1.0f), 1e-5f), shape_error);
    }
}

TEST_CASE("rope rotation") {
    SUBCASE("position zero is the identity") {
        Vector x = {0.1f, -0.2f, 0.3f, 0.4f};
        const Vector orig = x;
        rope_apply_inplace(x, 0, 4, 10000.0f);
        CHECK(x == orig);
    }
    SUBCASE("hand case: first pair rotates by exactly `position` radians") {
        // For pair index 0 the frequency is theta^0 == 1.
        Vector x = {1.0f, 0.0f};
        rope_apply_inplace(x, 1, 2, 10000.0f);
        CHECK(x[0] == doctest::Approx(std::cos(1.0f)).epsilon(1e-6));
        CHECK(x[1] == doctest::Approx(std::sin(1.0f)).epsilon(1e-6));
    }
    SUBCASE("norm is preserved") {
        SplitMix64 rng(9);
        Vector x(16);
        for (float & v : x) v = rng.next_in(-1.0f, 1.0f);
        float before = 0.0f;
        for (float v : x) before += v * v;
        rope_apply_inplace(x, 1234, 8, 10000.0f);
        float after = 0.0f;
        for (float v : x) after += v * v;
        CHECK(after == doctest::Approx(before).epsilon(1e-4));
    }
    SUBCASE("multi-head input rotates each head the same way") {
        Vector two_heads = {1.0f, 0.0f, 1.0f, 0.0f};
        const Vector one_head = rope_apply({1.0f, 0.0f}, 3, 2, 10000.0f);
        rope_apply_inplace(two_heads, 3, 2, 10000.0f);
        CHECK(two_heads[0] == one_head[0]);
        CHECK(two_heads[1] == one_head[1]);
        CHECK(two_heads[2] == one_head[0]);
        CHECK(two_heads[3] == one_head[1]);
    }
    SUBCASE("shape errors") {
        Vector x(6, 1.0f);
        CHECK_THROWS_AS(rope_apply_inplace(x, 0, 3, 10000.0f), shape_error);  // odd head_dim
        CHECK_THROWS_AS(rope_apply_inplace(x, 0, 4, 10000.0f), shape_error);  // 6 % 4 != 0
        CHECK_THROWS_AS(rope_apply_inplace(x, 0, 0, 10000.0f), shape_error);
    }
}

TEST_CASE("silu") {
    CHECK(silu(0.0f) == 0.0f);
    CHECK(silu(10.0f) == doctest::Approx(10.0f).epsilon(1e-3));
    CHECK(silu(-10.0f) == doctest::Approx(0.0f).epsilon(1e-3));
}

TEST_CASE("matrix view prefix") {
    Matrix m(4, 2);
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = float(i);
    const MatrixView v(m);
    const MatrixView p = v.prefix(2);
    CHECK(p.rows == 2);
    CHECK(p.cols == 2);
    CHECK(p.at(1, 1) == 3.0f);
    CHECK(p.row(1) == m.row(1));
}
