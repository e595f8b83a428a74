#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "core/error.h"
#include "core/kv_cache.h"
#include "core/rng.h"

#include <cstring>
#include <vector>

using namespace tidal;

namespace {

Vector row_of(SplitMix64 & rng, size_t n) {
    Vector v(n);
    for (float & x : v) x = rng.next_in(-1.0f, 1.0f);
    return v;
}

// Raw bytes of every slot, for untouched-row checks.
std::vector<float> snapshot(const KvCache & c) {
    std::vector<float> out;
    for (size_t l = 0; l < c.n_layers(); ++l) {
        for (size_t h = 0; h < c.n_kv_heads(); ++h) {
            const MatrixView k = c.keys(l, h);
            const MatrixView v = c.values(l, h);
            out.insert(out.end(), k.data, k.data + k.rows * k.cols);
            out.insert(out.end(), v.data, v.data + v.rows * v.cols);
        }
    }
    return out;
}

} // namespace

TEST_CASE("construction validates dimensions") {
    CHECK_THROWS_AS(KvCache(0, 1, 4), shape_error);
    CHECK_THROWS_AS(KvCache(2, 0, 4), shape_error);
    CHECK_THROWS_AS(KvCache(2, 1, 0), shape_error);
    const KvCache c(3, 2, 4);
    CHECK(c.n_layers() == 3);
    CHECK(c.n_kv_heads() == 2);
    CHECK(c.head_dim() == 4);
    CHECK(c.len() == 0);
}

TEST_CASE("len advances only when every layer has appended") {
    KvCache c(2, 1, 2);
    const Vector k = {1.0f, 2.0f};
    const Vector v = {3.0f, 4.0f};
    c.append(0, k, v);
    CHECK(c.len() == 0);  // layer 1 still missing
    c.append(1, k, v);
    CHECK(c.len() == 1);
    c.append(1, k, v);
    CHECK(c.len() == 0 + 1);  // layer 0 missing again
    c.append(0, k, v);
    CHECK(c.len() == 2);
}

TEST_CASE("double append in one round throws state_error") {
    KvCache c(2, 1, 2);
    const Vector r = {0.0f, 0.0f};
    c.append(0, r, r);
    CHECK_THROWS_AS(c.append(0, r, r), state_error);
}

TEST_CASE("append validates shapes and layer index") {
    KvCache c(1, 2, 3);  // rows are 2*3 = 6 floats
    CHECK_THROWS_AS(c.append(0, Vector(5, 0.0f), Vector(6, 0.0f)), shape_error);
    CHECK_THROWS_AS(c.append(0, Vector(6, 0.0f), Vector(7, 0.0f)), shape_error);
    CHECK_THROWS_AS(c.append(1, Vector(6, 0.0f), Vector(6, 0.0f)), bounds_error);
}

TEST_CASE("gather reproduces append order exactly") {
    SplitMix64 rng(11);
    KvCache c(2, 2, 4);
    std::vector<Vector> ks, vs;
    for (int t = 0; t < 5; ++t) {
        ks.push_back(row_of(rng, 8));
        vs.push_back(row_of(rng, 8));
        for (size_t l = 0; l < 2; ++l) c.append(l, ks.back(), vs.back());
    }
    REQUIRE(c.len() == 5);

    std::vector<uint32_t> all = {0, 1, 2, 3, 4};
    for (size_t h = 0; h < 2; ++h) {
        const auto [gk, gv] = c.gather(0, h, all);
        for (size_t t = 0; t < 5; ++t) {
            for (size_t d = 0; d < 4; ++d) {
                CHECK(gk.at(t, d) == ks[t][h * 4 + d]);
                CHECK(gv.at(t, d) == vs[t][h * 4 + d]);
            }
        }
    }

    SUBCASE("gather follows the requested order") {
        const auto [gk, gv] = c.gather(1, 0, {4, 0});
        CHECK(gk.at(0, 0) == ks[4][0]);
        CHECK(gk.at(1, 0) == ks[0][0]);
    }
    SUBCASE("stale index throws bounds_error") {
        CHECK_THROWS_AS(c.gather(0, 0, {5}), bounds_error);
    }
}

TEST_CASE("views expose the growing prefix") {
    KvCache c(1, 1, 2);
    CHECK(c.keys(0, 0).rows == 0);
    c.append(0, {1.0f, 2.0f}, {3.0f, 4.0f});
    const MatrixView k = c.keys(0, 0);
    const MatrixView v = c.values(0, 0);
    REQUIRE(k.rows == 1);
    CHECK(k.at(0, 1) == 2.0f);
    CHECK(v.at(0, 0) == 3.0f);
}

TEST_CASE("overwrite touches only the listed position") {
    SplitMix64 rng(13);
    KvCache c(2, 2, 3);
    for (int t = 0; t < 4; ++t) {
        const Vector k = row_of(rng, 6);
        const Vector v = row_of(rng, 6);
        c.append(0, k, v);
        c.append(1, k, v);
    }
    const std::vector<float> before = snapshot(c);

    SUBCASE("rewriting identical rows is a no-op") {
        Vector k(6), v(6);
        for (size_t h = 0; h < 2; ++h) {
            const auto [hk, hv] = c.gather(0, h, {2});
            std::memcpy(k.data() + h * 3, hk.row(0), 3 * sizeof(float));
            std::memcpy(v.data() + h * 3, hv.row(0), 3 * sizeof(float));
        }
        c.overwrite(0, 2, k, v);
        CHECK(snapshot(c) == before);
    }

    SUBCASE("new rows land, everything else is untouched") {
        const Vector nk(6, 9.0f), nv(6, -9.0f);
        c.overwrite(1, 1, nk, nv);
        for (size_t h = 0; h < 2; ++h) {
            const auto [gk, gv] = c.gather(1, h, {1});
            for (size_t d = 0; d < 3; ++d) {
                CHECK(gk.at(0, d) == 9.0f);
                CHECK(gv.at(0, d) == -9.0f);
            }
        }
        // layer 0 and the other positions of layer 1 keep their bytes
        size_t diffs = 0;
        const std::vector<float> after = snapshot(c);
        REQUIRE(after.size() == before.size());
        for (size_t i = 0; i < after.size(); ++i) diffs += after[i] != before[i];
        CHECK(diffs == 12);  // exactly one k-row and one v-row of 6 floats
    }

    SUBCASE("bounds and shape checks") {
        CHECK_THROWS_AS(c.overwrite(0, 4, Vector(6, 0.0f), Vector(6, 0.0f)), bounds_error);
        CHECK_THROWS_AS(c.overwrite(0, 0, Vector(5, 0.0f), Vector(6, 0.0f)), shape_error);
    }
}

TEST_CASE("pollution log stays sorted and unique") {
    PollutionLog log;
    CHECK(log.empty());
    log.mark(7);
    log.mark(3);
    log.mark(7);
    log.mark(5);
    CHECK(log.positions() == std::vector<size_t>{3, 5, 7});
    log.clear();
    CHECK(log.empty());
    CHECK(log.positions().empty());
}

TEST_CASE("cache size formula") {
    // 32 layers, 32 kv heads, head_dim 128, 128K context, fp16: 64 GiB.
    CHECK(kv_cache_size_bytes(32, 32, 128, 131072, 2) == 68719476736ULL);
    CHECK(kv_cache_size_bytes(1, 1, 1, 1, 1) == 2);

    SUBCASE("multiplicative in every argument") {
        const uint64_t base = kv_cache_size_bytes(3, 5, 7, 11, 2);
        CHECK(kv_cache_size_bytes(6, 5, 7, 11, 2) == 2 * base);
        CHECK(kv_cache_size_bytes(3, 10, 7, 11, 2) == 2 * base);
        CHECK(kv_cache_size_bytes(3, 5, 14, 11, 2) == 2 * base);
        CHECK(kv_cache_size_bytes(3, 5, 7, 22, 2) == 2 * base);
        CHECK(kv_cache_size_bytes(3, 5, 7, 11, 4) == 2 * base);
    }
}
