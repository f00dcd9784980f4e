#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "sasq/error.hpp"
#include "sasq/kernels.hpp"
#include "sasq/rng.hpp"
#include "sasq/threading.hpp"

using namespace sasq;

namespace {

std::vector<float> random_floats(Rng& rng, size_t n, float lo, float hi) {
    std::vector<float> v(n);
    for (float& x : v) x = lo + (hi - lo) * static_cast<float>(rng.uniform());
    return v;
}

// values that sit exactly on .5 ties and at clamp edges
std::vector<float> adversarial_floats() {
    return {0.5f,   -0.5f,  1.5f,    -1.5f,  2.5f,   -2.5f,  126.5f, -126.5f, 127.5f,
            -127.5f, 0.0f,  -0.0f,   0.49f,  -0.49f, 300.0f, -300.0f, 127.0f, -128.0f,
            -129.0f, 128.0f, 1e-8f,  -1e-8f, 33.5f,  -33.5f, 99.5f,  -99.5f};
}

}  // namespace

TEST_CASE("round_half_away matches std::round on ties and near-ties") {
    const auto& f = kernels::scalar_funcs();
    std::vector<float> xs = adversarial_floats();
    Rng rng(3);
    for (int i = 0; i < 500; ++i)
        xs.push_back(-200.0f + 400.0f * static_cast<float>(rng.uniform()));
    std::vector<float> out(xs.size());
    f.round_half_away_run(xs.data(), out.data(), xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        const float want = std::round(xs[i]);
        CHECK(out[i] == want);
        // sign of zero must survive too (bit-exactness contract)
        CHECK(std::signbit(out[i]) == std::signbit(want));
    }
}

TEST_CASE("scalar quantize: divide, round, clamp") {
    const auto& f = kernels::scalar_funcs();
    const float x[9] = {1.0f, 1.4f, -1.0f, -1.4f, 0.3f, -0.3f, 1.25f, -1.25f, 100.0f};
    int32_t out[9];
    f.quantize_run(x, out, 9, 0.5f, -8, 7);
    const int32_t want[9] = {2, 3, -2, -3, 1, -1, 3, -3, 7};
    for (int i = 0; i < 9; ++i) CHECK(out[i] == want[i]);
}

TEST_CASE("scalar gemm_f32 equals ascending-k accumulation bit for bit") {
    Rng rng(11);
    const size_t m = 5, k = 17, n = 9;
    std::vector<float> a = random_floats(rng, m * k, -3.0f, 3.0f);
    std::vector<float> b = random_floats(rng, k * n, -3.0f, 3.0f);
    std::vector<float> y(m * n);
    kernels::scalar_funcs().gemm_f32(a.data(), b.data(), y.data(), m, k, n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
            CHECK(y[i * n + j] == acc);
        }
}

TEST_CASE("avx2 kernels are bit-identical to scalar") {
    const auto* avx2 = kernels::avx2_funcs();
    if (!avx2) return;  // not available on this machine
    const auto& sc = kernels::scalar_funcs();
    Rng rng(17);

    SUBCASE("round and quantize, ties included") {
        std::vector<float> xs = adversarial_floats();
        for (int i = 0; i < 4096; ++i)
            xs.push_back(-300.0f + 600.0f * static_cast<float>(rng.uniform()));
        // exact .5 ties at many magnitudes
        for (int i = -2000; i < 2000; ++i) xs.push_back(static_cast<float>(i) + 0.5f);

        std::vector<float> r1(xs.size()), r2(xs.size());
        sc.round_half_away_run(xs.data(), r1.data(), xs.size());
        avx2->round_half_away_run(xs.data(), r2.data(), xs.size());
        CHECK(std::memcmp(r1.data(), r2.data(), xs.size() * sizeof(float)) == 0);

        std::vector<int32_t> q1(xs.size()), q2(xs.size());
        for (float scale : {0.5f, 1.0f, 0.037f, 3.0f}) {
            sc.quantize_run(xs.data(), q1.data(), xs.size(), scale, -128, 127);
            avx2->quantize_run(xs.data(), q2.data(), xs.size(), scale, -128, 127);
            CHECK(std::memcmp(q1.data(), q2.data(), xs.size() * sizeof(int32_t)) == 0);
        }
    }

    SUBCASE("per-channel quantize/dequantize") {
        const size_t rows = 13, cols = 37;
        std::vector<float> x = random_floats(rng, rows * cols, -50.0f, 50.0f);
        std::vector<float> scales = random_floats(rng, cols, 0.01f, 2.0f);
        std::vector<int32_t> q1(rows * cols), q2(rows * cols);
        sc.quantize_per_channel(x.data(), scales.data(), q1.data(), rows, cols, -128, 127);
        avx2->quantize_per_channel(x.data(), scales.data(), q2.data(), rows, cols, -128, 127);
        CHECK(std::memcmp(q1.data(), q2.data(), q1.size() * sizeof(int32_t)) == 0);

        std::vector<float> d1(rows * cols), d2(rows * cols);
        sc.dequantize_per_channel(q1.data(), scales.data(), d1.data(), rows, cols);
        avx2->dequantize_per_channel(q1.data(), scales.data(), d2.data(), rows, cols);
        CHECK(std::memcmp(d1.data(), d2.data(), d1.size() * sizeof(float)) == 0);

        std::vector<float> e1(rows * cols), e2(rows * cols);
        sc.dequantize_run(q1.data(), e1.data(), q1.size(), 0.125f);
        avx2->dequantize_run(q1.data(), e2.data(), q1.size(), 0.125f);
        CHECK(std::memcmp(e1.data(), e2.data(), e1.size() * sizeof(float)) == 0);
    }

    SUBCASE("max-abs reductions") {
        const size_t rows = 7, cols = 53;
        std::vector<float> x = random_floats(rng, rows * cols, -9.0f, 9.0f);
        CHECK(sc.max_abs_run(x.data(), x.size()) == avx2->max_abs_run(x.data(), x.size()));
        std::vector<float> m1(cols), m2(cols);
        sc.max_abs_columns(x.data(), rows, cols, m1.data());
        avx2->max_abs_columns(x.data(), rows, cols, m2.data());
        CHECK(std::memcmp(m1.data(), m2.data(), cols * sizeof(float)) == 0);
    }

    SUBCASE("gemms across awkward widths") {
        for (size_t n : {1u, 7u, 8u, 9u, 31u, 64u, 65u, 130u}) {
            const size_t m = 3, k = 19;
            std::vector<float> a = random_floats(rng, m * k, -2.0f, 2.0f);
            std::vector<float> b = random_floats(rng, k * n, -2.0f, 2.0f);
            std::vector<float> y1(m * n), y2(m * n);
            sc.gemm_f32(a.data(), b.data(), y1.data(), m, k, n);
            avx2->gemm_f32(a.data(), b.data(), y2.data(), m, k, n);
            CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);

            std::vector<int32_t> xi(m * k), wi(k * n);
            for (auto& v : xi) v = static_cast<int32_t>(rng.uniform_int(256)) - 128;
            for (auto& v : wi) v = static_cast<int32_t>(rng.uniform_int(255)) - 127;
            std::vector<float> sx = random_floats(rng, k, 0.01f, 1.0f);
            std::vector<float> g1(m * n), g2(m * n);
            sc.gemm_i32_scaled(xi.data(), sx.data(), wi.data(), g1.data(), m, k, n);
            avx2->gemm_i32_scaled(xi.data(), sx.data(), wi.data(), g2.data(), m, k, n);
            CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);

            std::vector<int64_t> i1(m * n), i2(m * n);
            sc.gemm_i32(xi.data(), wi.data(), i1.data(), m, k, n);
            avx2->gemm_i32(xi.data(), wi.data(), i2.data(), m, k, n);
            CHECK(std::memcmp(i1.data(), i2.data(), i1.size() * sizeof(int64_t)) == 0);
        }
    }

    SUBCASE("integer gemm is exact for 16-bit operands") {
        // 32767^2 products wrap an int32 accumulator after two terms; the
        // int64 accumulation must match an exact triple-loop oracle.
        const size_t m = 3, k = 37;
        for (size_t n : {1u, 8u, 9u, 20u}) {
            std::vector<int32_t> xi(m * k), wi(k * n);
            for (auto& v : xi) v = static_cast<int32_t>(rng.uniform_int(65535)) - 32767;
            for (auto& v : wi) v = static_cast<int32_t>(rng.uniform_int(65535)) - 32767;
            for (size_t i = 0; i < m; ++i) {  // pin the worst case: all +-max
                xi[i * k] = 32767;
                xi[i * k + 1] = -32767;
            }
            std::vector<int64_t> ref(m * n, 0);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j)
                    for (size_t kk = 0; kk < k; ++kk)
                        ref[i * n + j] +=
                            static_cast<int64_t>(xi[i * k + kk]) * wi[kk * n + j];
            std::vector<int64_t> g1(m * n), g2(m * n);
            sc.gemm_i32(xi.data(), wi.data(), g1.data(), m, k, n);
            avx2->gemm_i32(xi.data(), wi.data(), g2.data(), m, k, n);
            CHECK(std::memcmp(g1.data(), ref.data(), ref.size() * sizeof(int64_t)) == 0);
            CHECK(std::memcmp(g2.data(), ref.data(), ref.size() * sizeof(int64_t)) == 0);
        }
    }
}

TEST_CASE("threaded gemm wrappers do not change any bit") {
    Rng rng(23);
    const size_t m = 64, k = 48, n = 40;
    std::vector<float> a = random_floats(rng, m * k, -1.0f, 1.0f);
    std::vector<float> b = random_floats(rng, k * n, -1.0f, 1.0f);
    std::vector<float> y1(m * n), y4(m * n);

    set_threads(1);
    kernels::gemm_f32(a.data(), b.data(), y1.data(), m, k, n);
    set_threads(4);
    kernels::gemm_f32(a.data(), b.data(), y4.data(), m, k, n);
    set_threads(1);
    CHECK(std::memcmp(y1.data(), y4.data(), y1.size() * sizeof(float)) == 0);
}

TEST_CASE("isa selection") {
    CHECK(kernels::isa_name(kernels::Isa::scalar) == "scalar");
    CHECK(kernels::isa_name(kernels::Isa::avx2) == "avx2");
    const kernels::Isa prev = kernels::active();
    kernels::set_active(kernels::Isa::scalar);
    CHECK(kernels::active() == kernels::Isa::scalar);
    kernels::set_active(prev);
    if (!kernels::avx2_funcs())
        CHECK_THROWS_AS(kernels::set_active(kernels::Isa::avx2), ConfigError);
}
