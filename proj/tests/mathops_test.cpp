#include <doctest.h>

#include <cmath>

#include "sasq/mathops.hpp"
#include "sasq/tensor.hpp"

using namespace sasq;

TEST_CASE("gelu values against an independent evaluation") {
    // reference: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))) in double
    auto ref = [](double x) {
        const double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
    };
    for (float x : {-3.0f, -1.0f, -0.1f, 0.0f, 0.5f, 1.0f, 2.5f})
        CHECK(mathops::gelu(x) == doctest::Approx(ref(x)).epsilon(1e-6));
    CHECK(mathops::gelu(0.0f) == 0.0f);
    CHECK(mathops::gelu(1.0f) == doctest::Approx(0.841192).epsilon(1e-5));
}

TEST_CASE("gelu_grad matches central differences") {
    const float h = 1e-3f;
    for (float x : {-2.0f, -0.7f, 0.0f, 0.3f, 1.8f}) {
        const float u = mathops::kGeluCoeff * (x + mathops::kGeluCubic * x * x * x);
        const float got = mathops::gelu_grad(x, std::tanh(u));
        const float fd = (mathops::gelu(x + h) - mathops::gelu(x - h)) / (2.0f * h);
        CHECK(got == doctest::Approx(fd).epsilon(2e-3));
    }
}

TEST_CASE("rms_norm_rows hand case") {
    // row [3, 4]: ms = 12.5, rms = sqrt(12.5 + eps); gains [2, 0.5]
    const float x[4] = {3.0f, 4.0f, 0.0f, -2.0f};
    const float gain[2] = {2.0f, 0.5f};
    float out[4];
    float inv_rms[2];
    mathops::rms_norm_rows(x, gain, out, 2, 2, 0.0f, inv_rms);
    const float rr0 = 1.0f / std::sqrt(12.5f);
    CHECK(out[0] == doctest::Approx(3.0f * rr0 * 2.0f).epsilon(1e-6));
    CHECK(out[1] == doctest::Approx(4.0f * rr0 * 0.5f).epsilon(1e-6));
    CHECK(inv_rms[0] == doctest::Approx(rr0).epsilon(1e-6));
    const float rr1 = 1.0f / std::sqrt(2.0f);
    CHECK(out[2] == 0.0f);
    CHECK(out[3] == doctest::Approx(-2.0f * rr1 * 0.5f).epsilon(1e-6));
}

TEST_CASE("rms_norm epsilon keeps zero rows finite") {
    const float x[2] = {0.0f, 0.0f};
    const float gain[2] = {1.0f, 1.0f};
    float out[2];
    mathops::rms_norm_rows(x, gain, out, 1, 2, 1e-5f, nullptr);
    CHECK(out[0] == 0.0f);
    CHECK(std::isfinite(out[0]));
}

TEST_CASE("softmax_causal_rows masks strictly-future keys to exact zero") {
    // 3 queries at offset 0 over 3 keys
    const float s[9] = {0, 5, 9, 1, 1, 7, 2, 0, -1};
    float p[9];
    mathops::softmax_causal_rows(s, p, 3, 3, 0);
    CHECK(p[0] == 1.0f);  // row 0 sees only key 0
    CHECK(p[1] == 0.0f);
    CHECK(p[2] == 0.0f);
    CHECK(p[3] == 0.5f);  // row 1: equal scores over two keys
    CHECK(p[4] == 0.5f);
    CHECK(p[5] == 0.0f);
    const double r2 = static_cast<double>(p[6]) + p[7] + p[8];
    CHECK(r2 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p[6] > p[7]);
    CHECK(p[7] > p[8]);
}

TEST_CASE("softmax_causal_rows query_offset shifts the visible prefix") {
    // single query at absolute position 2 over 3 keys: sees everything
    const float s[3] = {1, 1, 1};
    float p[3];
    mathops::softmax_causal_rows(s, p, 1, 3, 2);
    CHECK(p[0] == doctest::Approx(1.0 / 3).epsilon(1e-6));
    // offset + rows must equal cols
    CHECK_THROWS_AS(mathops::softmax_causal_rows(s, p, 1, 3, 1), ShapeError);
}

TEST_CASE("row_lse_probs equals log-sum-exp and normalized probabilities") {
    const float row[3] = {0.0f, std::log(2.0f), std::log(5.0f)};
    float probs[3];
    const float lse = mathops::row_lse_probs(row, 3, probs);
    CHECK(lse == doctest::Approx(std::log(8.0)).epsilon(1e-6));
    CHECK(probs[0] == doctest::Approx(0.125).epsilon(1e-6));
    CHECK(probs[1] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(probs[2] == doctest::Approx(0.625).epsilon(1e-6));
}
