#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "sasq/calib.hpp"
#include "sasq/infer.hpp"
#include "sasq/rng.hpp"

using namespace sasq;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 48;
    cfg.max_seq_len = 32;
    return cfg;
}

std::vector<int32_t> corpus_tokens(int64_t n) {
    std::vector<int32_t> c(static_cast<size_t>(n));
    Rng rng(77);
    for (auto& v : c) v = 1 + static_cast<int32_t>(rng.uniform_int(63));
    return c;
}

Model quantized_model(uint64_t seed) {
    Model m(tiny_config());
    m.init_random(seed);
    const std::vector<int32_t> corpus = corpus_tokens(256);
    ScaleSet scales =
        calibrate(m, calibration_windows(corpus, m.config().max_seq_len, 4), QuantSpec{});
    quantize_weights(m, QuantSpec{});
    m.attach_scales(std::move(scales));
    return m;
}

}  // namespace

TEST_CASE("GenConfig validation") {
    GenConfig g;
    CHECK_NOTHROW(g.validate());
    g.max_new_tokens = 0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = GenConfig{};
    g.top_p = 0.0f;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = GenConfig{};
    g.top_p = 1.5f;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = GenConfig{};
    g.temperature = 0.0f;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.greedy = true;  // greedy never reads temperature
    CHECK_NOTHROW(g.validate());
    g = GenConfig{};
    g.eos_id = -1;
    CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("decode policy names and run modes") {
    for (DecodePolicy p : {DecodePolicy::phased, DecodePolicy::static_decode,
                           DecodePolicy::float_decode})
        CHECK(decode_policy_from_name(decode_policy_name(p)) == p);
    CHECK_THROWS_AS(decode_policy_from_name("warp-speed"), ConfigError);
    CHECK(decode_run_mode(DecodePolicy::phased) == RunMode::dynamic_per_token);
    CHECK(decode_run_mode(DecodePolicy::static_decode) == RunMode::int_static);
    CHECK(decode_run_mode(DecodePolicy::float_decode) == RunMode::floating);
}

TEST_CASE("nucleus_sample") {
    Rng rng(1);

    SUBCASE("top_p below the head keeps only the argmax") {
        const std::vector<float> probs = {0.6f, 0.3f, 0.1f};
        for (int i = 0; i < 50; ++i) CHECK(nucleus_sample(probs, 0.6f, rng) == 0);
    }
    SUBCASE("one-hot always returns the hot id") {
        const std::vector<float> probs = {0.0f, 1.0f, 0.0f};
        for (int i = 0; i < 20; ++i) CHECK(nucleus_sample(probs, 0.95f, rng) == 1);
    }
    SUBCASE("exact ties keep the smaller id first") {
        const std::vector<float> probs = {0.4f, 0.4f, 0.2f};
        for (int i = 0; i < 50; ++i) CHECK(nucleus_sample(probs, 0.4f, rng) == 0);
    }
    SUBCASE("top_p = 1 samples the full distribution") {
        const std::vector<float> probs = {0.5f, 0.3f, 0.2f};
        std::map<int32_t, int> counts;
        for (int i = 0; i < 3000; ++i) ++counts[nucleus_sample(probs, 1.0f, rng)];
        CHECK(counts[0] > counts[1]);
        CHECK(counts[1] > counts[2]);
        CHECK(counts[2] > 0);
        CHECK(counts[0] > 1200);  // ~1500 expected
        CHECK(counts[0] < 1800);
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS(nucleus_sample({}, 0.5f, rng), DataError);
        CHECK_THROWS_AS(nucleus_sample({0.5f, -0.5f, 1.0f}, 0.5f, rng), DomainError);
        CHECK_THROWS_AS(nucleus_sample({0.5f, 0.1f}, 0.5f, rng), DomainError);  // mass 0.6
        CHECK_THROWS_AS(nucleus_sample({0.5f, 0.5f}, 0.0f, rng), ConfigError);
    }
}

TEST_CASE("generate validates prompt and limits") {
    Model m = quantized_model(5);
    GenConfig g;
    g.max_new_tokens = 4;
    CHECK_THROWS_AS(generate(m, std::vector<int32_t>{}, g, DecodePolicy::phased), DataError);

    GenConfig big;
    big.max_new_tokens = 30;
    const std::vector<int32_t> prompt(4, 7);
    CHECK_THROWS_AS(generate(m, prompt, big, DecodePolicy::phased), ConfigError);

    GenConfig bad_eos;
    bad_eos.max_new_tokens = 4;
    bad_eos.eos_id = 64;
    CHECK_THROWS_AS(generate(m, prompt, bad_eos, DecodePolicy::phased), ConfigError);
}

TEST_CASE("all-zero model decodes straight to EOS under greedy") {
    Model m(tiny_config());  // zero weights -> uniform logits
    const std::vector<int32_t> corpus = corpus_tokens(32);
    ScaleSet scales = calibrate(m, {corpus}, QuantSpec{});
    quantize_weights(m, QuantSpec{});
    m.attach_scales(std::move(scales));

    GenConfig g;
    g.greedy = true;
    g.max_new_tokens = 8;
    const std::vector<int32_t> prompt = {5, 9, 13};
    const GenResult r = generate(m, prompt, g, DecodePolicy::phased);
    // argmax of a uniform row is index 0, which is the EOS byte
    REQUIRE(r.tokens.size() == 1);
    CHECK(r.tokens[0] == 0);
    CHECK(r.hit_eos);
    CHECK(r.prefill_tokens == 3);
}

TEST_CASE("greedy decode is deterministic and ignores sampling knobs") {
    Model m = quantized_model(9);
    const std::vector<int32_t> prompt = {3, 14, 15, 9};
    GenConfig a;
    a.greedy = true;
    a.max_new_tokens = 12;
    a.temperature = 0.001f;
    a.seed = 1;
    GenConfig b = a;
    b.temperature = 100.0f;
    b.seed = 999;
    const GenResult ra = generate(m, prompt, a, DecodePolicy::phased);
    const GenResult rb = generate(m, prompt, b, DecodePolicy::phased);
    CHECK(ra.tokens == rb.tokens);
    for (int32_t t : ra.tokens) {
        CHECK(t >= 0);
        CHECK(t < 64);
    }
    CHECK(ra.tokens.size() <= 12);
    CHECK(ra.hit_eos == (ra.tokens.back() == 0));
}

TEST_CASE("sampling is reproducible per seed") {
    Model m = quantized_model(11);
    const std::vector<int32_t> prompt = {8, 21, 34};
    GenConfig g;
    g.max_new_tokens = 16;
    g.temperature = 1.0f;
    g.top_p = 0.95f;
    g.seed = 42;
    const GenResult r1 = generate(m, prompt, g, DecodePolicy::phased);
    const GenResult r2 = generate(m, prompt, g, DecodePolicy::phased);
    CHECK(r1.tokens == r2.tokens);
    CHECK(r1.hit_eos == r2.hit_eos);

    GenConfig g2 = g;
    g2.seed = 43;
    const GenResult r3 = generate(m, prompt, g2, DecodePolicy::phased);
    // near-uniform 64-way distribution: 16 identical draws are implausible
    CHECK(r1.tokens != r3.tokens);
}

TEST_CASE("decode policies share the integer prefill") {
    Model m = quantized_model(13);
    const std::vector<int32_t> prompt = {4, 4, 8, 2};
    GenConfig g;
    g.greedy = true;
    g.max_new_tokens = 6;

    // capture the first linear input of the prefill under each policy
    std::map<std::string, FloatTensor> first;
    for (DecodePolicy p : {DecodePolicy::phased, DecodePolicy::static_decode,
                           DecodePolicy::float_decode}) {
        bool captured = false;
        FloatTensor x0;
        Model::Observer obs = [&](const std::string&, const FloatTensor& x) {
            if (!captured) {
                x0 = x;
                captured = true;
            }
        };
        generate(m, prompt, g, p, &obs);
        first[decode_policy_name(p)] = x0;
    }
    const FloatTensor& a = first["phased"];
    for (const auto& [name, x] : first) {
        REQUIRE(x.shape() == a.shape());
        CHECK(std::memcmp(x.data(), a.data(),
                          static_cast<size_t>(x.numel()) * sizeof(float)) == 0);
    }
}

TEST_CASE("single-row dynamic quantization equals per-tensor quantization") {
    Model m = quantized_model(17);
    const std::vector<int32_t> prompt = {10, 20, 30};
    GenConfig g;
    g.greedy = true;
    g.max_new_tokens = 8;

    // collect decode-step linear inputs (single rows) during phased decode
    std::vector<FloatTensor> rows;
    Model::Observer obs = [&](const std::string&, const FloatTensor& x) {
        if (x.rows() == 1) rows.push_back(x);
    };
    generate(m, prompt, g, DecodePolicy::phased, &obs);
    REQUIRE(!rows.empty());

    QuantSpec tok = m.act_spec();
    tok.granularity = Granularity::per_token;
    QuantSpec ten = m.act_spec();
    ten.granularity = Granularity::per_tensor;
    for (const FloatTensor& x : rows) {
        const ScaleVector st = derive_scale(x, tok);
        const ScaleVector sp = derive_scale(x, ten);
        REQUIRE(st.values.numel() == 1);
        CHECK(st.values[0] == sp.values[0]);  // bitwise
        const QuantizedTensor qt = quantize(x, st, tok);
        const QuantizedTensor qp = quantize(x, sp, ten);
        CHECK(std::memcmp(qt.ints.data(), qp.ints.data(),
                          static_cast<size_t>(qt.ints.numel()) * sizeof(int32_t)) == 0);
    }
}
