#include "sasq/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sasq/mathops.hpp"

namespace sasq {

void GenConfig::validate() const {
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (!(top_p > 0.0f && top_p <= 1.0f)) throw ConfigError("top_p must lie in (0, 1]");
    if (!greedy && !(temperature > 0.0f))
        throw ConfigError("temperature must be positive when sampling");
    if (eos_id < 0) throw ConfigError("eos_id must be >= 0");
}

std::string decode_policy_name(DecodePolicy p) {
    switch (p) {
        case DecodePolicy::phased: return "phased";
        case DecodePolicy::static_decode: return "static-decode";
        case DecodePolicy::float_decode: return "float-decode";
    }
    return "?";
}

DecodePolicy decode_policy_from_name(const std::string& name) {
    if (name == "phased") return DecodePolicy::phased;
    if (name == "static-decode") return DecodePolicy::static_decode;
    if (name == "float-decode") return DecodePolicy::float_decode;
    throw ConfigError("unknown decode policy '" + name + "'");
}

RunMode decode_run_mode(DecodePolicy p) {
    switch (p) {
        case DecodePolicy::phased: return RunMode::dynamic_per_token;
        case DecodePolicy::static_decode: return RunMode::int_static;
        case DecodePolicy::float_decode: return RunMode::floating;
    }
    throw ConfigError("bad decode policy");
}

int32_t nucleus_sample(const std::vector<float>& probs, float top_p, Rng& rng) {
    if (probs.empty()) throw DataError("nucleus_sample: empty distribution");
    if (!(top_p > 0.0f && top_p <= 1.0f)) throw ConfigError("top_p must lie in (0, 1]");
    double mass = 0.0;
    for (float p : probs) {
        if (!(p >= 0.0f)) throw DomainError("nucleus_sample: negative or NaN probability");
        mass += static_cast<double>(p);
    }
    if (std::abs(mass - 1.0) > 1e-3)
        throw DomainError("nucleus_sample: probabilities sum to " + std::to_string(mass));

    std::vector<int32_t> ids(probs.size());
    std::iota(ids.begin(), ids.end(), 0);
    // stable + initial id order = ties broken by ascending id
    std::stable_sort(ids.begin(), ids.end(), [&](int32_t a, int32_t b) {
        return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    });

    size_t keep = 0;
    double kept_mass = 0.0;
    while (keep < ids.size()) {
        kept_mass += static_cast<double>(probs[static_cast<size_t>(ids[keep])]);
        ++keep;
        if (kept_mass >= static_cast<double>(top_p)) break;
    }

    const double u = rng.uniform() * kept_mass;  // renormalized draw
    double acc = 0.0;
    for (size_t i = 0; i < keep; ++i) {
        acc += static_cast<double>(probs[static_cast<size_t>(ids[i])]);
        if (u < acc) return ids[i];
    }
    return ids[keep - 1];
}

namespace {

int32_t pick_token(const FloatTensor& logits, const GenConfig& gen, Rng& rng) {
    const int64_t V = logits.cols();
    const int64_t last = logits.rows() - 1;
    const float* row = logits.data() + last * V;

    if (gen.greedy) {
        int64_t best = 0;
        for (int64_t i = 1; i < V; ++i)
            if (row[i] > row[best]) best = i;  // first index wins ties
        return static_cast<int32_t>(best);
    }

    std::vector<float> scaled(static_cast<size_t>(V));
    const float inv_t = 1.0f / gen.temperature;
    for (int64_t i = 0; i < V; ++i) scaled[static_cast<size_t>(i)] = row[i] * inv_t;
    std::vector<float> probs(static_cast<size_t>(V));
    mathops::row_lse_probs(scaled.data(), V, probs.data());
    return nucleus_sample(probs, gen.top_p, rng);
}

}  // namespace

GenResult generate(Model& model, std::span<const int32_t> prompt, const GenConfig& gen,
                   DecodePolicy policy, const Model::Observer* obs) {
    gen.validate();
    if (prompt.empty()) throw DataError("generate: empty prompt");
    const int64_t L = model.config().max_seq_len;
    if (static_cast<int64_t>(prompt.size()) + gen.max_new_tokens > L)
        throw ConfigError("generate: prompt (" + std::to_string(prompt.size()) +
                          ") + max_new_tokens (" + std::to_string(gen.max_new_tokens) +
                          ") overflows max_seq_len " + std::to_string(L));
    if (gen.eos_id >= model.config().vocab_size)
        throw ConfigError("generate: eos_id outside vocab");

    const RunMode dmode = decode_run_mode(policy);
    Rng rng(gen.seed);
    GenResult r;
    r.prefill_tokens = static_cast<int64_t>(prompt.size());

    KvCache cache = model.make_cache();
    FloatTensor logits = model.forward_logits(prompt, RunMode::int_static, &cache, obs);

    while (true) {
        const int32_t next = pick_token(logits, gen, rng);
        r.tokens.push_back(next);
        if (next == gen.eos_id) {
            r.hit_eos = true;
            break;
        }
        if (static_cast<int64_t>(r.tokens.size()) >= gen.max_new_tokens) break;
        if (cache.len + 1 > L) break;  // nothing left to attend from
        logits = model.forward_logits(std::span<const int32_t>(&next, 1), dmode, &cache, obs);
    }
    return r;
}

}  // namespace sasq
