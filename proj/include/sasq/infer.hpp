#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sasq/model.hpp"
#include "sasq/rng.hpp"

namespace sasq {

struct GenConfig {
    int64_t max_new_tokens = 64;
    float temperature = 0.6f;
    float top_p = 0.95f;
    bool greedy = false;
    int32_t eos_id = 0;  // reserved byte id for the byte-level models
    uint64_t seed = 0;

    void validate() const;  // 0 < top_p <= 1; temperature > 0 when sampling
};

// Prefill always runs the static per-channel integer path; the policy picks
// the per-step decode mode.
enum class DecodePolicy { phased, static_decode, float_decode };

std::string decode_policy_name(DecodePolicy p);
DecodePolicy decode_policy_from_name(const std::string& name);
RunMode decode_run_mode(DecodePolicy p);

struct GenResult {
    std::vector<int32_t> tokens;  // generated ids, EOS included when hit
    bool hit_eos = false;
    int64_t prefill_tokens = 0;
};

// Autoregressive generation with KV cache: integer prefill over the prompt,
// then single-row decode steps in the policy's mode, stopping at EOS or
// max_new_tokens.  Greedy takes the first argmax index; sampling applies
// temperature then nucleus truncation, seeded.  The observer (if any) fires
// at every linear input of every phase.
GenResult generate(Model& model, std::span<const int32_t> prompt, const GenConfig& gen,
                   DecodePolicy policy, const Model::Observer* obs = nullptr);

// Keeps the smallest probability-sorted prefix with cumulative mass >=
// top_p (ties broken by id ascending), renormalizes, samples from it.
int32_t nucleus_sample(const std::vector<float>& probs, float top_p, Rng& rng);

}  // namespace sasq
