#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sasq/model.hpp"

namespace sasq {

// Hyper-parameters for scale training (AdamW over the activation ScaleSet
// only; weights stay frozen).
struct TrainConfig {
    float learning_rate = 2e-4f;
    int64_t epochs = 6;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_epsilon = 1e-8f;
    float weight_decay = 0.0f;  // decaying a scale toward 0 is counterproductive
    int64_t batch_windows = 4;  // windows averaged per optimizer step
    uint64_t seed = 0;
    int64_t eval_every = 0;     // steps between eval callbacks; 0 = never

    void validate() const;  // lr >= 0 (0 = identity), epochs >= 0 (0 = no-op)
};

struct StepRecord {
    int64_t step = 0;  // 1-based optimizer step
    double loss = 0.0; // batch mean NLL (nats)
    double ppl = 0.0;  // exp(loss)
};

using StepCallback = std::function<void(const StepRecord&)>;
using EvalCallback = std::function<void(int64_t step)>;

// AdamW with decoupled weight decay.  All slots share one step counter;
// updates are elementwise in float with double bias-correction factors, so
// a fixed call order gives bit-identical trajectories.
class AdamW {
public:
    AdamW(float lr, float beta1, float beta2, float eps, float weight_decay);

    int64_t add_slot(int64_t size);  // zero moments; returns slot index
    void begin_step() { ++t_; }
    void update(int64_t slot, FloatTensor& param, const FloatTensor& grad);
    int64_t step_count() const { return t_; }

private:
    float lr_, b1_, b2_, eps_, wd_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct TrainResult {
    std::vector<StepRecord> history;    // one record per optimizer step
    uint64_t digest_before = 0;         // weight digest going in
    uint64_t digest_after = 0;          // must equal digest_before
};

// QAT loop: shuffled non-overlapping max_seq_len windows, fake-quant
// forward, STE backward, AdamW on the attached ScaleSet only, then each
// scale projected to >= scale_floor.  Weights are digest-checked unchanged.
// Throws NumericError (with the step index) on a non-finite loss.
TrainResult train_scales(Model& model, const std::vector<int32_t>& corpus,
                         const TrainConfig& cfg, const StepCallback& on_step = nullptr,
                         const EvalCallback& on_eval = nullptr);

struct EvalResult {
    double mean_nll = 0.0;
    double ppl = 0.0;
    int64_t windows = 0;
    int64_t positions = 0;  // next-token positions scored
};

// Perplexity over non-overlapping max_seq_len windows: exp of the mean
// next-token NLL across every position of every window (a trailing short
// window still counts if it has >= 2 tokens).  Deterministic.
EvalResult evaluate_ppl(Model& model, const std::vector<int32_t>& corpus, RunMode mode);

// Substrate training: AdamW over all float parameters so the quantization
// experiments run on a model that has actually fit the corpus.
struct PretrainConfig {
    float learning_rate = 1e-3f;
    int64_t steps = 600;
    int64_t window = 0;  // tokens per sampled window; 0 = max_seq_len
    uint64_t seed = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_epsilon = 1e-8f;
    float weight_decay = 0.0f;
    float clip_norm = 1.0f;  // global grad-norm clip; 0 disables

    void validate() const;
};

std::vector<StepRecord> pretrain_weights(Model& model, const std::vector<int32_t>& corpus,
                                         const PretrainConfig& cfg,
                                         const StepCallback& on_step = nullptr);

// FNV-1a (64-bit) over parameter names and raw float bytes in
// for_each_param order, plus each linear's frozen w_eff/w_int buffers.
uint64_t weight_digest(const Model& model);

}  // namespace sasq
