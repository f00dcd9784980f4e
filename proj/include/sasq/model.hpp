#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sasq/qlinear.hpp"

namespace sasq {

struct ModelConfig {
    int64_t vocab_size = 256;  // byte-level
    int64_t d_model = 128;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t d_ff = 512;
    int64_t max_seq_len = 256;
    float norm_epsilon = 1e-5f;
    bool quantize_head = false;

    int64_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

// How QuantLinear inputs are treated during a forward pass.  Softmax,
// normalization, embeddings and residuals stay float in every mode.
enum class RunMode { floating, fake_quant, int_static, dynamic_per_token };

std::string run_mode_name(RunMode m);

struct KvCache {
    int64_t len = 0;                 // shared across layers
    std::vector<FloatTensor> k, v;   // per layer [max_seq_len x d_model]
    void reset() { len = 0; }
};

struct Block {
    FloatTensor norm1_gain, norm2_gain;  // [D]
    QuantLinear wq, wk, wv, wo;          // [D x D]
    QuantLinear up, down;                // [D x F], [F x D]
};

// Pre-norm decoder-only transformer: RMS norm, multi-head causal attention,
// 2-layer GELU FFN, learned absolute positional embeddings.  Six quantized
// linears per block (Q,K,V,O,up,down); embeddings and LM head stay float
// unless quantize_head is set.
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    void init_random(uint64_t seed);  // normal(0, 0.02) weights, unit gains

    // ---- parameters (float master copies) ----
    FloatTensor embed;            // [V x D]
    FloatTensor pos;              // [L x D]
    std::vector<Block> blocks;
    FloatTensor final_norm_gain;  // [D]
    QuantLinear head;             // [D x V]

    ScaleSet scales;  // activation scales keyed by linear path name

    // Fixed-order traversal of float parameters (weights + gains), the
    // order checkpoints and digests use.
    void for_each_param(const std::function<void(const std::string&, FloatTensor&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const FloatTensor&)>& fn) const;
    // Linears subject to quantization, forward order.
    void for_each_linear(const std::function<void(QuantLinear&)>& fn);
    std::vector<std::string> linear_names() const;

    // Activation quantizer shared by all linears (bits, ablation flags).
    void set_act_spec(const QuantSpec& spec);
    const QuantSpec& act_spec() const { return act_spec_; }

    // Installs a ScaleSet (names must cover exactly the quantized linears)
    // and points each layer's s_x at its entry.
    void attach_scales(ScaleSet set);
    bool has_scales() const { return !scales.empty(); }

    bool weights_quantized() const;

    KvCache make_cache() const;

    // Called with (layer path, float input) at every QuantLinear input, in
    // execution order, whatever the mode.
    using Observer = std::function<void(const std::string&, const FloatTensor&)>;

    // Runs the decoder over `tokens` (the not-yet-cached suffix when cache
    // is given) and returns logits [T x vocab].
    FloatTensor forward_logits(std::span<const int32_t> tokens, RunMode mode,
                               KvCache* cache = nullptr, const Observer* obs = nullptr);

    // ---- tape forward (training) ----
    enum class TrainTarget { scales, weights };

    struct Bindings {
        TrainTarget target = TrainTarget::scales;
        RunMode mode = RunMode::fake_quant;
        // trainable leaves in update order: scale entries or weight params
        std::vector<std::pair<std::string, autodiff::Variable>> trainables;
        std::map<std::string, autodiff::Variable> leaves;  // every bound leaf by name
    };

    // Creates the tape leaves once per optimizer step; windows in the same
    // batch share them (scales train jointly, fan-in grads accumulate).
    Bindings bind(autodiff::Tape& tape, TrainTarget target);

    // Mean next-token NLL of one window under the bindings' mode.
    autodiff::Variable window_loss(autodiff::Tape& tape, const Bindings& b,
                                   std::span<const int32_t> inputs,
                                   std::span<const int32_t> targets);

private:
    FloatTensor linear_out(const QuantLinear& l, const FloatTensor& x, RunMode mode,
                           const Observer* obs) const;

    ModelConfig cfg_;
    QuantSpec act_spec_;
};

// Mean negative log-likelihood (nats) and ppl = exp(mean-nll) of logits
// [T x V] against one target id per row.
std::pair<double, double> cross_entropy_ppl(const FloatTensor& logits,
                                            std::span<const int32_t> targets);

}  // namespace sasq
