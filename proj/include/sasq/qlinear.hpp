#pragma once

#include <optional>
#include <string>

#include "sasq/quant.hpp"

namespace sasq {

enum class WeightMode {
    floating,   // fresh float weights, integer path unavailable
    quantized,  // w_int/s_w/w_eff materialized once; weights frozen
    fp_frozen,  // FP-weights ablation: float weights kept, frozen
};

// Linear layer y = x·W (+ bias) with symmetric per-channel weight
// quantization and trainable per-channel activation scales.  W is [K x N]
// (inputs x rows), bias [N] float and never quantized.
struct QuantLinear {
    std::string name;
    int64_t in_features = 0;   // K
    int64_t out_features = 0;  // N

    FloatTensor w_float;              // master float weights
    std::optional<FloatTensor> bias;  // float, participates identically in all paths

    WeightMode mode = WeightMode::floating;
    IntTensor w_int;    // [K x N], each value in [-qmax, qmax]
    ScaleVector s_w;    // per output column, length N
    FloatTensor w_eff;  // weights seen by float-domain paths (dequantized or w_float)

    const ScaleVector* s_x = nullptr;  // per input channel, length K; owned by the ScaleSet
    QuantSpec spec;                    // activation quantizer (bits, ablation flags)

    void init(std::string layer_name, int64_t in_f, int64_t out_f);
    // Quantizes weights per-channel once (idempotent); further calls no-op.
    void quantize_weights(const QuantSpec& wspec);
    // FP-weights ablation: freeze float weights, leave integer path disabled.
    void freeze_fp_weights(const QuantSpec& wspec);

    const FloatTensor& effective_weights() const {
        return mode == WeightMode::floating ? w_float : w_eff;
    }
};

// Pure float reference: y = x·W_eff + bias.
FloatTensor forward_float(const FloatTensor& x, const QuantLinear& l);

// Static integer path (prefill): x quantized per-channel with l.s_x, then
// the fused form Y[m,n] = S_w[n] · Σ_k S_x[k]·X_int[m,k]·W_int[k,n],
// bias added last.
FloatTensor forward_int(const FloatTensor& x, const QuantLinear& l);

// Literal grouped-dequantization reference: the K dimension is partitioned into
// groups of `group_size` channels sharing one activation scale; per group
// int8×int8 products accumulate in int32, partials dequantize by
// S_{x_g}·S_w[n] and accumulate in float.  Scales must be constant within
// each group (per-channel == group_size 1).  Test oracle, scalar-only.
FloatTensor forward_int_grouped(const FloatTensor& x, const QuantLinear& l, int64_t group_size);

// Dynamic decode path: per-row scale derived at call time,
// Y[m,n] = S_x[m]·S_w[n]·Σ_k X_int[m,k]·W_int[k,n] with int32 accumulation.
// K ≤ 2^15 keeps |Σ| ≤ K·127·128 < 2^31.
FloatTensor forward_dynamic_per_token(const FloatTensor& x, const QuantLinear& l);

// Fake-quantized float path (training forward), tape-free.
FloatTensor forward_fake_eval(const FloatTensor& x, const QuantLinear& l);

// Tape variant: fake_quantize(v, s_x) then matmul against the frozen
// (fake-quantized) weights; gradients reach s_x via STE.
autodiff::Variable forward_fake(autodiff::Tape& tape, autodiff::Variable v,
                                const QuantLinear& l, autodiff::Variable s_x_var);

}  // namespace sasq
