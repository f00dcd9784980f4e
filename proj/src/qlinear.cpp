#include "sasq/qlinear.hpp"

#include <algorithm>
#include <vector>

#include "sasq/kernels.hpp"

namespace sasq {

namespace {

// Documented K envelope for the raw integer paths.  The kernel accumulates in
// int64, which is exact across the whole envelope at any supported bit width
// (|sum| <= 2^15 * (2^15)^2 = 2^45 << 2^63).
constexpr int64_t kMaxIntAccumK = int64_t{1} << 15;

void check_input(const char* op, const FloatTensor& x, const QuantLinear& l) {
    if (x.rank() != 2 || x.cols() != l.in_features)
        throw ShapeError(std::string(op) + " (" + l.name + "): input " + x.shape().str() +
                         " does not match in_features " + std::to_string(l.in_features));
}

void require_int_ready(const char* op, const QuantLinear& l) {
    if (l.mode != WeightMode::quantized)
        throw Error(std::string(op) + " (" + l.name + "): integer path requires quantized "
                    "weights (mode is " +
                    std::string(l.mode == WeightMode::fp_frozen ? "fp_frozen" : "floating") + ")");
    if (l.spec.no_round || l.spec.no_clamp)
        throw Error(std::string(op) + " (" + l.name + "): integer path requires real "
                    "quantization; ablation flags are set");
    if (l.w_int.empty())
        throw Error(std::string(op) + " (" + l.name + "): no integer weights materialized "
                    "(weights were frozen with an ablated quantizer)");
}

const ScaleVector& require_s_x(const char* op, const QuantLinear& l) {
    if (!l.s_x)
        throw Error(std::string(op) + " (" + l.name + "): no activation scales attached");
    if (l.s_x->granularity != Granularity::per_channel || l.s_x->values.numel() != l.in_features)
        throw ShapeError(std::string(op) + " (" + l.name + "): activation scales must be "
                         "per-channel of length " + std::to_string(l.in_features));
    return *l.s_x;
}

void add_bias(FloatTensor& y, const QuantLinear& l) {
    if (!l.bias) return;
    const FloatTensor& b = *l.bias;
    if (b.rank() != 1 || b.numel() != l.out_features)
        throw ShapeError("bias of " + l.name + " has shape " + b.shape().str());
    for (int64_t m = 0; m < y.rows(); ++m)
        for (int64_t n = 0; n < y.cols(); ++n) y.at(m, n) += b[n];
}

}  // namespace

void QuantLinear::init(std::string layer_name, int64_t in_f, int64_t out_f) {
    name = std::move(layer_name);
    in_features = in_f;
    out_features = out_f;
    w_float = FloatTensor(Shape{in_f, out_f});
    mode = WeightMode::floating;
    s_x = nullptr;
}

void QuantLinear::quantize_weights(const QuantSpec& wspec) {
    if (mode == WeightMode::quantized) return;  // idempotent
    if (mode == WeightMode::fp_frozen)
        throw Error("quantize_weights (" + name + "): weights already frozen as FP");
    if (wspec.no_round || wspec.no_clamp) {
        // Ablated quantizers never leave the float domain; the integer path
        // stays unavailable (forward_int refuses ablation flags).
        QuantSpec aspec = wspec;
        aspec.granularity = Granularity::per_channel;
        ScaleVector s = derive_scale(w_float, aspec);
        w_eff = fake_quantize_eval(w_float, s, aspec);
        s_w = std::move(s);
    } else {
        QuantizedTensor q = quantize_weights_per_channel(w_float, wspec);
        w_int = std::move(q.ints);
        s_w = std::move(q.scales);
        QuantizedTensor tmp;
        tmp.ints = w_int;
        tmp.scales = s_w;
        tmp.spec = q.spec;
        w_eff = dequantize(tmp);
    }
    spec.bits = wspec.bits;
    spec.scale_floor = wspec.scale_floor;
    mode = WeightMode::quantized;
}

void QuantLinear::freeze_fp_weights(const QuantSpec& wspec) {
    if (mode == WeightMode::fp_frozen) return;
    if (mode == WeightMode::quantized)
        throw Error("freeze_fp_weights (" + name + "): weights already quantized");
    w_eff = w_float;
    spec.bits = wspec.bits;
    spec.scale_floor = wspec.scale_floor;
    mode = WeightMode::fp_frozen;
}

FloatTensor forward_float(const FloatTensor& x, const QuantLinear& l) {
    check_input("forward_float", x, l);
    FloatTensor y = matmul(x, l.effective_weights());
    add_bias(y, l);
    return y;
}

FloatTensor forward_int(const FloatTensor& x, const QuantLinear& l) {
    check_input("forward_int", x, l);
    require_int_ready("forward_int", l);
    const ScaleVector& sx = require_s_x("forward_int", l);

    QuantSpec aspec = l.spec;
    aspec.granularity = Granularity::per_channel;
    QuantizedTensor xq = quantize(x, sx, aspec);

    const size_t m = static_cast<size_t>(x.rows());
    const size_t k = static_cast<size_t>(l.in_features);
    const size_t n = static_cast<size_t>(l.out_features);
    FloatTensor y(Shape{x.rows(), l.out_features});
    kernels::gemm_i32_scaled(xq.ints.data(), sx.values.data(), l.w_int.data(), y.data(), m, k, n);
    for (int64_t mm = 0; mm < y.rows(); ++mm)
        for (int64_t nn = 0; nn < y.cols(); ++nn) y.at(mm, nn) *= l.s_w.values[nn];
    add_bias(y, l);
    return y;
}

FloatTensor forward_int_grouped(const FloatTensor& x, const QuantLinear& l, int64_t group_size) {
    check_input("forward_int_grouped", x, l);
    require_int_ready("forward_int_grouped", l);
    const ScaleVector& sx = require_s_x("forward_int_grouped", l);
    const int64_t K = l.in_features;
    if (group_size < 1 || K % group_size != 0)
        throw ShapeError("forward_int_grouped: group size " + std::to_string(group_size) +
                         " does not divide K=" + std::to_string(K));
    if (group_size > kMaxIntAccumK)
        throw Error("forward_int_grouped: group size exceeds the integer accumulation bound");
    // The grouped form attaches one scale per group; verify the per-channel scales are
    // group-constant before reading them as group scales.
    for (int64_t g = 0; g < K / group_size; ++g)
        for (int64_t j = 1; j < group_size; ++j)
            if (sx.values[g * group_size + j] != sx.values[g * group_size])
                throw Error("forward_int_grouped: activation scales differ within group " +
                            std::to_string(g));

    QuantSpec aspec = l.spec;
    aspec.granularity = Granularity::per_channel;
    QuantizedTensor xq = quantize(x, sx, aspec);

    const int64_t M = x.rows(), N = l.out_features, groups = K / group_size;
    FloatTensor y(Shape{M, N});
    for (int64_t m = 0; m < M; ++m) {
        for (int64_t n = 0; n < N; ++n) {
            float acc = 0.0f;
            for (int64_t g = 0; g < groups; ++g) {
                int64_t part = 0;
                for (int64_t j = 0; j < group_size; ++j) {
                    const int64_t kk = g * group_size + j;
                    part += static_cast<int64_t>(xq.ints.at(m, kk)) * l.w_int.at(kk, n);
                }
                acc += sx.values[g * group_size] * l.s_w.values[n] * static_cast<float>(part);
            }
            y.at(m, n) = acc;
        }
    }
    add_bias(y, l);
    return y;
}

FloatTensor forward_dynamic_per_token(const FloatTensor& x, const QuantLinear& l) {
    check_input("forward_dynamic_per_token", x, l);
    require_int_ready("forward_dynamic_per_token", l);
    if (l.in_features > kMaxIntAccumK)
        throw Error("forward_dynamic_per_token: K=" + std::to_string(l.in_features) +
                    " exceeds the integer accumulation bound 2^15");

    QuantSpec tspec = l.spec;
    tspec.granularity = Granularity::per_token;
    const ScaleVector sx = derive_scale(x, tspec);
    QuantizedTensor xq = quantize(x, sx, tspec);

    const size_t m = static_cast<size_t>(x.rows());
    const size_t k = static_cast<size_t>(l.in_features);
    const size_t n = static_cast<size_t>(l.out_features);
    std::vector<int64_t> acc(m * n);
    kernels::gemm_i32(xq.ints.data(), l.w_int.data(), acc.data(), m, k, n);
    FloatTensor y(Shape{x.rows(), l.out_features});
    for (int64_t mm = 0; mm < y.rows(); ++mm)
        for (int64_t nn = 0; nn < y.cols(); ++nn)
            y.at(mm, nn) = sx.values[mm] * l.s_w.values[nn] *
                           static_cast<float>(acc[static_cast<size_t>(mm) * n +
                                                  static_cast<size_t>(nn)]);
    add_bias(y, l);
    return y;
}

FloatTensor forward_fake_eval(const FloatTensor& x, const QuantLinear& l) {
    check_input("forward_fake_eval", x, l);
    if (l.mode == WeightMode::floating)
        throw Error("forward_fake_eval (" + l.name + "): weights not yet frozen");
    const ScaleVector& sx = require_s_x("forward_fake_eval", l);
    QuantSpec aspec = l.spec;
    aspec.granularity = Granularity::per_channel;
    FloatTensor xf = fake_quantize_eval(x, sx, aspec);
    FloatTensor y = matmul(xf, l.w_eff);
    add_bias(y, l);
    return y;
}

autodiff::Variable forward_fake(autodiff::Tape& tape, autodiff::Variable v,
                                const QuantLinear& l, autodiff::Variable s_x_var) {
    check_input("forward_fake", v.value(), l);
    if (l.mode == WeightMode::floating)
        throw Error("forward_fake (" + l.name + "): weights not yet frozen");
    QuantSpec aspec = l.spec;
    aspec.granularity = Granularity::per_channel;
    autodiff::Variable xf = fake_quantize(tape, v, s_x_var, aspec);
    autodiff::Variable w = tape.leaf(l.w_eff, /*requires_grad=*/false);
    autodiff::Variable y = tape.matmul(xf, w);
    if (l.bias) {
        autodiff::Variable b = tape.leaf(*l.bias, /*requires_grad=*/false);
        y = tape.add_row_broadcast(y, b);
    }
    return y;
}

}  // namespace sasq
