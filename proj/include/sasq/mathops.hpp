#pragma once

// Scalar math shared by the autodiff forward pass and the tape-free
// inference path.  Keeping one definition guarantees the two paths produce
// bit-identical activations.

#include <cmath>
#include <cstdint>

namespace sasq::mathops {

inline constexpr float kGeluCoeff = 0.7978845608028654f;  // sqrt(2/pi)
inline constexpr float kGeluCubic = 0.044715f;

// tanh-approximated GELU.
inline float gelu(float x) {
    const float u = kGeluCoeff * (x + kGeluCubic * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
}

// d gelu / dx given x and t = tanh(u) saved from the forward pass.
inline float gelu_grad(float x, float t) {
    const float du = kGeluCoeff * (1.0f + 3.0f * kGeluCubic * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

// RMS-normalizes each row of x [rows x cols] with a per-column gain.
// Writes the per-row reciprocal RMS into inv_rms when non-null.
void rms_norm_rows(const float* x, const float* gain, float* out,
                   int64_t rows, int64_t cols, float eps, float* inv_rms);

// Causal row softmax over scores [rows x cols].  Query r sits at absolute
// position query_offset + r and may attend to keys j <= query_offset + r;
// masked entries come out as exact zeros.  Requires query_offset + rows ==
// cols so the last query sees every key.
void softmax_causal_rows(const float* scores, float* out,
                         int64_t rows, int64_t cols, int64_t query_offset);

// Row log-sum-exp and probabilities for cross entropy: returns lse for one
// row of width n and fills probs (softmax of the row) when non-null.
float row_lse_probs(const float* logits, int64_t n, float* probs);

}  // namespace sasq::mathops
