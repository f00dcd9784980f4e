#include "sasq/mathops.hpp"

#include <algorithm>

#include "sasq/error.hpp"

namespace sasq::mathops {

void rms_norm_rows(const float* x, const float* gain, float* out,
                   int64_t rows, int64_t cols, float eps, float* inv_rms) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        double ms = 0.0;
        for (int64_t c = 0; c < cols; ++c) ms += static_cast<double>(xr[c]) * xr[c];
        ms /= static_cast<double>(cols);
        const float rr = static_cast<float>(1.0 / std::sqrt(ms + static_cast<double>(eps)));
        if (inv_rms) inv_rms[r] = rr;
        float* or_ = out + r * cols;
        for (int64_t c = 0; c < cols; ++c) or_[c] = xr[c] * rr * gain[c];
    }
}

void softmax_causal_rows(const float* scores, float* out,
                         int64_t rows, int64_t cols, int64_t query_offset) {
    if (query_offset < 0 || query_offset + rows != cols)
        throw ShapeError("softmax_causal_rows: query_offset " + std::to_string(query_offset) +
                         " does not line up " + std::to_string(rows) + " queries with " +
                         std::to_string(cols) + " keys");
    for (int64_t r = 0; r < rows; ++r) {
        const float* sr = scores + r * cols;
        float* or_ = out + r * cols;
        const int64_t allowed = query_offset + r + 1;  // keys [0, allowed)
        float m = sr[0];
        for (int64_t j = 1; j < allowed; ++j) m = std::max(m, sr[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < allowed; ++j) {
            const float e = std::exp(sr[j] - m);
            or_[j] = e;
            denom += e;
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int64_t j = 0; j < allowed; ++j) or_[j] *= inv;
        for (int64_t j = allowed; j < cols; ++j) or_[j] = 0.0f;
    }
}

float row_lse_probs(const float* logits, int64_t n, float* probs) {
    float m = logits[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, logits[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(logits[j] - m));
    if (probs) {
        const float inv = static_cast<float>(1.0 / sum);
        for (int64_t j = 0; j < n; ++j)
            probs[j] = std::exp(logits[j] - m) * inv;
    }
    return m + static_cast<float>(std::log(sum));
}

}  // namespace sasq::mathops
