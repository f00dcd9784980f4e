// AVX2 kernel variants.  This translation unit is the only one compiled with
// -mavx2; it is registered at runtime only when the CPU reports AVX2.
//
// Every kernel reproduces the scalar reference bit-for-bit:
//   * identical per-element operation sequence (see kernels.cpp),
//   * no FMA (explicit mul + add intrinsics),
//   * rounding ties handled below exactly like std::round.

#include "sasq/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace sasq::kernels {
namespace avx2_impl {

namespace {

// Round half away from zero, matching std::round lane by lane.
// _mm256_round_ps rounds ties to even, so ties need a nudge: at a tie,
// v - round_even(v) equals copysign(0.5, v) *exactly* (the subtraction is
// exact by Sterbenz, and above 2^23 floats are integral so no ties exist).
// Blend rather than add so non-tie lanes keep their bit pattern (-0.0 stays
// -0.0, as with std::round).
inline __m256 round_half_away(__m256 v) {
    const __m256 r_even = _mm256_round_ps(v, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    const __m256 sign = _mm256_and_ps(v, _mm256_set1_ps(-0.0f));
    const __m256 half_signed = _mm256_or_ps(_mm256_set1_ps(0.5f), sign);
    const __m256 one_signed = _mm256_or_ps(_mm256_set1_ps(1.0f), sign);
    const __m256 tie = _mm256_cmp_ps(_mm256_sub_ps(v, r_even), half_signed, _CMP_EQ_OQ);
    return _mm256_blendv_ps(r_even, _mm256_add_ps(r_even, one_signed), tie);
}

inline __m256 abs_ps(__m256 v) {
    return _mm256_andnot_ps(_mm256_set1_ps(-0.0f), v);
}

inline void quantize_8(const float* x, int32_t* out, float scale, __m256 lov, __m256 hiv) {
    const __m256 v = _mm256_div_ps(_mm256_loadu_ps(x), _mm256_set1_ps(scale));
    const __m256 r = _mm256_min_ps(_mm256_max_ps(round_half_away(v), lov), hiv);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out), _mm256_cvtps_epi32(r));
}

inline int32_t quantize_one(float x, float scale, float lo, float hi) {
    float r = std::round(x / scale);
    if (r < lo) r = lo;
    if (r > hi) r = hi;
    return static_cast<int32_t>(r);
}

}  // namespace

void quantize_run(const float* x, int32_t* out, size_t n, float scale,
                  int32_t qmin, int32_t qmax) {
    const float lo = static_cast<float>(qmin);
    const float hi = static_cast<float>(qmax);
    const __m256 lov = _mm256_set1_ps(lo);
    const __m256 hiv = _mm256_set1_ps(hi);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) quantize_8(x + i, out + i, scale, lov, hiv);
    for (; i < n; ++i) out[i] = quantize_one(x[i], scale, lo, hi);
}

void quantize_per_channel(const float* x, const float* scales, int32_t* out,
                          size_t rows, size_t cols, int32_t qmin, int32_t qmax) {
    const float lo = static_cast<float>(qmin);
    const float hi = static_cast<float>(qmax);
    const __m256 lov = _mm256_set1_ps(lo);
    const __m256 hiv = _mm256_set1_ps(hi);
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        int32_t* or_ = out + r * cols;
        size_t c = 0;
        for (; c + 8 <= cols; c += 8) {
            const __m256 v = _mm256_div_ps(_mm256_loadu_ps(xr + c), _mm256_loadu_ps(scales + c));
            const __m256 q = _mm256_min_ps(_mm256_max_ps(round_half_away(v), lov), hiv);
            _mm256_storeu_si256(reinterpret_cast<__m256i*>(or_ + c), _mm256_cvtps_epi32(q));
        }
        for (; c < cols; ++c) or_[c] = quantize_one(xr[c], scales[c], lo, hi);
    }
}

void dequantize_run(const int32_t* q, float* out, size_t n, float scale) {
    const __m256 sv = _mm256_set1_ps(scale);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256i qi = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(q + i));
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_cvtepi32_ps(qi), sv));
    }
    for (; i < n; ++i) out[i] = static_cast<float>(q[i]) * scale;
}

void dequantize_per_channel(const int32_t* q, const float* scales, float* out,
                            size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) {
        const int32_t* qr = q + r * cols;
        float* or_ = out + r * cols;
        size_t c = 0;
        for (; c + 8 <= cols; c += 8) {
            const __m256i qi = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(qr + c));
            _mm256_storeu_ps(or_ + c, _mm256_mul_ps(_mm256_cvtepi32_ps(qi), _mm256_loadu_ps(scales + c)));
        }
        for (; c < cols; ++c) or_[c] = static_cast<float>(qr[c]) * scales[c];
    }
}

void round_half_away_run(const float* x, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, round_half_away(_mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = std::round(x[i]);
}

float max_abs_run(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, abs_ps(_mm256_loadu_ps(x + i)));
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, acc);
    float m = 0.0f;
    for (float v : lanes) m = std::max(m, v);
    for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
    return m;
}

void max_abs_columns(const float* x, size_t rows, size_t cols, float* out) {
    size_t c = 0;
    for (; c + 8 <= cols; c += 8) {
        __m256 acc = _mm256_setzero_ps();
        for (size_t r = 0; r < rows; ++r)
            acc = _mm256_max_ps(acc, abs_ps(_mm256_loadu_ps(x + r * cols + c)));
        _mm256_storeu_ps(out + c, acc);
    }
    for (; c < cols; ++c) {
        float m = 0.0f;
        for (size_t r = 0; r < rows; ++r) m = std::max(m, std::fabs(x[r * cols + c]));
        out[c] = m;
    }
}

void gemm_f32(const float* a, const float* b, float* y, size_t m, size_t k, size_t n) {
    // 64-wide j blocks keep 8 independent accumulator chains in flight; the
    // per-element operation sequence (ascending k, separate mul and add) is
    // identical to the scalar reference regardless of block width.
    const size_t nb = n & ~size_t{63};
    const size_t n8 = n & ~size_t{7};
    for (size_t i = 0; i < m; ++i) {
        const float* ar = a + i * k;
        float* yr = y + i * n;
        size_t j = 0;
        for (; j < nb; j += 64) {
            __m256 acc[8];
            for (auto& r : acc) r = _mm256_setzero_ps();
            for (size_t kk = 0; kk < k; ++kk) {
                const __m256 av = _mm256_set1_ps(ar[kk]);
                const float* br = b + kk * n + j;
                acc[0] = _mm256_add_ps(acc[0], _mm256_mul_ps(av, _mm256_loadu_ps(br)));
                acc[1] = _mm256_add_ps(acc[1], _mm256_mul_ps(av, _mm256_loadu_ps(br + 8)));
                acc[2] = _mm256_add_ps(acc[2], _mm256_mul_ps(av, _mm256_loadu_ps(br + 16)));
                acc[3] = _mm256_add_ps(acc[3], _mm256_mul_ps(av, _mm256_loadu_ps(br + 24)));
                acc[4] = _mm256_add_ps(acc[4], _mm256_mul_ps(av, _mm256_loadu_ps(br + 32)));
                acc[5] = _mm256_add_ps(acc[5], _mm256_mul_ps(av, _mm256_loadu_ps(br + 40)));
                acc[6] = _mm256_add_ps(acc[6], _mm256_mul_ps(av, _mm256_loadu_ps(br + 48)));
                acc[7] = _mm256_add_ps(acc[7], _mm256_mul_ps(av, _mm256_loadu_ps(br + 56)));
            }
            for (size_t t = 0; t < 8; ++t) _mm256_storeu_ps(yr + j + t * 8, acc[t]);
        }
        for (; j < n8; j += 8) {
            __m256 acc = _mm256_setzero_ps();
            for (size_t kk = 0; kk < k; ++kk)
                acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_set1_ps(ar[kk]),
                                                       _mm256_loadu_ps(b + kk * n + j)));
            _mm256_storeu_ps(yr + j, acc);
        }
        for (; j < n; ++j) {
            float acc = 0.0f;
            for (size_t kk = 0; kk < k; ++kk) acc += ar[kk] * b[kk * n + j];
            yr[j] = acc;
        }
    }
}

void gemm_i32_scaled(const int32_t* x, const float* sx, const int32_t* w, float* y,
                     size_t m, size_t k, size_t n) {
    const size_t nb = n & ~size_t{31};
    const size_t n8 = n & ~size_t{7};
    for (size_t i = 0; i < m; ++i) {
        const int32_t* xr = x + i * k;
        float* yr = y + i * n;
        size_t j = 0;
        for (; j < nb; j += 32) {
            __m256 acc0 = _mm256_setzero_ps();
            __m256 acc1 = _mm256_setzero_ps();
            __m256 acc2 = _mm256_setzero_ps();
            __m256 acc3 = _mm256_setzero_ps();
            for (size_t kk = 0; kk < k; ++kk) {
                const __m256i xv = _mm256_set1_epi32(xr[kk]);
                const __m256 sv = _mm256_set1_ps(sx[kk]);
                const int32_t* wr = w + kk * n + j;
                auto fold = [&](__m256 acc, const int32_t* p) {
                    const __m256i prod = _mm256_mullo_epi32(
                        xv, _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p)));
                    return _mm256_add_ps(acc, _mm256_mul_ps(sv, _mm256_cvtepi32_ps(prod)));
                };
                acc0 = fold(acc0, wr);
                acc1 = fold(acc1, wr + 8);
                acc2 = fold(acc2, wr + 16);
                acc3 = fold(acc3, wr + 24);
            }
            _mm256_storeu_ps(yr + j, acc0);
            _mm256_storeu_ps(yr + j + 8, acc1);
            _mm256_storeu_ps(yr + j + 16, acc2);
            _mm256_storeu_ps(yr + j + 24, acc3);
        }
        for (; j < n8; j += 8) {
            __m256 acc = _mm256_setzero_ps();
            for (size_t kk = 0; kk < k; ++kk) {
                const __m256i prod = _mm256_mullo_epi32(
                    _mm256_set1_epi32(xr[kk]),
                    _mm256_loadu_si256(reinterpret_cast<const __m256i*>(w + kk * n + j)));
                acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_set1_ps(sx[kk]),
                                                       _mm256_cvtepi32_ps(prod)));
            }
            _mm256_storeu_ps(yr + j, acc);
        }
        for (; j < n; ++j) {
            float acc = 0.0f;
            for (size_t kk = 0; kk < k; ++kk)
                acc += sx[kk] * static_cast<float>(xr[kk] * w[kk * n + j]);
            yr[j] = acc;
        }
    }
}

void gemm_i32(const int32_t* x, const int32_t* w, int64_t* y, size_t m, size_t k, size_t n) {
    // mul_epi32 multiplies the low 32 bits of each 64-bit lane, so one 8-wide
    // load of w feeds two int64 accumulators: even columns directly, odd
    // columns after a 32-bit lane shift.  All arithmetic is exact.
    const size_t n8 = n & ~size_t{7};
    for (size_t i = 0; i < m; ++i) {
        const int32_t* xr = x + i * k;
        int64_t* yr = y + i * n;
        size_t j = 0;
        for (; j < n8; j += 8) {
            __m256i acc_even = _mm256_setzero_si256();  // j, j+2, j+4, j+6
            __m256i acc_odd = _mm256_setzero_si256();   // j+1, j+3, j+5, j+7
            for (size_t kk = 0; kk < k; ++kk) {
                const __m256i xv = _mm256_set1_epi32(xr[kk]);
                const __m256i wv =
                    _mm256_loadu_si256(reinterpret_cast<const __m256i*>(w + kk * n + j));
                acc_even = _mm256_add_epi64(acc_even, _mm256_mul_epi32(xv, wv));
                acc_odd = _mm256_add_epi64(acc_odd,
                                           _mm256_mul_epi32(xv, _mm256_srli_epi64(wv, 32)));
            }
            const __m256i lo = _mm256_unpacklo_epi64(acc_even, acc_odd);  // j,j+1 | j+4,j+5
            const __m256i hi = _mm256_unpackhi_epi64(acc_even, acc_odd);  // j+2,j+3 | j+6,j+7
            _mm256_storeu_si256(reinterpret_cast<__m256i*>(yr + j),
                                _mm256_permute2x128_si256(lo, hi, 0x20));
            _mm256_storeu_si256(reinterpret_cast<__m256i*>(yr + j + 4),
                                _mm256_permute2x128_si256(lo, hi, 0x31));
        }
        for (; j < n; ++j) {
            int64_t acc = 0;
            for (size_t kk = 0; kk < k; ++kk)
                acc += static_cast<int64_t>(xr[kk]) * w[kk * n + j];
            yr[j] = acc;
        }
    }
}

}  // namespace avx2_impl

namespace detail {

const Funcs* avx2_table() {
    static const Funcs table = {
        avx2_impl::quantize_run,
        avx2_impl::quantize_per_channel,
        avx2_impl::dequantize_run,
        avx2_impl::dequantize_per_channel,
        avx2_impl::round_half_away_run,
        avx2_impl::max_abs_run,
        avx2_impl::max_abs_columns,
        avx2_impl::gemm_f32,
        avx2_impl::gemm_i32_scaled,
        avx2_impl::gemm_i32,
    };
    return &table;
}

}  // namespace detail
}  // namespace sasq::kernels

#endif  // __AVX2__
