#include "sasq/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "sasq/error.hpp"
#include "sasq/threading.hpp"

namespace sasq::kernels {

// ----------------------------------------------------------------- scalar
//
// Reference kernels.  Deliberately plain loops: these define the exact
// per-element operation sequence the SIMD variants must reproduce.

namespace scalar_impl {

void quantize_run(const float* x, int32_t* out, size_t n, float scale,
                  int32_t qmin, int32_t qmax) {
    const float lo = static_cast<float>(qmin);
    const float hi = static_cast<float>(qmax);
    for (size_t i = 0; i < n; ++i) {
        float r = std::round(x[i] / scale);
        if (r < lo) r = lo;
        if (r > hi) r = hi;
        out[i] = static_cast<int32_t>(r);
    }
}

void quantize_per_channel(const float* x, const float* scales, int32_t* out,
                          size_t rows, size_t cols, int32_t qmin, int32_t qmax) {
    const float lo = static_cast<float>(qmin);
    const float hi = static_cast<float>(qmax);
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        int32_t* or_ = out + r * cols;
        for (size_t c = 0; c < cols; ++c) {
            float v = std::round(xr[c] / scales[c]);
            if (v < lo) v = lo;
            if (v > hi) v = hi;
            or_[c] = static_cast<int32_t>(v);
        }
    }
}

void dequantize_run(const int32_t* q, float* out, size_t n, float scale) {
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(q[i]) * scale;
}

void dequantize_per_channel(const int32_t* q, const float* scales, float* out,
                            size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) {
        const int32_t* qr = q + r * cols;
        float* or_ = out + r * cols;
        for (size_t c = 0; c < cols; ++c) or_[c] = static_cast<float>(qr[c]) * scales[c];
    }
}

void round_half_away_run(const float* x, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = std::round(x[i]);
}

float max_abs_run(const float* x, size_t n) {
    float m = 0.0f;
    for (size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
    return m;
}

void max_abs_columns(const float* x, size_t rows, size_t cols, float* out) {
    for (size_t c = 0; c < cols; ++c) out[c] = 0.0f;
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        for (size_t c = 0; c < cols; ++c) out[c] = std::max(out[c], std::fabs(xr[c]));
    }
}

void gemm_f32(const float* a, const float* b, float* y, size_t m, size_t k, size_t n) {
    // Each y[i,j] is sum over ascending k of fl(fl(a*b) + acc); compiled with
    // -ffp-contract=off so no FMA sneaks in.
    for (size_t i = 0; i < m; ++i) {
        float* yr = y + i * n;
        for (size_t j = 0; j < n; ++j) yr[j] = 0.0f;
        for (size_t kk = 0; kk < k; ++kk) {
            const float av = a[i * k + kk];
            const float* br = b + kk * n;
            for (size_t j = 0; j < n; ++j) yr[j] += av * br[j];
        }
    }
}

void gemm_i32_scaled(const int32_t* x, const float* sx, const int32_t* w, float* y,
                     size_t m, size_t k, size_t n) {
    // Per element: p = x*w exactly in int32 (and exactly representable in
    // float for 8-bit operands), term = fl(sx * p), acc = fl(acc + term).
    for (size_t i = 0; i < m; ++i) {
        float* yr = y + i * n;
        for (size_t j = 0; j < n; ++j) yr[j] = 0.0f;
        for (size_t kk = 0; kk < k; ++kk) {
            const int32_t xv = x[i * k + kk];
            const float sv = sx[kk];
            const int32_t* wr = w + kk * n;
            for (size_t j = 0; j < n; ++j)
                yr[j] += sv * static_cast<float>(xv * wr[j]);
        }
    }
}

void gemm_i32(const int32_t* x, const int32_t* w, int64_t* y, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        int64_t* yr = y + i * n;
        for (size_t j = 0; j < n; ++j) yr[j] = 0;
        for (size_t kk = 0; kk < k; ++kk) {
            const int64_t xv = x[i * k + kk];
            const int32_t* wr = w + kk * n;
            for (size_t j = 0; j < n; ++j) yr[j] += xv * wr[j];
        }
    }
}

}  // namespace scalar_impl

const Funcs& scalar_funcs() {
    static const Funcs table = {
        scalar_impl::quantize_run,
        scalar_impl::quantize_per_channel,
        scalar_impl::dequantize_run,
        scalar_impl::dequantize_per_channel,
        scalar_impl::round_half_away_run,
        scalar_impl::max_abs_run,
        scalar_impl::max_abs_columns,
        scalar_impl::gemm_f32,
        scalar_impl::gemm_i32_scaled,
        scalar_impl::gemm_i32,
    };
    return table;
}

// --------------------------------------------------------------- dispatch

#ifdef SASQ_HAVE_AVX2_TU
namespace detail {
const Funcs* avx2_table();  // defined in kernels_avx2.cpp
}
#endif

const Funcs* avx2_funcs() {
#ifdef SASQ_HAVE_AVX2_TU
    if (__builtin_cpu_supports("avx2")) return detail::avx2_table();
#endif
    return nullptr;
}

Isa best_supported() { return avx2_funcs() ? Isa::avx2 : Isa::scalar; }

namespace {
Isa& active_ref() {
    static Isa isa = best_supported();
    return isa;
}
}  // namespace

Isa active() { return active_ref(); }

void set_active(Isa isa) {
    if (isa == Isa::avx2 && avx2_funcs() == nullptr)
        throw ConfigError("kernel isa 'avx2' is not supported on this machine");
    active_ref() = isa;
}

std::string isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const Funcs& funcs() {
    if (active() == Isa::avx2) {
        const Funcs* t = avx2_funcs();
        if (t) return *t;
    }
    return scalar_funcs();
}

// ------------------------------------------------- threaded entry points

namespace {
size_t gemm_grain(size_t k, size_t n) {
    // Aim for >= ~0.5 MFLOP per chunk so spawn cost stays negligible.
    const size_t per_row = std::max<size_t>(1, k * n);
    return std::max<size_t>(1, (size_t{1} << 18) / per_row);
}
}  // namespace

void gemm_f32(const float* a, const float* b, float* y, size_t m, size_t k, size_t n) {
    const Funcs& f = funcs();
    parallel_for_rows(m, gemm_grain(k, n), [&](size_t r0, size_t r1) {
        f.gemm_f32(a + r0 * k, b, y + r0 * n, r1 - r0, k, n);
    });
}

void gemm_i32_scaled(const int32_t* x, const float* sx, const int32_t* w, float* y,
                     size_t m, size_t k, size_t n) {
    const Funcs& f = funcs();
    parallel_for_rows(m, gemm_grain(k, n), [&](size_t r0, size_t r1) {
        f.gemm_i32_scaled(x + r0 * k, sx, w, y + r0 * n, r1 - r0, k, n);
    });
}

void gemm_i32(const int32_t* x, const int32_t* w, int64_t* y, size_t m, size_t k, size_t n) {
    const Funcs& f = funcs();
    parallel_for_rows(m, gemm_grain(k, n), [&](size_t r0, size_t r1) {
        f.gemm_i32(x + r0 * k, w, y + r0 * n, r1 - r0, k, n);
    });
}

}  // namespace sasq::kernels
