#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace sasq::kernels {

// ---------------------------------------------------------------- dispatch

enum class Isa { scalar, avx2 };

std::string isa_name(Isa isa);
Isa best_supported();         // probed once at startup
Isa active();                 // currently selected implementation
void set_active(Isa isa);     // throws ConfigError if unsupported here

// Function table for one ISA.  All entries are hot inner loops; everything
// above them (tensors, autodiff, layers) goes through these.
//
// Contracts shared by every implementation of a given entry:
//   * round is round-half-away-from-zero, exactly std::round semantics
//   * quantize divides by the scale (never multiplies by a reciprocal)
//   * gemm_* overwrite y with the full product; each output element is a
//     plain ascending-k accumulation with no FMA and no reassociation, so
//     scalar and SIMD variants produce bit-identical outputs
struct Funcs {
    // out[i] = clamp(round(x[i] / scale), qmin, qmax)
    void (*quantize_run)(const float* x, int32_t* out, size_t n, float scale,
                         int32_t qmin, int32_t qmax);
    // out[r,c] = clamp(round(x[r,c] / scales[c]), qmin, qmax)
    void (*quantize_per_channel)(const float* x, const float* scales, int32_t* out,
                                 size_t rows, size_t cols, int32_t qmin, int32_t qmax);
    // out[i] = float(q[i]) * scale
    void (*dequantize_run)(const int32_t* q, float* out, size_t n, float scale);
    // out[r,c] = float(q[r,c]) * scales[c]
    void (*dequantize_per_channel)(const int32_t* q, const float* scales, float* out,
                                   size_t rows, size_t cols);
    // out[i] = round(x[i]), half away from zero
    void (*round_half_away_run)(const float* x, float* out, size_t n);
    // max_i |x[i]|, 0 for empty input
    float (*max_abs_run)(const float* x, size_t n);
    // out[c] = max_r |x[r,c]|
    void (*max_abs_columns)(const float* x, size_t rows, size_t cols, float* out);
    // y[m,n] = sum_k a[m,k] * b[k,n]
    void (*gemm_f32)(const float* a, const float* b, float* y,
                     size_t m, size_t k, size_t n);
    // y[m,n] = sum_k sx[k] * x[m,k] * w[k,n]   (float accumulation of
    // sx[k] * float(x*w); the int8*int8 product is exact in float)
    void (*gemm_i32_scaled)(const int32_t* x, const float* sx, const int32_t* w,
                            float* y, size_t m, size_t k, size_t n);
    // y[m,n] = sum_k x[m,k] * w[k,n], exact in int64.  int32 accumulation
    // would wrap for 16-bit operands (two 32767^2 products already exceed
    // 2^31); int64 is exact for any qmax <= 2^15 and K <= 2^30.
    void (*gemm_i32)(const int32_t* x, const int32_t* w, int64_t* y,
                     size_t m, size_t k, size_t n);
};

const Funcs& scalar_funcs();  // reference implementation, always available
const Funcs* avx2_funcs();    // nullptr when not compiled in / not supported
const Funcs& funcs();         // table for active()

// ------------------------------------------------- threaded entry points
//
// Thin wrappers over funcs() that split the row dimension across worker
// threads.  Splitting only ever happens on rows, so threading cannot change
// any output bit.

void gemm_f32(const float* a, const float* b, float* y, size_t m, size_t k, size_t n);
void gemm_i32_scaled(const int32_t* x, const float* sx, const int32_t* w, float* y,
                     size_t m, size_t k, size_t n);
void gemm_i32(const int32_t* x, const int32_t* w, int64_t* y, size_t m, size_t k, size_t n);

}  // namespace sasq::kernels
