#pragma once

// Compute kernels behind the differentiable operators.
//
// dfu::kernels holds the optimized versions (im2col + BLAS, OpenMP over
// independent rows/planes). dfu::kernels::reference holds direct serial loops
// that are kept for testing and benchmarking; both must agree to round-off.
//
// Feature maps are [C, N, H, W]; "plane" = H*W, "cols" = N*H*W.

#include <cstddef>

#include "dfu/tensor.hpp"

namespace dfu::kernels {

// Precision of the GEMMs inside conv2d. f64 is the default and the only mode
// used for gradient checking; f32 halves the cost during training while all
// tensors and accumulators stay double. Thread-local.
enum class GemmPrecision { f64, f32 };
GemmPrecision gemm_precision();
void set_gemm_precision(GemmPrecision p);

class GemmPrecisionScope {
 public:
  explicit GemmPrecisionScope(GemmPrecision p) : saved_(gemm_precision()) { set_gemm_precision(p); }
  ~GemmPrecisionScope() { set_gemm_precision(saved_); }
  GemmPrecisionScope(const GemmPrecisionScope&) = delete;
  GemmPrecisionScope& operator=(const GemmPrecisionScope&) = delete;

 private:
  GemmPrecision saved_;
};

struct ConvDims {
  std::size_t cin, cout, batch, rows, cols, k;
  std::size_t pixels() const { return batch * rows * cols; }
};

// y = W (x) with circular padding; W is [cout, cin, k, k], cross-correlation form:
// y[o, n, i, j] = sum_{c,a,b} W[o,c,a,b] x[c, n, i+a-k/2, j+b-k/2].
void conv2d_forward(const double* x, const double* w, double* y, const ConvDims& d);
// Accumulates into dx and dw (either may be null).
void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     const ConvDims& d);

// y[o, p] = sum_c W[o, c] x[c, p] for p over `pixels`.
void channel_mix_forward(const double* x, const double* w, double* y, std::size_t cin, std::size_t cout,
                         std::size_t pixels);
void channel_mix_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                          std::size_t cin, std::size_t cout, std::size_t pixels);

struct SpectralDims {
  std::size_t cin, cout, batch, r;
  int cutoff;  // retained modes |m1| <= cutoff, 0 <= m2 <= cutoff
  std::size_t modes() const { return static_cast<std::size_t>((2 * cutoff + 1) * (cutoff + 1)); }
};

// Y[o, n, mode] = sum_c K[o, c, mode] X[c, n, mode] on retained modes; zero elsewhere.
// K is stored as interleaved (re, im) doubles, shape [cout, cin, modes, 2].
void spectral_mul_forward(const cplx* X, const double* K, cplx* Y, const SpectralDims& d);
void spectral_mul_backward(const cplx* X, const double* K, const cplx* dY, cplx* dX, double* dK,
                           const SpectralDims& d);

// Group normalization without affine part. mean/rstd have batch*groups entries.
void group_norm_forward(const double* x, double* y, double* mean, double* rstd, std::size_t channels,
                        std::size_t batch, std::size_t plane, std::size_t groups, double eps);
void group_norm_backward(const double* y, const double* rstd, const double* dy, double* dx,
                         std::size_t channels, std::size_t batch, std::size_t plane, std::size_t groups);

// Retained-mode enumeration shared by kernels and parameter layouts.
struct Mode {
  int m1, m2;
};
Mode mode_at(std::size_t index, int cutoff);

namespace reference {

void conv2d_forward(const double* x, const double* w, double* y, const ConvDims& d);
void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     const ConvDims& d);
void spectral_mul_forward(const cplx* X, const double* K, cplx* Y, const SpectralDims& d);
void group_norm_forward(const double* x, double* y, double* mean, double* rstd, std::size_t channels,
                        std::size_t batch, std::size_t plane, std::size_t groups, double eps);

}  // namespace reference

}  // namespace dfu::kernels
