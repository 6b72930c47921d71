#pragma once

// Batched 2D real transforms on square planes, backed by FFTW.
//
// Conventions: the forward transform divides by r*r so that coefficients
// approximate the continuous Fourier coefficients of the sampled function and
// stay comparable across resolutions. The inverse is the plain sum. Half
// spectra have r rows and r/2+1 columns; row k holds signed frequency
// signed_freq(k, r).

#include <cstddef>
#include <span>

#include "dfu/tensor.hpp"

namespace dfu::fft {

constexpr std::size_t half_cols(std::size_t r) { return r / 2 + 1; }

// Row index k in [0, r) to signed frequency in [-r/2, (r-1)/2].
constexpr int signed_freq(std::size_t k, std::size_t r) {
  return 2 * k < r ? static_cast<int>(k) : static_cast<int>(k) - static_cast<int>(r);
}

constexpr std::size_t row_of(int f, std::size_t r) {
  return f >= 0 ? static_cast<std::size_t>(f) : static_cast<std::size_t>(static_cast<int>(r) + f);
}

// Weight of a half-spectrum column in the real inverse: boundary columns
// (0, and r/2 for even r) count once, interior columns twice.
constexpr double column_weight(std::size_t col, std::size_t r) {
  return (col == 0 || (r % 2 == 0 && col == r / 2)) ? 1.0 : 2.0;
}

void rfft2(std::span<const double> in, std::span<cplx> out, std::size_t r, std::size_t planes);

// x_n = sum over the half spectrum of w_k Re(X_k exp(i theta_kn)). Boundary
// columns are projected onto their Hermitian part first, so any input is valid.
void irfft2(std::span<const cplx> in, std::span<double> out, std::size_t r, std::size_t planes);

// Exact adjoints of the two maps above (treating C as R^2), accumulated into the output.
void rfft2_adjoint_acc(std::span<const cplx> grad_out, std::span<double> grad_in, std::size_t r,
                       std::size_t planes);
void irfft2_adjoint_acc(std::span<const double> grad_out, std::span<cplx> grad_in, std::size_t r,
                        std::size_t planes);

// Band-limited resampling in coefficient space: zero-pads (r_out > r_in) or
// truncates (r_out < r_in) each half spectrum. Nyquist content of an even
// source is split symmetrically when padding; the target Nyquist is dropped
// when truncating.
void resize_half(std::span<const cplx> in, std::size_t r_in, std::span<cplx> out, std::size_t r_out,
                 std::size_t planes);
void resize_half_adjoint_acc(std::span<const cplx> grad_out, std::size_t r_out, std::span<cplx> grad_in,
                             std::size_t r_in, std::size_t planes);

// Convenience wrappers on [.., r, r] real tensors.
CTensor rfft2(const Tensor& x);
Tensor irfft2(const CTensor& X, std::size_t r);

}  // namespace dfu::fft
