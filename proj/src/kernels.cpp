#include "dfu/kernels.hpp"

#include <cblas.h>
#include <omp.h>

#include <cmath>
#include <cstring>
#include <type_traits>
#include <vector>

namespace dfu::kernels {
namespace {

constexpr std::size_t kParallelThreshold = 1 << 14;

thread_local GemmPrecision t_precision = GemmPrecision::f64;

template <class T, int Slot = 0>
std::vector<T>& scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

template <class T>
void to_float(const double* src, T* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(src[i]);
}

std::size_t wrap(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

// cols[(c*k + a)*k + b, n, i, j] = x[c, n, i+a-p, j+b-p] (circular).
template <class T>
void im2col(const double* x, T* cols, const ConvDims& d) {
  const std::size_t k = d.k, H = d.rows, W = d.cols, P = d.pixels();
  const auto p = static_cast<std::ptrdiff_t>(k / 2);
#pragma omp parallel for collapse(2) if (d.cin * k * k * P > kParallelThreshold && !omp_in_parallel())
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t ab = 0; ab < k * k; ++ab) {
      const std::size_t a = ab / k, b = ab % k;
      const std::size_t shift = wrap(static_cast<std::ptrdiff_t>(b) - p, W);
      T* dst = cols + (c * k * k + ab) * P;
      for (std::size_t n = 0; n < d.batch; ++n) {
        const double* plane = x + (c * d.batch + n) * H * W;
        for (std::size_t i = 0; i < H; ++i) {
          const double* srow = plane + wrap(static_cast<std::ptrdiff_t>(i + a) - p, H) * W;
          T* drow = dst + (n * H + i) * W;
          if constexpr (std::is_same_v<T, double>) {
            std::memcpy(drow, srow + shift, (W - shift) * sizeof(double));
            std::memcpy(drow + (W - shift), srow, shift * sizeof(double));
          } else {
            to_float(srow + shift, drow, W - shift);
            to_float(srow, drow + (W - shift), shift);
          }
        }
      }
    }
  }
}

// Adjoint of im2col, accumulated into dx.
template <class T>
void col2im_acc(const T* cols, double* dx, const ConvDims& d) {
  const std::size_t k = d.k, H = d.rows, W = d.cols, P = d.pixels();
  const auto p = static_cast<std::ptrdiff_t>(k / 2);
#pragma omp parallel for if (d.cin * k * k * P > kParallelThreshold && !omp_in_parallel())
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t ab = 0; ab < k * k; ++ab) {
      const std::size_t a = ab / k, b = ab % k;
      const std::size_t shift = wrap(static_cast<std::ptrdiff_t>(b) - p, W);
      const T* src = cols + (c * k * k + ab) * P;
      for (std::size_t n = 0; n < d.batch; ++n) {
        double* plane = dx + (c * d.batch + n) * H * W;
        for (std::size_t i = 0; i < H; ++i) {
          double* drow = plane + wrap(static_cast<std::ptrdiff_t>(i + a) - p, H) * W;
          const T* srow = src + (n * H + i) * W;
          for (std::size_t j = 0; j < W - shift; ++j) drow[j + shift] += srow[j];
          for (std::size_t j = W - shift; j < W; ++j) drow[j + shift - W] += srow[j];
        }
      }
    }
  }
}

int I(std::size_t v) { return static_cast<int>(v); }

void conv2d_forward_f32(const double* x, const double* w, double* y, const ConvDims& d) {
  const std::size_t P = d.pixels(), K = d.cin * d.k * d.k;
  auto& cols = scratch<float, 0>(K * P);
  auto& wf = scratch<float, 1>(d.cout * K);
  auto& yf = scratch<float, 2>(d.cout * P);
  im2col(x, cols.data(), d);
  to_float(w, wf.data(), d.cout * K);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, I(d.cout), I(P), I(K), 1.0f, wf.data(), I(K), cols.data(),
              I(P), 0.0f, yf.data(), I(P));
  for (std::size_t i = 0; i < d.cout * P; ++i) y[i] = yf[i];
}

void conv2d_backward_f32(const double* x, const double* w, const double* dy, double* dx, double* dw,
                         const ConvDims& d) {
  const std::size_t P = d.pixels(), K = d.cin * d.k * d.k;
  auto& cols = scratch<float, 0>(K * P);
  auto& wf = scratch<float, 1>(d.cout * K);
  auto& dyf = scratch<float, 2>(d.cout * P);
  to_float(dy, dyf.data(), d.cout * P);
  if (dw) {
    auto& dwf = scratch<float, 3>(d.cout * K);
    im2col(x, cols.data(), d);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, I(d.cout), I(K), I(P), 1.0f, dyf.data(), I(P), cols.data(),
                I(P), 0.0f, dwf.data(), I(K));
    for (std::size_t i = 0; i < d.cout * K; ++i) dw[i] += dwf[i];
  }
  if (dx) {
    to_float(w, wf.data(), d.cout * K);
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, I(K), I(P), I(d.cout), 1.0f, wf.data(), I(K), dyf.data(),
                I(P), 0.0f, cols.data(), I(P));
    col2im_acc(cols.data(), dx, d);
  }
}

}  // namespace

GemmPrecision gemm_precision() { return t_precision; }
void set_gemm_precision(GemmPrecision p) { t_precision = p; }

void conv2d_forward(const double* x, const double* w, double* y, const ConvDims& d) {
  const std::size_t P = d.pixels();
  if (d.k == 1) {
    channel_mix_forward(x, w, y, d.cin, d.cout, P);
    return;
  }
  if (t_precision == GemmPrecision::f32) {
    conv2d_forward_f32(x, w, y, d);
    return;
  }
  const std::size_t K = d.cin * d.k * d.k;
  auto& cols = scratch<double>(K * P);
  im2col(x, cols.data(), d);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, I(d.cout), I(P), I(K), 1.0, w, I(K), cols.data(), I(P),
              0.0, y, I(P));
}

void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     const ConvDims& d) {
  const std::size_t P = d.pixels();
  if (d.k == 1) {
    channel_mix_backward(x, w, dy, dx, dw, d.cin, d.cout, P);
    return;
  }
  if (t_precision == GemmPrecision::f32) {
    conv2d_backward_f32(x, w, dy, dx, dw, d);
    return;
  }
  const std::size_t K = d.cin * d.k * d.k;
  auto& cols = scratch<double>(K * P);
  if (dw) {
    im2col(x, cols.data(), d);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, I(d.cout), I(K), I(P), 1.0, dy, I(P), cols.data(), I(P),
                1.0, dw, I(K));
  }
  if (dx) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, I(K), I(P), I(d.cout), 1.0, w, I(K), dy, I(P), 0.0,
                cols.data(), I(P));
    col2im_acc(cols.data(), dx, d);
  }
}

void channel_mix_forward(const double* x, const double* w, double* y, std::size_t cin, std::size_t cout,
                         std::size_t pixels) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, I(cout), I(pixels), I(cin), 1.0, w, I(cin), x, I(pixels),
              0.0, y, I(pixels));
}

void channel_mix_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                          std::size_t cin, std::size_t cout, std::size_t pixels) {
  if (dw)
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, I(cout), I(cin), I(pixels), 1.0, dy, I(pixels), x,
                I(pixels), 1.0, dw, I(cin));
  if (dx)
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, I(cin), I(pixels), I(cout), 1.0, w, I(cin), dy, I(pixels),
                1.0, dx, I(pixels));
}

Mode mode_at(std::size_t index, int cutoff) {
  const auto w = static_cast<std::size_t>(cutoff + 1);
  return {static_cast<int>(index / w) - cutoff, static_cast<int>(index % w)};
}

namespace {

std::size_t spec_index(std::size_t c, std::size_t n, const Mode& m, const SpectralDims& d) {
  const std::size_t h = d.r / 2 + 1;
  const std::size_t row = m.m1 >= 0 ? static_cast<std::size_t>(m.m1) : d.r - static_cast<std::size_t>(-m.m1);
  return ((c * d.batch + n) * d.r + row) * h + static_cast<std::size_t>(m.m2);
}

}  // namespace

void spectral_mul_forward(const cplx* X, const double* K, cplx* Y, const SpectralDims& d) {
  const std::size_t h = d.r / 2 + 1, nm = d.modes();
  std::fill(Y, Y + d.cout * d.batch * d.r * h, cplx{});
  const auto* Kc = reinterpret_cast<const cplx*>(K);
#pragma omp parallel for if (d.cout * d.cin * d.batch * nm > kParallelThreshold && !omp_in_parallel())
  for (std::size_t o = 0; o < d.cout; ++o) {
    for (std::size_t q = 0; q < nm; ++q) {
      const Mode m = mode_at(q, d.cutoff);
      for (std::size_t n = 0; n < d.batch; ++n) {
        cplx acc{};
        for (std::size_t c = 0; c < d.cin; ++c) acc += Kc[(o * d.cin + c) * nm + q] * X[spec_index(c, n, m, d)];
        Y[spec_index(o, n, m, d)] = acc;
      }
    }
  }
}

void spectral_mul_backward(const cplx* X, const double* K, const cplx* dY, cplx* dX, double* dK,
                           const SpectralDims& d) {
  const std::size_t nm = d.modes();
  const auto* Kc = reinterpret_cast<const cplx*>(K);
  if (dK) {
    auto* dKc = reinterpret_cast<cplx*>(dK);
#pragma omp parallel for if (d.cout * d.cin * d.batch * nm > kParallelThreshold && !omp_in_parallel())
    for (std::size_t o = 0; o < d.cout; ++o)
      for (std::size_t c = 0; c < d.cin; ++c)
        for (std::size_t q = 0; q < nm; ++q) {
          const Mode m = mode_at(q, d.cutoff);
          cplx acc{};
          for (std::size_t n = 0; n < d.batch; ++n) acc += dY[spec_index(o, n, m, d)] * std::conj(X[spec_index(c, n, m, d)]);
          dKc[(o * d.cin + c) * nm + q] += acc;
        }
  }
  if (dX) {
#pragma omp parallel for if (d.cout * d.cin * d.batch * nm > kParallelThreshold && !omp_in_parallel())
    for (std::size_t c = 0; c < d.cin; ++c)
      for (std::size_t q = 0; q < nm; ++q) {
        const Mode m = mode_at(q, d.cutoff);
        for (std::size_t n = 0; n < d.batch; ++n) {
          cplx acc{};
          for (std::size_t o = 0; o < d.cout; ++o)
            acc += std::conj(Kc[(o * d.cin + c) * nm + q]) * dY[spec_index(o, n, m, d)];
          dX[spec_index(c, n, m, d)] += acc;
        }
      }
  }
}

void group_norm_forward(const double* x, double* y, double* mean, double* rstd, std::size_t channels,
                        std::size_t batch, std::size_t plane, std::size_t groups, double eps) {
  const std::size_t cg = channels / groups;
  const double count = static_cast<double>(cg * plane);
#pragma omp parallel for collapse(2) if (channels * batch * plane > kParallelThreshold && !omp_in_parallel())
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      double s = 0.0;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double* p = x + (c * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / count;
      double v = 0.0;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double* p = x + (c * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double rs = 1.0 / std::sqrt(v / count + eps);
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double* p = x + (c * batch + n) * plane;
        double* q = y + (c * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * rs;
      }
      mean[n * groups + g] = mu;
      rstd[n * groups + g] = rs;
    }
  }
}

void group_norm_backward(const double* y, const double* rstd, const double* dy, double* dx,
                         std::size_t channels, std::size_t batch, std::size_t plane, std::size_t groups) {
  const std::size_t cg = channels / groups;
  const double count = static_cast<double>(cg * plane);
#pragma omp parallel for collapse(2) if (channels * batch * plane > kParallelThreshold && !omp_in_parallel())
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      double sdy = 0.0, sdyy = 0.0;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        const std::size_t off = (c * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sdy += dy[off + i];
          sdyy += dy[off + i] * y[off + i];
        }
      }
      const double mdy = sdy / count, mdyy = sdyy / count, rs = rstd[n * groups + g];
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        const std::size_t off = (c * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) dx[off + i] += rs * (dy[off + i] - mdy - y[off + i] * mdyy);
      }
    }
  }
}

namespace reference {

void conv2d_forward(const double* x, const double* w, double* y, const ConvDims& d) {
  const auto p = static_cast<std::ptrdiff_t>(d.k / 2);
  const std::size_t H = d.rows, W = d.cols;
  for (std::size_t o = 0; o < d.cout; ++o)
    for (std::size_t n = 0; n < d.batch; ++n)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d.cin; ++c)
            for (std::size_t a = 0; a < d.k; ++a)
              for (std::size_t b = 0; b < d.k; ++b) {
                const std::size_t si = wrap(static_cast<std::ptrdiff_t>(i + a) - p, H);
                const std::size_t sj = wrap(static_cast<std::ptrdiff_t>(j + b) - p, W);
                acc += w[((o * d.cin + c) * d.k + a) * d.k + b] * x[((c * d.batch + n) * H + si) * W + sj];
              }
          y[((o * d.batch + n) * H + i) * W + j] = acc;
        }
}

void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     const ConvDims& d) {
  const auto p = static_cast<std::ptrdiff_t>(d.k / 2);
  const std::size_t H = d.rows, W = d.cols;
  for (std::size_t o = 0; o < d.cout; ++o)
    for (std::size_t n = 0; n < d.batch; ++n)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double g = dy[((o * d.batch + n) * H + i) * W + j];
          for (std::size_t c = 0; c < d.cin; ++c)
            for (std::size_t a = 0; a < d.k; ++a)
              for (std::size_t b = 0; b < d.k; ++b) {
                const std::size_t si = wrap(static_cast<std::ptrdiff_t>(i + a) - p, H);
                const std::size_t sj = wrap(static_cast<std::ptrdiff_t>(j + b) - p, W);
                const std::size_t wi = ((o * d.cin + c) * d.k + a) * d.k + b;
                const std::size_t xi = ((c * d.batch + n) * H + si) * W + sj;
                if (dw) dw[wi] += g * x[xi];
                if (dx) dx[xi] += g * w[wi];
              }
        }
}

void spectral_mul_forward(const cplx* X, const double* K, cplx* Y, const SpectralDims& d) {
  const std::size_t h = d.r / 2 + 1, nm = d.modes();
  std::fill(Y, Y + d.cout * d.batch * d.r * h, cplx{});
  for (std::size_t o = 0; o < d.cout; ++o)
    for (std::size_t n = 0; n < d.batch; ++n)
      for (std::size_t q = 0; q < nm; ++q) {
        const Mode m = mode_at(q, d.cutoff);
        cplx acc{};
        for (std::size_t c = 0; c < d.cin; ++c) {
          const std::size_t ki = ((o * d.cin + c) * nm + q) * 2;
          acc += cplx(K[ki], K[ki + 1]) * X[spec_index(c, n, m, d)];
        }
        Y[spec_index(o, n, m, d)] = acc;
      }
}

void group_norm_forward(const double* x, double* y, double* mean, double* rstd, std::size_t channels,
                        std::size_t batch, std::size_t plane, std::size_t groups, double eps) {
  const std::size_t cg = channels / groups;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      std::vector<double> vals;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c)
        for (std::size_t i = 0; i < plane; ++i) vals.push_back(x[(c * batch + n) * plane + i]);
      double mu = 0.0;
      for (double v : vals) mu += v;
      mu /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mu) * (v - mu);
      var /= static_cast<double>(vals.size());
      const double rs = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = (c * batch + n) * plane + i;
          y[idx] = (x[idx] - mu) * rs;
        }
      mean[n * groups + g] = mu;
      rstd[n * groups + g] = rs;
    }
}

}  // namespace reference

}  // namespace dfu::kernels
