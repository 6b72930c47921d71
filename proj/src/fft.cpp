#include "dfu/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace dfu::fft {
namespace {

struct Plans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
};

struct PlanCache {
  std::map<std::size_t, Plans> plans;
  ~PlanCache() {
    for (auto& [r, p] : plans) {
      fftw_destroy_plan(p.r2c);
      fftw_destroy_plan(p.c2r);
    }
    fftw_cleanup();
  }
};

// FFTW's planner is not reentrant; execution with new-array functions is.
const Plans& plans_for(std::size_t r) {
  static std::mutex mu;
  static PlanCache cache;
  std::lock_guard lock(mu);
  auto it = cache.plans.find(r);
  if (it != cache.plans.end()) return it->second;
  const int n = static_cast<int>(r);
  double* real = fftw_alloc_real(r * r);
  fftw_complex* spec = fftw_alloc_complex(r * half_cols(r));
  Plans p;
  p.r2c = fftw_plan_dft_r2c_2d(n, n, real, spec, FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.c2r = fftw_plan_dft_c2r_2d(n, n, spec, real, FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  fftw_free(real);
  fftw_free(spec);
  if (!p.r2c || !p.c2r) throw std::runtime_error("FFTW planning failed for r=" + std::to_string(r));
  return cache.plans.emplace(r, p).first->second;
}

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

void hermitian_boundary(cplx* plane, std::size_t r) {
  const std::size_t h = half_cols(r);
  auto fix = [&](std::size_t col) {
    for (std::size_t k = 0; k <= r / 2; ++k) {
      const std::size_t kk = (r - k) % r;
      const cplx a = plane[k * h + col];
      const cplx b = plane[kk * h + col];
      const cplx s = 0.5 * (a + std::conj(b));
      plane[k * h + col] = s;
      plane[kk * h + col] = std::conj(s);
    }
  };
  fix(0);
  if (r % 2 == 0) fix(r / 2);
}

void check_sizes(std::size_t real_size, std::size_t cplx_size, std::size_t r, std::size_t planes) {
  if (real_size != planes * r * r || cplx_size != planes * r * half_cols(r))
    throw std::invalid_argument("fft: buffer sizes do not match r=" + std::to_string(r));
}

}  // namespace

void rfft2(std::span<const double> in, std::span<cplx> out, std::size_t r, std::size_t planes) {
  check_sizes(in.size(), out.size(), r, planes);
  const Plans& p = plans_for(r);
  const std::size_t h = half_cols(r);
  const double scale = 1.0 / static_cast<double>(r * r);
  for (std::size_t q = 0; q < planes; ++q) {
    cplx* o = out.data() + q * r * h;
    fftw_execute_dft_r2c(p.r2c, const_cast<double*>(in.data() + q * r * r), as_fftw(o));
    for (std::size_t i = 0; i < r * h; ++i) o[i] *= scale;
  }
}

void irfft2(std::span<const cplx> in, std::span<double> out, std::size_t r, std::size_t planes) {
  check_sizes(out.size(), in.size(), r, planes);
  const Plans& p = plans_for(r);
  const std::size_t h = half_cols(r);
  std::vector<cplx> scratch(r * h);
  for (std::size_t q = 0; q < planes; ++q) {
    std::copy_n(in.data() + q * r * h, r * h, scratch.begin());
    hermitian_boundary(scratch.data(), r);
    fftw_execute_dft_c2r(p.c2r, as_fftw(scratch.data()), out.data() + q * r * r);
  }
}

void rfft2_adjoint_acc(std::span<const cplx> grad_out, std::span<double> grad_in, std::size_t r,
                       std::size_t planes) {
  check_sizes(grad_in.size(), grad_out.size(), r, planes);
  const Plans& p = plans_for(r);
  const std::size_t h = half_cols(r);
  const double scale = 1.0 / static_cast<double>(r * r);
  std::vector<cplx> scratch(r * h);
  std::vector<double> tmp(r * r);
  for (std::size_t q = 0; q < planes; ++q) {
    const cplx* g = grad_out.data() + q * r * h;
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t c = 0; c < h; ++c) scratch[k * h + c] = g[k * h + c] / column_weight(c, r);
    hermitian_boundary(scratch.data(), r);
    fftw_execute_dft_c2r(p.c2r, as_fftw(scratch.data()), tmp.data());
    double* dx = grad_in.data() + q * r * r;
    for (std::size_t i = 0; i < r * r; ++i) dx[i] += scale * tmp[i];
  }
}

void irfft2_adjoint_acc(std::span<const double> grad_out, std::span<cplx> grad_in, std::size_t r,
                        std::size_t planes) {
  check_sizes(grad_out.size(), grad_in.size(), r, planes);
  const Plans& p = plans_for(r);
  const std::size_t h = half_cols(r);
  std::vector<cplx> tmp(r * h);
  for (std::size_t q = 0; q < planes; ++q) {
    fftw_execute_dft_r2c(p.r2c, const_cast<double*>(grad_out.data() + q * r * r), as_fftw(tmp.data()));
    cplx* dX = grad_in.data() + q * r * h;
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t c = 0; c < h; ++c) dX[k * h + c] += column_weight(c, r) * tmp[k * h + c];
  }
}

namespace {

// Grid nodes sit at cell centres, so a coefficient of frequency f sampled at
// resolution r carries the phase exp(i pi f / r). Moving a coefficient between
// resolutions swaps that phase.
cplx centre_phase(int f1, int f2, std::size_t r_in, std::size_t r_out) {
  const double a = M_PI * (f1 + f2) * (1.0 / static_cast<double>(r_out) - 1.0 / static_cast<double>(r_in));
  return {std::cos(a), std::sin(a)};
}

// Visits every (source index, target index, weight) triple of the resize map.
template <class F>
void for_each_resize_term(std::size_t r_in, std::size_t r_out, F&& f) {
  const std::size_t hi = half_cols(r_in), ho = half_cols(r_out);
  if (r_out == r_in) {
    for (std::size_t i = 0; i < r_in * hi; ++i) f(i, i, cplx{1.0, 0.0});
    return;
  }
  if (r_out > r_in) {
    const bool even = r_in % 2 == 0;
    const int nyq = static_cast<int>(r_in / 2);
    for (std::size_t k = 0; k < r_in; ++k) {
      const int f1 = signed_freq(k, r_in);
      for (std::size_t c = 0; c < hi; ++c) {
        const int f2 = static_cast<int>(c);
        double w = 1.0;
        if (even && c == r_in / 2) w *= 0.5;
        if (even && f1 == -nyq) {
          f(k * hi + c, row_of(-nyq, r_out) * ho + c, 0.5 * w * centre_phase(-nyq, f2, r_in, r_out));
          f(k * hi + c, row_of(nyq, r_out) * ho + c, 0.5 * w * centre_phase(nyq, f2, r_in, r_out));
        } else {
          f(k * hi + c, row_of(f1, r_out) * ho + c, w * centre_phase(f1, f2, r_in, r_out));
        }
      }
    }
    return;
  }
  const int keep = static_cast<int>((r_out - 1) / 2);
  for (std::size_t k = 0; k < r_in; ++k) {
    const int f1 = signed_freq(k, r_in);
    if (f1 < -keep || f1 > keep) continue;
    for (std::size_t c = 0; c <= static_cast<std::size_t>(keep); ++c)
      f(k * hi + c, row_of(f1, r_out) * ho + c, centre_phase(f1, static_cast<int>(c), r_in, r_out));
  }
}

}  // namespace

void resize_half(std::span<const cplx> in, std::size_t r_in, std::span<cplx> out, std::size_t r_out,
                 std::size_t planes) {
  const std::size_t si = r_in * half_cols(r_in), so = r_out * half_cols(r_out);
  if (in.size() != planes * si || out.size() != planes * so)
    throw std::invalid_argument("resize_half: buffer sizes do not match");
  std::fill(out.begin(), out.end(), cplx{});
  for (std::size_t q = 0; q < planes; ++q) {
    const cplx* src = in.data() + q * si;
    cplx* dst = out.data() + q * so;
    for_each_resize_term(r_in, r_out, [&](std::size_t s, std::size_t t, cplx w) { dst[t] += w * src[s]; });
  }
}

void resize_half_adjoint_acc(std::span<const cplx> grad_out, std::size_t r_out, std::span<cplx> grad_in,
                             std::size_t r_in, std::size_t planes) {
  const std::size_t si = r_in * half_cols(r_in), so = r_out * half_cols(r_out);
  if (grad_in.size() != planes * si || grad_out.size() != planes * so)
    throw std::invalid_argument("resize_half_adjoint: buffer sizes do not match");
  for (std::size_t q = 0; q < planes; ++q) {
    const cplx* g = grad_out.data() + q * so;
    cplx* dst = grad_in.data() + q * si;
    for_each_resize_term(r_in, r_out, [&](std::size_t s, std::size_t t, cplx w) { dst[s] += std::conj(w) * g[t]; });
  }
}

CTensor rfft2(const Tensor& x) {
  if (x.rank() < 2 || x.dim(x.rank() - 1) != x.dim(x.rank() - 2))
    throw std::invalid_argument("rfft2 expects square trailing planes, got " + to_string(x.shape()));
  const std::size_t r = x.dim(x.rank() - 1);
  Shape s = x.shape();
  s.back() = half_cols(r);
  CTensor out(s);
  rfft2(x.span(), out.span(), r, x.size() / (r * r));
  return out;
}

Tensor irfft2(const CTensor& X, std::size_t r) {
  Shape s = X.shape();
  s.back() = r;
  Tensor out(s);
  irfft2(X.span(), out.span(), r, out.size() / (r * r));
  return out;
}

}  // namespace dfu::fft
