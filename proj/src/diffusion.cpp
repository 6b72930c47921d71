#include "dfu/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

#include "dfu/errors.hpp"
#include "dfu/fft.hpp"

namespace dfu {

namespace {

int wrap_freq(int m, int r) {
  int k = ((m % r) + r) % r;
  return 2 * k < r ? k : k - r;
}

std::size_t index_of(int m, std::size_t r) {
  const int ri = static_cast<int>(r);
  return static_cast<std::size_t>(((m % ri) + ri) % ri);
}

}  // namespace

FourierBasis::FourierBasis(std::size_t r) : r_(r) {
  if (r == 0) throw ConfigError("fourier basis: resolution must be positive");
  const int ri = static_cast<int>(r);
  const int lo = -ri / 2, hi = (ri - 1) / 2;
  for (int m1 = lo; m1 <= hi; ++m1)
    for (int m2 = lo; m2 <= hi; ++m2) {
      const int p1 = wrap_freq(-m1, ri), p2 = wrap_freq(-m2, ri);
      if (p1 == m1 && p2 == m2) {
        // cos vanishes on the cell-centred grid when exactly one axis is at Nyquist
        const int nyq = (m1 != 0) + (m2 != 0);
        modes_.push_back({m1, m2, nyq == 1, true});
      } else if (std::make_pair(m1, m2) < std::make_pair(p1, p2)) {
        modes_.push_back({m1, m2, false, false});
        modes_.push_back({m1, m2, true, false});
      }
    }
  std::stable_sort(modes_.begin(), modes_.end(), [](const BasisMode& a, const BasisMode& b) {
    if (a.norm2() != b.norm2()) return a.norm2() < b.norm2();
    if (a.m1 != b.m1) return a.m1 < b.m1;
    if (a.m2 != b.m2) return a.m2 < b.m2;
    return !a.sine && b.sine;
  });
}

double FourierBasis::value(std::size_t k, std::size_t i, std::size_t j) const {
  const auto& m = modes_.at(k);
  const double r = static_cast<double>(r_);
  const double th = 2.0 * M_PI * (m.m1 * (i + 0.5) + m.m2 * (j + 0.5)) / r;
  const double norm = m.self_conjugate ? 1.0 / r : std::sqrt(2.0) / r;
  return norm * (m.sine ? std::sin(th) : std::cos(th));
}

void FourierBasis::analyze(std::span<const double> plane, std::span<double> coeffs) const {
  const std::size_t r = r_, hc = fft::half_cols(r);
  if (plane.size() != r * r || coeffs.size() != r * r) throw ShapeError("fourier basis: plane size mismatch");
  std::vector<cplx> X(r * hc);
  fft::rfft2(plane, X, r, 1);
  const double rr = static_cast<double>(r) * static_cast<double>(r);
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const auto& m = modes_[k];
    std::size_t row = index_of(m.m1, r), col = index_of(m.m2, r);
    cplx z;
    if (col < hc) {
      z = X[row * hc + col];
    } else {
      z = std::conj(X[index_of(-m.m1, r) * hc + index_of(-m.m2, r)]);
    }
    // sum_n x_n exp(-i theta_n)
    const double phi = M_PI * (m.m1 + m.m2) / static_cast<double>(r);
    z *= rr * std::polar(1.0, -phi);
    const double norm = m.self_conjugate ? 1.0 / static_cast<double>(r) : std::sqrt(2.0) / static_cast<double>(r);
    coeffs[k] = m.sine ? -norm * z.imag() : norm * z.real();
  }
}

void FourierBasis::synthesize(std::span<const double> coeffs, std::span<double> plane) const {
  const std::size_t r = r_, hc = fft::half_cols(r);
  if (plane.size() != r * r || coeffs.size() != r * r) throw ShapeError("fourier basis: plane size mismatch");
  // Full spectrum Z with x_n = Re sum_k Z_k exp(2 pi i k.n / r), then its Hermitian part.
  std::vector<cplx> Z(r * r);
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const auto& m = modes_[k];
    const double phi = M_PI * (m.m1 + m.m2) / static_cast<double>(r);
    const double norm = m.self_conjugate ? 1.0 / static_cast<double>(r) : std::sqrt(2.0) / static_cast<double>(r);
    cplx c = norm * coeffs[k] * std::polar(1.0, phi);
    if (m.sine) c *= cplx(0.0, -1.0);
    Z[index_of(m.m1, r) * r + index_of(m.m2, r)] += c;
  }
  std::vector<cplx> H(r * hc);
  for (std::size_t row = 0; row < r; ++row)
    for (std::size_t col = 0; col < hc; ++col) {
      const std::size_t prow = (r - row) % r, pcol = (r - col) % r;
      H[row * hc + col] = 0.5 * (Z[row * r + col] + std::conj(Z[prow * r + pcol]));
    }
  fft::irfft2(H, plane, r, 1);
}

std::vector<double> FourierBasis::analyze(const GridFunction& g) const {
  if (g.resolution() != r_) throw ShapeError("fourier basis: resolution mismatch");
  const std::size_t n = r_ * r_;
  std::vector<double> out(g.channels() * n);
  for (std::size_t c = 0; c < g.channels(); ++c)
    analyze(g.values().subspan(c * n, n), std::span<double>(out).subspan(c * n, n));
  return out;
}

GridFunction FourierBasis::synthesize(std::size_t channels, std::span<const double> coeffs) const {
  const std::size_t n = r_ * r_;
  if (coeffs.size() != channels * n) throw ShapeError("fourier basis: coefficient count mismatch");
  std::vector<double> v(channels * n);
  for (std::size_t c = 0; c < channels; ++c) synthesize(coeffs.subspan(c * n, n), std::span<double>(v).subspan(c * n, n));
  return GridFunction(channels, r_, std::move(v));
}

const FourierBasis& fourier_basis(std::size_t r) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<FourierBasis>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[r];
  if (!slot) slot = std::make_unique<FourierBasis>(r);
  return *slot;
}

// ---- covariance ----

double CovarianceOperator::lambda(int m1, int m2) const {
  return std::pow(1.0 + static_cast<double>(m1 * m1 + m2 * m2), -alpha);
}

std::vector<double> CovarianceOperator::eigenvalues(std::size_t r) const {
  const auto& basis = fourier_basis(r);
  if (truncation > basis.size())
    throw TruncationError("covariance truncation " + std::to_string(truncation) + " exceeds the " +
                          std::to_string(basis.size()) + " modes representable at r=" + std::to_string(r));
  const std::size_t n = truncation ? truncation : basis.size();
  std::vector<double> ev(basis.size(), 0.0);
  for (std::size_t k = 0; k < n; ++k) ev[k] = lambda(basis.modes()[k].m1, basis.modes()[k].m2);
  return ev;
}

GridFunction kl_noise(const CovarianceOperator& C, std::size_t r, std::size_t n, Rng& rng, std::size_t channels) {
  const auto& basis = fourier_basis(r);
  if (n > basis.size())
    throw TruncationError("kl_noise: " + std::to_string(n) + " terms requested but only " +
                          std::to_string(basis.size()) + " modes are representable at r=" + std::to_string(r));
  const auto ev = C.eigenvalues(r);
  const std::size_t N = basis.size();
  std::vector<double> coeffs(channels * N, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < n; ++k) coeffs[c * N + k] = std::sqrt(ev[k]) * rng.normal();
  return basis.synthesize(channels, coeffs);
}

GridFunction kl_noise(const CovarianceOperator& C, std::size_t r, Rng& rng, std::size_t channels) {
  return kl_noise(C, r, C.truncation ? C.truncation : r * r, rng, channels);
}

double vp_alpha(double t) { return std::exp(-0.5 * t); }
double vp_variance(double t) { return -std::expm1(-t); }
double ve_sigma(double t) { return std::sqrt(std::expm1(t)); }
double vp_time(double sigma) { return std::log1p(sigma * sigma); }

Perturbed perturb(const GridFunction& x0, double t, const CovarianceOperator& C, Rng& rng) {
  if (!(t >= 0.0)) throw ConfigError("perturb: t must be nonnegative");
  GridFunction noise = kl_noise(C, x0.resolution(), rng, x0.channels());
  if (t == 0.0) return {x0, noise};
  return {vp_alpha(t) * x0 + std::sqrt(vp_variance(t)) * noise, noise};
}

// ---- Gaussian data ----

GaussianData GaussianData::stationary(const CovarianceOperator& C, std::size_t r, std::size_t channels) {
  GaussianData d;
  d.resolution = r;
  d.channels = channels;
  d.s = C.eigenvalues(r);
  return d;
}

GaussianData GaussianData::from_synthetic(const SyntheticDistributionSpec& spec, std::size_t r) {
  if (spec.kind != SyntheticKind::gaussian_process)
    throw ConfigError("gaussian data: only the gaussian-process source has a Gaussian law");
  if (r < static_cast<std::size_t>(2 * spec.cutoff + 1))
    throw ResolutionError("gaussian data: r=" + std::to_string(r) + " aliases modes up to " +
                          std::to_string(spec.cutoff));
  const auto& basis = fourier_basis(r);
  GaussianData d;
  d.resolution = r;
  d.channels = spec.channels;
  d.s.assign(basis.size(), 0.0);
  const double rr = static_cast<double>(r * r);
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const auto& m = basis.modes()[k];
    if (std::abs(m.m1) <= spec.cutoff && std::abs(m.m2) <= spec.cutoff)
      d.s[k] = rr * spec.amplitude * spec.amplitude * gp_eigenvalue(m.m1, m.m2, spec.alpha);
  }
  return d;
}

void GaussianData::validate() const {
  if (s.size() != resolution * resolution) throw ConfigError("gaussian data: variance count must be r*r");
  for (double v : s)
    if (!(v >= 0.0)) throw ConfigError("gaussian data: variances must be nonnegative");
  if (mean.size() && (mean.resolution() != resolution || mean.channels() != channels))
    throw ConfigError("gaussian data: mean shape mismatch");
}

std::vector<double> GaussianData::mean_coeffs() const {
  if (!mean.size()) return std::vector<double>(channels * resolution * resolution, 0.0);
  return fourier_basis(resolution).analyze(mean);
}

GridFunction GaussianData::sample(Rng& rng) const {
  const auto& basis = fourier_basis(resolution);
  const std::size_t N = basis.size();
  auto c = mean_coeffs();
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t k = 0; k < N; ++k) c[ch * N + k] += std::sqrt(s[k]) * rng.normal();
  return basis.synthesize(channels, c);
}

AnalyticScore analytic_score(const GridFunction& x, double t, const GaussianData& data, const CovarianceOperator& C) {
  if (!(t > 0.0)) throw SingularityError("analytic_score: t must be positive (1 - e^{-t} vanishes at t = 0)");
  data.validate();
  if (x.resolution() != data.resolution || x.channels() != data.channels)
    throw ShapeError("analytic_score: x does not match the data resolution/channels");
  const auto& basis = fourier_basis(x.resolution());
  const std::size_t N = basis.size();
  const auto lam = C.eigenvalues(x.resolution());
  const auto mu = data.mean_coeffs();
  const auto xc = basis.analyze(x);
  const double a = vp_alpha(t), v = vp_variance(t);
  std::vector<double> score(xc.size()), grad(xc.size()), post(xc.size());
  for (std::size_t ch = 0; ch < data.channels; ++ch)
    for (std::size_t k = 0; k < N; ++k) {
      const std::size_t i = ch * N + k;
      const double den = a * a * data.s[k] + v * lam[k];
      const double dev = xc[i] - a * mu[i];
      if (den == 0.0) {
        post[i] = mu[i];
        score[i] = 0.0;
        grad[i] = 0.0;
        continue;
      }
      post[i] = mu[i] + a * data.s[k] * dev / den;
      score[i] = (xc[i] - a * post[i]) / v;
      grad[i] = -dev / den;
      const double scale = (std::abs(xc[i]) + a * std::abs(post[i])) / v + 1e-300;
      if (std::abs(score[i] + lam[k] * grad[i]) > 1e-10 * scale)
        throw std::logic_error("analytic_score: score and -C grad log p disagree at mode " + std::to_string(k));
    }
  return {basis.synthesize(data.channels, score), basis.synthesize(data.channels, grad),
          basis.synthesize(data.channels, post)};
}

GridFunction score_from_denoiser(const GridFunction& x, double sigma, const GridFunction& denoised) {
  if (sigma == 0.0) throw SingularityError("score_from_denoiser: sigma must be nonzero");
  return (1.0 / (sigma * sigma)) * (denoised - x);
}

GaussianDenoiser::GaussianDenoiser(GaussianData data, CovarianceOperator C) : data_(std::move(data)), C_(C) {
  data_.validate();
  lambda_ = C_.eigenvalues(data_.resolution);
  mean_ = data_.mean_coeffs();
}

Tensor GaussianDenoiser::operator()(const Tensor& x, double sigma) const {
  const std::size_t r = data_.resolution, N = r * r;
  if (x.rank() != 4 || x.dim(0) != data_.channels || x.dim(2) != r || x.dim(3) != r)
    throw ShapeError("gaussian denoiser: expected [" + std::to_string(data_.channels) + ", N, " + std::to_string(r) +
                     ", " + std::to_string(r) + "], got " + to_string(x.shape()));
  const auto& basis = fourier_basis(r);
  const std::size_t batch = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> c(N);
  const double s2 = sigma * sigma;
  for (std::size_t ch = 0; ch < data_.channels; ++ch)
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (ch * batch + n) * N;
      basis.analyze(x.span().subspan(off, N), c);
      for (std::size_t k = 0; k < N; ++k) {
        const double m = mean_[ch * N + k], den = data_.s[k] + s2 * lambda_[k];
        c[k] = den == 0.0 ? m : m + data_.s[k] * (c[k] - m) / den;
      }
      basis.synthesize(c, out.span().subspan(off, N));
    }
  return out;
}

GridFunction GaussianDenoiser::operator()(const GridFunction& x, double sigma) const {
  std::vector<GridFunction> one{x};
  return unstack((*this)(stack(one), sigma)).front();
}

// ---- schedule and sampler ----

DiffusionSchedule DiffusionSchedule::make(std::size_t steps, double sigma_min, double sigma_max, double rho) {
  DiffusionSchedule s;
  s.steps = steps;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.rho = rho;
  if (steps < 2) throw ConfigError("schedule: at least 2 steps are required");
  if (!(sigma_min > 0.0 && sigma_max > sigma_min && rho > 0.0))
    throw ConfigError("schedule: need 0 < sigma_min < sigma_max and rho > 0");
  const double a = std::pow(sigma_max, 1.0 / rho), b = std::pow(sigma_min, 1.0 / rho);
  for (std::size_t i = 0; i < steps; ++i)
    s.sigmas.push_back(std::pow(a + static_cast<double>(i) / static_cast<double>(steps - 1) * (b - a), rho));
  s.sigmas.push_back(0.0);
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (sigmas.size() != steps + 1) throw ConfigError("schedule: expected steps + 1 noise levels");
  if (sigmas.back() != 0.0) throw ConfigError("schedule: final noise level must be exactly 0");
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i)
    if (!(sigmas[i] > sigmas[i + 1])) throw ConfigError("schedule: noise levels must be strictly decreasing");
}

Tensor sample_batch(const BatchDenoiser& denoiser, std::size_t r, const DiffusionSchedule& schedule,
                    const CovarianceOperator& C, Rng& rng, const SampleOptions& opt) {
  schedule.validate();
  const double s0 = schedule.sigmas.front();
  Tensor x;
  if (opt.init) {
    x = *opt.init;
  } else {
    x = Tensor({opt.channels, opt.count, r, r});
    const std::size_t N = r * r;
    for (std::size_t ch = 0; ch < opt.channels; ++ch)
      for (std::size_t n = 0; n < opt.count; ++n) {
        GridFunction z = kl_noise(C, r, rng);
        const auto v = z.values();
        double* dst = x.data() + (ch * opt.count + n) * N;
        for (std::size_t i = 0; i < N; ++i) dst[i] = s0 * v[i];
      }
  }
  std::size_t evals = 0;
  auto slope = [&](const Tensor& at, double sigma) {
    Tensor d = denoiser(at, sigma);
    ++evals;
    if (d.shape() != at.shape()) throw ShapeError("sampler: denoiser changed the tensor shape");
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (at[i] - d[i]) / sigma;
    return d;
  };
  for (std::size_t i = 0; i < schedule.steps; ++i) {
    const double sc = schedule.sigmas[i], sn = schedule.sigmas[i + 1], h = sn - sc;
    const Tensor d = slope(x, sc);
    Tensor xn = x;
    for (std::size_t j = 0; j < x.size(); ++j) xn[j] += h * d[j];
    if (sn != 0.0) {
      const Tensor d2 = slope(xn, sn);
      for (std::size_t j = 0; j < x.size(); ++j) xn[j] = x[j] + 0.5 * h * (d[j] + d2[j]);
    }
    x = std::move(xn);
  }
  if (opt.evaluations) *opt.evaluations = evals;
  return x;
}

GridFunction sample(const BatchDenoiser& denoiser, std::size_t r, const DiffusionSchedule& schedule,
                    const CovarianceOperator& C, Rng& rng, std::size_t channels) {
  SampleOptions opt;
  opt.channels = channels;
  return unstack(sample_batch(denoiser, r, schedule, C, rng, opt)).front();
}

double reverse_sde_terminal_variance(double s, double lambda, double sign, double T, std::size_t steps,
                                     std::size_t paths, Rng& rng) {
  if (!(T > 0.0) || steps == 0 || paths < 2) throw ConfigError("reverse SDE: need T > 0, steps > 0, paths > 1");
  const double dt = T / static_cast<double>(steps);
  const double sl = std::sqrt(lambda * dt);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t p = 0; p < paths; ++p) {
    const double a = vp_alpha(T), v = vp_variance(T);
    double y = std::sqrt(a * a * s + v * lambda) * rng.normal();
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = T - static_cast<double>(k) * dt;
      const double at = vp_alpha(t), vt = vp_variance(t);
      const double score = lambda * y / (at * at * s + vt * lambda);
      y += (0.5 * y + sign * score) * dt + sl * rng.normal();
    }
    sum += y;
    sum2 += y * y;
  }
  const double n = static_cast<double>(paths), m = sum / n;
  return (sum2 - n * m * m) / (n - 1.0);
}

}  // namespace dfu
