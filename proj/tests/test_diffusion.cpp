#include <cmath>
#include <vector>

#include "doctest.h"
#include "dfu/diffusion.hpp"
#include "dfu/errors.hpp"
#include "dfu/oracles.hpp"

using namespace dfu;

namespace {

// Dense basis matrix built from the closed-form cosines and sines.
std::vector<double> basis_matrix(std::size_t r) {
  const auto& b = fourier_basis(r);
  const std::size_t N = r * r;
  std::vector<double> E(N * N);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) E[k * N + i * r + j] = b.value(k, i, j);
  return E;
}

GridFunction random_grid(std::size_t r, Rng& rng, std::size_t ch = 1) {
  std::vector<double> v(ch * r * r);
  for (auto& x : v) x = rng.normal();
  return GridFunction(ch, r, v);
}

}  // namespace

TEST_CASE("fourier basis is orthonormal and the FFT paths match the dense matrix") {
  for (std::size_t r : {1u, 2u, 3u, 4u, 5u, 8u, 9u}) {
    const auto& b = fourier_basis(r);
    const std::size_t N = r * r;
    REQUIRE(b.size() == N);
    auto E = basis_matrix(r);
    double worst = 0.0;
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t c = 0; c < N; ++c) {
        double dot = 0.0;
        for (std::size_t n = 0; n < N; ++n) dot += E[a * N + n] * E[c * N + n];
        worst = std::max(worst, std::abs(dot - (a == c ? 1.0 : 0.0)));
      }
    CHECK(worst < 1e-12);

    Rng rng(r);
    std::vector<double> x(N), c(N), back(N);
    for (auto& v : x) v = rng.normal();
    b.analyze(x, c);
    for (std::size_t k = 0; k < N; ++k) {
      double ref = 0.0;
      for (std::size_t n = 0; n < N; ++n) ref += E[k * N + n] * x[n];
      CHECK(c[k] == doctest::Approx(ref).epsilon(1e-10));
    }
    b.synthesize(c, back);
    CHECK(max_abs_diff(back, x) < 1e-12);
    for (std::size_t k = 1; k < N; ++k) CHECK(b.modes()[k - 1].norm2() <= b.modes()[k].norm2());
  }
}

TEST_CASE("covariance operator flags and truncation") {
  CHECK(CovarianceOperator::white().is_white());
  CHECK_FALSE(CovarianceOperator::white().trace_class());
  CHECK(CovarianceOperator::power_law(2.0).trace_class());
  auto ev = CovarianceOperator::power_law(2.0, 16).eigenvalues(8);
  for (std::size_t k = 1; k < ev.size(); ++k) CHECK(ev[k] <= ev[k - 1]);
  CHECK(ev[15] > 0.0);
  CHECK(ev[16] == 0.0);
  CHECK_THROWS_AS(CovarianceOperator::power_law(2.0, 65).eigenvalues(8), TruncationError);
  Rng rng(1);
  CHECK_THROWS_AS(kl_noise(CovarianceOperator::white(), 4, 17, rng), TruncationError);
}

TEST_CASE("kl_noise single constant mode") {
  Rng rng(2);
  GridFunction g = kl_noise(CovarianceOperator::white(), 6, 1, rng);
  for (double v : g.values()) CHECK(v == doctest::Approx(g.values()[0]).epsilon(1e-12));
  CHECK(g.values()[0] != 0.0);
}

TEST_CASE("white kl_noise has unit per-pixel variance") {
  Rng rng(3);
  const std::size_t r = 8, draws = 10000;
  std::vector<double> s2(r * r, 0.0);
  for (std::size_t d = 0; d < draws; ++d) {
    auto g = kl_noise(CovarianceOperator::white(), r, rng);
    for (std::size_t i = 0; i < r * r; ++i) s2[i] += g.values()[i] * g.values()[i];
  }
  for (double v : s2) CHECK(v / draws == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("kl_noise covariance is diagonal in the Fourier basis with entries lambda_k") {
  Rng rng(4);
  const std::size_t r = 8, N = 64, draws = 10000;
  auto C = CovarianceOperator::power_law(2.0, 16);
  auto ev = C.eigenvalues(r);
  auto E = basis_matrix(r);
  std::vector<double> cov(N * N, 0.0);
  for (std::size_t d = 0; d < draws; ++d) {
    auto g = kl_noise(C, r, 16, rng);
    std::vector<double> c(N, 0.0);
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t n = 0; n < N; ++n) c[k] += E[k * N + n] * g.values()[n];
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t b = 0; b < 16; ++b) cov[a * N + b] += c[a] * c[b];
  }
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = 0; b < 16; ++b) {
      const double v = cov[a * N + b] / draws;
      if (a == b) CHECK(v == doctest::Approx(ev[a]).epsilon(0.10));
      else CHECK(std::abs(v) < 5.0 * std::sqrt(ev[a] * ev[b] / draws));
    }
}

TEST_CASE("low-mode covariance of trace-class noise does not depend on r") {
  auto C = CovarianceOperator::power_law(2.0);
  for (std::size_t r : {8u, 16u}) {
    Rng rng(5);
    const auto& b = fourier_basis(r);
    auto ev = C.eigenvalues(r);
    std::vector<double> s2(5, 0.0);
    std::vector<double> c(r * r);
    const std::size_t draws = 4000;
    for (std::size_t d = 0; d < draws; ++d) {
      auto g = kl_noise(C, r, rng);
      b.analyze(g.values(), c);
      for (std::size_t k = 0; k < 5; ++k) s2[k] += c[k] * c[k];
    }
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(ev[k] == doctest::Approx(C.lambda(b.modes()[k].m1, b.modes()[k].m2)));
      CHECK(s2[k] / draws == doctest::Approx(ev[k]).epsilon(0.1));
    }
  }
}

TEST_CASE("perturb: t = 0 is the identity") {
  Rng rng(6);
  auto x0 = random_grid(8, rng, 2);
  auto p = perturb(x0, 0.0, CovarianceOperator::power_law(2.0), rng);
  CHECK(p.xt == x0);
}

TEST_CASE("perturb at large t reaches the stationary law") {
  Rng rng(7);
  const std::size_t r = 4, draws = 10000;
  auto C = CovarianceOperator::power_law(1.5);
  auto ev = C.eigenvalues(r);
  auto x0 = GridFunction::constant(1, r, 3.0);
  const auto& b = fourier_basis(r);
  std::vector<double> m(16, 0.0), s2(16, 0.0), c(16);
  for (std::size_t d = 0; d < draws; ++d) {
    b.analyze(perturb(x0, 50.0, C, rng).xt.values(), c);
    for (std::size_t k = 0; k < 16; ++k) {
      m[k] += c[k];
      s2[k] += c[k] * c[k];
    }
  }
  for (std::size_t k = 0; k < 16; ++k) {
    CHECK(std::abs(m[k] / draws) < 3.0 * std::sqrt(ev[k] / draws));
    CHECK(s2[k] / draws == doctest::Approx(ev[k]).epsilon(0.06));
  }
}

TEST_CASE("perturb variance interpolates at t = ln 2") {
  Rng rng(8);
  const std::size_t r = 4, draws = 10000;
  auto C = CovarianceOperator::power_law(2.0);
  auto data = GaussianData::stationary(CovarianceOperator::power_law(0.5), r);
  auto ev = C.eigenvalues(r);
  const auto& b = fourier_basis(r);
  std::vector<double> s2(16, 0.0), c(16);
  for (std::size_t d = 0; d < draws; ++d) {
    b.analyze(perturb(data.sample(rng), std::log(2.0), C, rng).xt.values(), c);
    for (std::size_t k = 0; k < 16; ++k) s2[k] += c[k] * c[k];
  }
  for (std::size_t k = 0; k < 16; ++k) CHECK(s2[k] / draws == doctest::Approx(0.5 * data.s[k] + 0.5 * ev[k]).epsilon(0.1));
}

TEST_CASE("analytic score examples") {
  Rng rng(9);
  const std::size_t r = 6;
  auto C = CovarianceOperator::power_law(2.0);
  auto data = GaussianData::stationary(C, r);
  auto ev = C.eigenvalues(r);
  const auto& b = fourier_basis(r);
  auto x = random_grid(r, rng);
  auto xc = b.analyze(x);
  for (double t : {0.01, 0.5, 3.0}) {
    auto res = analytic_score(x, t, data, C);
    auto g = b.analyze(res.grad_log_p);
    for (std::size_t k = 0; k < r * r; ++k) CHECK(g[k] == doctest::Approx(-xc[k] / ev[k]).epsilon(1e-9));
  }
  auto zero = analytic_score(GridFunction::constant(1, r, 0.0), 1.0, data, C);
  CHECK(max_abs(zero.score.values()) == 0.0);
  CHECK_THROWS_AS(analytic_score(x, 0.0, data, C), SingularityError);
}

TEST_CASE("analytic score single mode against a scalar finite difference") {
  GaussianData data;
  data.resolution = 1;
  data.s = {1.0};
  auto C = CovarianceOperator::white();
  const double t = std::log(2.0);
  auto res = analytic_score(GridFunction::constant(1, 1, 1.0), t, data, C);
  CHECK(res.grad_log_p.values()[0] == doctest::Approx(-1.0).epsilon(1e-12));
  // p_t = N(0, a^2 s + v lambda) with a^2 = v = 1/2
  auto logp = [](double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * M_PI); };
  const double h = 1e-5, fd = (logp(1.0 + h) - logp(1.0 - h)) / (2.0 * h);
  CHECK(std::abs(res.grad_log_p.values()[0] - fd) < 1e-8);
  CHECK(std::abs(res.score.values()[0] + fd) < 1e-8);
}

TEST_CASE("score equals minus grad log p (C-weighted) on random Gaussian problems") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 2 + trial % 7;
    const bool white = trial % 2 == 0;
    auto C = white ? CovarianceOperator::white() : CovarianceOperator::power_law(1.0 + 0.2 * trial);
    auto data = GaussianData::stationary(CovarianceOperator::power_law(0.1 * trial), r, 2);
    data.mean = random_grid(r, rng, 2);
    auto x = random_grid(r, rng, 2);
    const double t = 0.05 + 0.3 * trial;
    auto res = analytic_score(x, t, data, C);
    const auto& b = fourier_basis(r);
    auto s = b.analyze(res.score), g = b.analyze(res.grad_log_p);
    auto ev = C.eigenvalues(r);
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      worst = std::max(worst, std::abs(s[i] + ev[i % (r * r)] * g[i]));
      scale = std::max(scale, std::abs(s[i]));
    }
    CHECK(worst <= 1e-10 * scale);
    if (white) CHECK(max_abs_diff(res.score.values(), (-1.0 * res.grad_log_p).values()) <= 1e-10 * scale);
  }
}

TEST_CASE("score_from_denoiser identities") {
  Rng rng(11);
  auto x = random_grid(5, rng), d = random_grid(5, rng);
  CHECK(max_abs(score_from_denoiser(x, 0.7, x).values()) == 0.0);
  CHECK(score_from_denoiser(GridFunction::constant(1, 5, 0.0), 1.0, d) == d);
  CHECK_THROWS_AS(score_from_denoiser(x, 0.0, d), SingularityError);
}

TEST_CASE("exact Gaussian denoiser gives the VE-frame score") {
  Rng rng(12);
  const std::size_t r = 6;
  auto data = GaussianData::stationary(CovarianceOperator::power_law(1.5), r);
  data.mean = random_grid(r, rng);
  GaussianDenoiser D(data, CovarianceOperator::white());
  auto E = basis_matrix(r);
  auto mu = data.mean_coeffs();
  for (double sigma : {0.05, 0.4, 3.0}) {
    auto x = random_grid(r, rng);
    auto s = score_from_denoiser(x, sigma, D(x, sigma));
    // grad log N(x; mu, E^T diag(s) E + sigma^2 I) in pixel space
    const std::size_t N = r * r;
    std::vector<double> ref(N, 0.0);
    for (std::size_t k = 0; k < N; ++k) {
      double ck = 0.0;
      for (std::size_t n = 0; n < N; ++n) ck += E[k * N + n] * x.values()[n];
      const double gk = -(ck - mu[k]) / (data.s[k] + sigma * sigma);
      for (std::size_t n = 0; n < N; ++n) ref[n] += gk * E[k * N + n];
    }
    CHECK(max_abs_diff(s.values(), ref) < 1e-8 * std::max(1.0, max_abs(ref)));

    // VP/VE bridge: score_from_denoiser(x) = -a s_VP(a x) at t = log(1 + sigma^2)
    const double t = vp_time(sigma), a = vp_alpha(t);
    CHECK(ve_sigma(t) == doctest::Approx(sigma).epsilon(1e-12));
    auto vp = analytic_score(a * x, t, data, CovarianceOperator::white());
    CHECK(max_abs_diff(s.values(), (-a * vp.score).values()) < 1e-8 * std::max(1.0, max_abs(ref)));
  }
}

TEST_CASE("perturb then exact posterior mean recovers the shrunken x0 in expectation") {
  Rng rng(13);
  const std::size_t r = 4, draws = 4000;
  auto C = CovarianceOperator::power_law(2.0);
  auto data = GaussianData::stationary(CovarianceOperator::power_law(1.0), r);
  auto ev = C.eigenvalues(r);
  auto x0 = data.sample(rng);
  const auto& b = fourier_basis(r);
  auto x0c = b.analyze(x0);
  const double t = 0.7, a = vp_alpha(t), v = vp_variance(t);
  std::vector<double> m(16, 0.0), c(16);
  for (std::size_t d = 0; d < draws; ++d) {
    auto xt = perturb(x0, t, C, rng).xt;
    b.analyze(analytic_score(xt, t, data, C).posterior_mean.values(), c);
    for (std::size_t k = 0; k < 16; ++k) m[k] += c[k];
  }
  // pooled z-score within 3 standard errors; per-mode bound widened for 16 simultaneous tests
  double zsum = 0.0;
  for (std::size_t k = 0; k < 16; ++k) {
    const double den = a * a * data.s[k] + v * ev[k];
    const double expect = a * data.s[k] * a * x0c[k] / den;
    const double se = a * data.s[k] * std::sqrt(v * ev[k]) / den / std::sqrt(double(draws));
    const double z = (m[k] / draws - expect) / se;
    CHECK(std::abs(z) < 4.0);
    zsum += z;
  }
  CHECK(std::abs(zsum / 4.0) < 3.0);
}

TEST_CASE("schedule construction") {
  auto s = DiffusionSchedule::make(18);
  REQUIRE(s.sigmas.size() == 19);
  CHECK(s.sigmas.front() == doctest::Approx(80.0).epsilon(1e-12));
  CHECK(s.sigmas[17] == doctest::Approx(0.002).epsilon(1e-12));
  CHECK(s.sigmas.back() == 0.0);
  for (std::size_t i = 0; i + 1 < s.sigmas.size(); ++i) CHECK(s.sigmas[i] > s.sigmas[i + 1]);
  CHECK_THROWS_AS(DiffusionSchedule::make(1), ConfigError);
  auto bad = s;
  bad.sigmas[3] = bad.sigmas[2];
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sampler uses 2N - 1 evaluations and is seeded") {
  auto data = GaussianData::stationary(CovarianceOperator::power_law(1.0), 8);
  GaussianDenoiser D(data, CovarianceOperator::white());
  BatchDenoiser f = [&](const Tensor& x, double s) { return D(x, s); };
  auto sched = DiffusionSchedule::make(18);
  std::size_t evals = 0;
  SampleOptions opt;
  opt.count = 3;
  opt.evaluations = &evals;
  Rng a(5), b(5);
  auto x1 = sample_batch(f, 8, sched, CovarianceOperator::white(), a, opt);
  auto x2 = sample_batch(f, 8, sched, CovarianceOperator::white(), b, opt);
  CHECK(evals == 35);
  CHECK(x1 == x2);
}

TEST_CASE("white sampler initialization has variance sigma_0^2 at every r") {
  for (std::size_t r : {4u, 8u, 16u}) {
    std::size_t count = 20000 / (r * r) + 200;
    Tensor init;
    BatchDenoiser capture = [&](const Tensor& x, double) {
      if (init.empty()) init = x;
      return x;
    };
    auto sched = DiffusionSchedule::make(2);
    SampleOptions opt;
    opt.count = count;
    Rng rng(r);
    sample_batch(capture, r, sched, CovarianceOperator::white(), rng, opt);
    double s2 = 0.0;
    for (double v : init.vec()) s2 += v * v;
    CHECK(s2 / init.size() == doctest::Approx(80.0 * 80.0).epsilon(0.03));
  }
}

TEST_CASE("reverse SDE drift sign: 1/2 Y - s reproduces the target law") {
  Rng rng(14);
  const double s = 0.3, lambda = 1.0;
  const double good = reverse_sde_terminal_variance(s, lambda, -1.0, 6.0, 600, 4000, rng);
  const double bad = reverse_sde_terminal_variance(s, lambda, +1.0, 6.0, 600, 4000, rng);
  CHECK(good == doctest::Approx(s).epsilon(0.08));
  CHECK(std::abs(bad - s) > 0.5 * s);
}

TEST_CASE("oracle battery: sign, spectrum and reverse SDE checks pass") {
  for (const auto& c : {oracle_score_sign(21), oracle_kl_spectrum(22), oracle_reverse_sde_sign(23)}) {
    INFO(c.name << ": " << c.value << " " << c.detail);
    CHECK(c.passed);
  }
}

TEST_CASE("Heun sampler agrees with a scalar recomputation and is second order asymptotically") {
  const double s = 0.25;
  for (std::size_t N : {5u, 18u, 40u}) {
    auto sched = DiffusionSchedule::make(N);
    double x = sched.sigmas[0];
    auto f = [&](double v, double t) { return v * t / (s + t * t); };
    for (std::size_t i = 0; i < N; ++i) {
      const double t = sched.sigmas[i], tn = sched.sigmas[i + 1], d = f(x, t);
      double xn = x + (tn - t) * d;
      if (tn > 0.0) xn = x + (tn - t) * 0.5 * (d + f(xn, tn));
      x = xn;
    }
    GaussianData data;
    data.resolution = 1;
    data.s = {s};
    GaussianDenoiser D(data, CovarianceOperator::white());
    Tensor init({1, 1, 1, 1}, sched.sigmas[0]);
    SampleOptions opt;
    opt.init = &init;
    Rng rng(0);
    const double got = sample_batch([&](const Tensor& v, double t) { return D(v, t); }, 1, sched,
                                    CovarianceOperator::white(), rng, opt)[0];
    CHECK(got == doctest::Approx(x).epsilon(1e-12));
  }
  auto err = [&](std::size_t N) {
    auto sched = DiffusionSchedule::make(N);
    double x = sched.sigmas[0];
    auto f = [&](double v, double t) { return v * t / (s + t * t); };
    for (std::size_t i = 0; i < N; ++i) {
      const double t = sched.sigmas[i], tn = sched.sigmas[i + 1], d = f(x, t);
      double xn = x + (tn - t) * d;
      if (tn > 0.0) xn = x + (tn - t) * 0.5 * (d + f(xn, tn));
      x = xn;
    }
    const double exact = sched.sigmas[0] * std::sqrt(s) / std::sqrt(s + sched.sigmas[0] * sched.sigmas[0]);
    return std::abs(x - exact) / exact;
  };
  const double q = err(100) / err(200);
  CHECK(q > 3.5);
  CHECK(q < 4.5);
}
