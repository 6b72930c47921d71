#include "dfu/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dfu/diffusion.hpp"

namespace dfu {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

GridFunction random_grid(std::size_t ch, std::size_t r, Rng& rng) {
  std::vector<double> v(ch * r * r);
  for (auto& x : v) x = rng.normal();
  return GridFunction(ch, r, std::move(v));
}

}  // namespace

OracleCheck oracle_score_sign(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed);
  double worst_white = 0.0, worst_weighted = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t r = 2 + trial % 9;
    const bool white = trial % 2 == 0;
    auto C = white ? CovarianceOperator::white() : CovarianceOperator::power_law(1.1 + 0.1 * static_cast<double>(trial % 20));
    auto data = GaussianData::stationary(CovarianceOperator::power_law(0.05 * trial), r, 1 + trial % 2);
    if (trial % 3 == 0) data.mean = random_grid(data.channels, r, rng);
    const double t = 0.02 + 0.25 * trial;
    auto x = random_grid(data.channels, r, rng);
    auto res = analytic_score(x, t, data, C);
    const auto& basis = fourier_basis(r);
    auto s = basis.analyze(res.score), g = basis.analyze(res.grad_log_p);
    const auto ev = C.eigenvalues(r);
    double err = 0.0, scale = 1e-300;
    for (std::size_t i = 0; i < s.size(); ++i) {
      err = std::max(err, std::abs(s[i] + ev[i % (r * r)] * g[i]));
      scale = std::max(scale, std::abs(s[i]));
    }
    (white ? worst_white : worst_weighted) = std::max(white ? worst_white : worst_weighted, err / scale);
  }
  OracleCheck c;
  c.name = "score-sign";
  c.value = std::max(worst_white, worst_weighted);
  c.criterion = "max |s + C grad log p| / max |s| < 1e-10";
  c.passed = c.value < 1e-10;
  c.detail = "C=I: " + fmt(worst_white) + ", trace-class C: " + fmt(worst_weighted);
  return c;
}

OracleCheck oracle_kl_spectrum(std::uint64_t seed, std::size_t draws) {
  Rng rng(seed);
  const std::size_t r = 8, n = 16;
  auto C = CovarianceOperator::power_law(2.0, n);
  const auto ev = C.eigenvalues(r);
  const auto& basis = fourier_basis(r);
  std::vector<double> s2(n, 0.0), c(r * r);
  for (std::size_t d = 0; d < draws; ++d) {
    auto g = kl_noise(C, r, n, rng);
    basis.analyze(g.values(), c);
    for (std::size_t k = 0; k < n; ++k) s2[k] += c[k] * c[k];
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(s2[k] / draws - ev[k]) / ev[k]);
  OracleCheck out;
  out.name = "kl-spectrum";
  out.value = worst;
  out.criterion = "worst relative variance error < 0.10 over " + std::to_string(draws) + " draws";
  out.passed = worst < 0.10;
  return out;
}

ConvergenceReport heun_convergence(double s) {
  ConvergenceReport rep;
  GaussianData data;
  data.resolution = 1;
  data.s = {s};
  GaussianDenoiser D(data, CovarianceOperator::white());
  BatchDenoiser f = [&](const Tensor& x, double sigma) { return D(x, sigma); };
  for (std::size_t N : {9u, 18u, 36u}) {
    auto sched = DiffusionSchedule::make(N);
    const double s0 = sched.sigmas.front();
    Tensor init({1, 1, 1, 1}, s0);
    SampleOptions opt;
    opt.init = &init;
    Rng rng(0);
    const double got = sample_batch(f, 1, sched, CovarianceOperator::white(), rng, opt)[0];
    // x / sqrt(s + sigma^2) is conserved along the exact flow
    const double exact = s0 * std::sqrt(s) / std::sqrt(s + s0 * s0);
    rep.steps.push_back(N);
    rep.errors.push_back(std::abs(got - exact) / exact);
  }
  for (std::size_t i = 0; i + 1 < rep.errors.size(); ++i) rep.ratios.push_back(rep.errors[i] / rep.errors[i + 1]);
  return rep;
}

OracleCheck oracle_heun_order() {
  auto rep = heun_convergence(0.25);
  OracleCheck c;
  c.name = "heun-order";
  c.value = rep.ratios.empty() ? 0.0 : *std::min_element(rep.ratios.begin(), rep.ratios.end());
  c.criterion = "error ratio in [3, 5] when N doubles over {9, 18, 36}";
  c.passed = !rep.ratios.empty();
  for (double q : rep.ratios) c.passed = c.passed && q >= 3.0 && q <= 5.0;
  for (std::size_t i = 0; i < rep.steps.size(); ++i)
    c.detail += "e(" + std::to_string(rep.steps[i]) + ")=" + fmt(rep.errors[i]) + " ";
  for (double q : rep.ratios) c.detail += "ratio=" + fmt(q) + " ";
  return c;
}

OracleCheck oracle_heun_variance(std::uint64_t seed, std::size_t runs) {
  const std::size_t r = 8, N = r * r;
  auto C = CovarianceOperator::power_law(2.0);
  auto data = GaussianData::stationary(C, r);
  GaussianDenoiser D(data, C);
  BatchDenoiser f = [&](const Tensor& x, double sigma) { return D(x, sigma); };
  Rng rng(seed);
  SampleOptions opt;
  opt.count = runs;
  Tensor x = sample_batch(f, r, DiffusionSchedule::make(18), C, rng, opt);
  const auto& basis = fourier_basis(r);
  std::vector<double> c(N);
  double acc = 0.0;
  for (std::size_t n = 0; n < runs; ++n) {
    basis.analyze(x.span().subspan(n * N, N), c);
    for (std::size_t k = 0; k < N; ++k) acc += c[k] * c[k] / data.s[k];
  }
  const double ratio = acc / static_cast<double>(runs * N);
  OracleCheck out;
  out.name = "heun-variance";
  out.value = std::abs(ratio - 1.0);
  out.criterion = "|terminal variance / target - 1| < 0.02 (N=18, " + std::to_string(runs) + " runs, r=8)";
  out.passed = out.value < 0.02;
  out.detail = "variance ratio " + fmt(ratio) + " pooled over " + std::to_string(N) + " modes";
  return out;
}

OracleCheck oracle_reverse_sde_sign(std::uint64_t seed) {
  Rng rng(seed);
  const double s = 0.3, lambda = 1.0;
  const double corrected = reverse_sde_terminal_variance(s, lambda, -1.0, 6.0, 600, 4000, rng);
  const double literal = reverse_sde_terminal_variance(s, lambda, +1.0, 6.0, 600, 4000, rng);
  OracleCheck c;
  c.name = "reverse-sde-sign";
  c.value = std::abs(corrected - s) / s;
  c.criterion = "drift 1/2 Y - s reproduces the target variance within 8%";
  c.passed = c.value < 0.08 && std::abs(literal - s) > 0.5 * s;
  c.detail = "target " + fmt(s) + ", drift 1/2 Y - s: " + fmt(corrected) + ", drift 1/2 Y + s: " + fmt(literal);
  return c;
}

std::vector<OracleCheck> oracle_suite(std::uint64_t seed) {
  return {oracle_score_sign(seed), oracle_kl_spectrum(seed + 1), oracle_heun_order(), oracle_heun_variance(seed + 2),
          oracle_reverse_sde_sign(seed + 3)};
}

}  // namespace dfu
