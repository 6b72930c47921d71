#pragma once

// Forward OU diffusion in function space, Gaussian oracles and the deterministic
// Heun sampler.
//
// Two frames appear. VP: x_t = e^{-t/2} x_0 + sqrt(1 - e^{-t}) C^{1/2} xi.
// VE (the frame the networks are trained in): x = y + sigma C^{1/2} xi.
// They are related by x_VE = e^{t/2} x_VP and sigma^2 = e^t - 1.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dfu/grid.hpp"
#include "dfu/rng.hpp"
#include "dfu/tensor.hpp"

namespace dfu {

// Real orthonormal Fourier basis of the r x r cell-centred grid (Euclidean
// unit norm). Pairs (m, -m) contribute a cosine and a sine; self-conjugate
// modes contribute whichever of the two does not vanish on the grid.
// Order: by |m|^2, then m1, m2, cosine before sine.
struct BasisMode {
  int m1, m2;  // signed frequencies along y and x
  bool sine;
  bool self_conjugate;
  int norm2() const { return m1 * m1 + m2 * m2; }
};

class FourierBasis {
 public:
  explicit FourierBasis(std::size_t r);

  std::size_t resolution() const { return r_; }
  std::size_t size() const { return modes_.size(); }
  const std::vector<BasisMode>& modes() const { return modes_; }
  // Direct evaluation, used as an oracle for the FFT paths.
  double value(std::size_t k, std::size_t i, std::size_t j) const;

  // One plane of r*r values <-> r*r coefficients.
  void analyze(std::span<const double> plane, std::span<double> coeffs) const;
  void synthesize(std::span<const double> coeffs, std::span<double> plane) const;

  // Channel-major coefficient vectors of size channels * r * r.
  std::vector<double> analyze(const GridFunction& g) const;
  GridFunction synthesize(std::size_t channels, std::span<const double> coeffs) const;

 private:
  std::size_t r_;
  std::vector<BasisMode> modes_;
};

// Shared, lazily built basis per resolution.
const FourierBasis& fourier_basis(std::size_t r);

// Diagonal covariance lambda(m) = (1 + |m|^2)^(-alpha) in the basis above,
// truncated to the first `truncation` basis functions (0 keeps all).
struct CovarianceOperator {
  double alpha = 0.0;
  std::size_t truncation = 0;

  static CovarianceOperator white() { return {}; }
  static CovarianceOperator power_law(double alpha, std::size_t truncation = 0) { return {alpha, truncation}; }

  bool is_white() const { return alpha == 0.0 && truncation == 0; }
  bool trace_class() const { return alpha > 1.0; }
  double lambda(int m1, int m2) const;
  // Basis order at r, zero past the truncation. Throws TruncationError if
  // the truncation exceeds r*r.
  std::vector<double> eigenvalues(std::size_t r) const;
};

// sum_{k<n} sqrt(lambda_k) xi_k e_k, one independent draw per channel.
GridFunction kl_noise(const CovarianceOperator& C, std::size_t r, std::size_t n, Rng& rng, std::size_t channels = 1);
// Uses the operator's own truncation (or every mode).
GridFunction kl_noise(const CovarianceOperator& C, std::size_t r, Rng& rng, std::size_t channels = 1);

struct Perturbed {
  GridFunction xt, noise;
};
Perturbed perturb(const GridFunction& x0, double t, const CovarianceOperator& C, Rng& rng);

double vp_alpha(double t);     // e^{-t/2}
double vp_variance(double t);  // 1 - e^{-t}
double ve_sigma(double t);     // sqrt(e^t - 1)
double vp_time(double sigma);  // log(1 + sigma^2)

// Gaussian data diagonal in the Fourier basis: coefficient variances s_k
// (shared by channels) and an optional mean.
struct GaussianData {
  std::size_t resolution = 0, channels = 1;
  std::vector<double> s;
  GridFunction mean;  // empty means zero

  static GaussianData stationary(const CovarianceOperator& C, std::size_t r, std::size_t channels = 1);
  // The law of a gaussian-process synthetic source sampled on the r-grid.
  static GaussianData from_synthetic(const SyntheticDistributionSpec& spec, std::size_t r);

  void validate() const;
  std::vector<double> mean_coeffs() const;
  GridFunction sample(Rng& rng) const;
};

struct AnalyticScore {
  GridFunction score;           // (x - a E[X0|x]) / v
  GridFunction grad_log_p;      // Euclidean gradient of log p_t
  GridFunction posterior_mean;  // E[X0 | X_t = x]
};

// Exact quantities for X0 ~ data, VP frame at time t. Checks on every call that
// score == -C grad_log_p, which is score == -grad_log_p when C = I.
AnalyticScore analytic_score(const GridFunction& x, double t, const GaussianData& data, const CovarianceOperator& C);

// (denoised - x) / sigma^2, which equals C grad log p_sigma for an exact denoiser.
GridFunction score_from_denoiser(const GridFunction& x, double sigma, const GridFunction& denoised);

// Batched denoiser on [C, N, r, r] sharing one sigma.
using BatchDenoiser = std::function<Tensor(const Tensor& x, double sigma)>;

// Exact VE-frame posterior mean E[y | y + sigma C^{1/2} xi = x] for Gaussian data.
class GaussianDenoiser {
 public:
  GaussianDenoiser(GaussianData data, CovarianceOperator C);
  Tensor operator()(const Tensor& x, double sigma) const;
  GridFunction operator()(const GridFunction& x, double sigma) const;
  const GaussianData& data() const { return data_; }

 private:
  GaussianData data_;
  CovarianceOperator C_;
  std::vector<double> lambda_, mean_;
};

struct DiffusionSchedule {
  std::size_t steps = 18;
  double sigma_min = 0.002, sigma_max = 80.0, rho = 7.0;
  std::vector<double> sigmas;  // steps + 1 entries, last is 0

  static DiffusionSchedule make(std::size_t steps = 18, double sigma_min = 0.002, double sigma_max = 80.0,
                                double rho = 7.0);
  void validate() const;
};

struct SampleOptions {
  std::size_t channels = 1;
  std::size_t count = 1;
  const Tensor* init = nullptr;  // replaces sigma_0 C^{1/2} xi when given
  std::size_t* evaluations = nullptr;
};

// Deterministic second-order probability-flow integration; 2N - 1 denoiser calls.
Tensor sample_batch(const BatchDenoiser& denoiser, std::size_t r, const DiffusionSchedule& schedule,
                    const CovarianceOperator& C, Rng& rng, const SampleOptions& opt = {});
GridFunction sample(const BatchDenoiser& denoiser, std::size_t r, const DiffusionSchedule& schedule,
                    const CovarianceOperator& C, Rng& rng, std::size_t channels = 1);

// Euler-Maruyama on the VP reverse-time SDE for one Gaussian mode with data
// variance s and noise eigenvalue lambda, drift 1/2 Y + sign * score(t, Y).
// Returns the empirical variance at t = 0 over `paths` trajectories.
double reverse_sde_terminal_variance(double s, double lambda, double sign, double T, std::size_t steps,
                                     std::size_t paths, Rng& rng);

}  // namespace dfu
