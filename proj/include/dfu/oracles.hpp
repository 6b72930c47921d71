#pragma once

// Executable checks of the diffusion formalism against closed-form Gaussian laws.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dfu {

struct OracleCheck {
  std::string name;
  double value = 0.0;
  std::string criterion;  // human-readable bound
  bool passed = false;
  std::string detail;
};

// Largest |s + C grad log p| / max|s| over random Gaussian problems, with C = I
// (literal identity s = -grad log p) and with trace-class C.
OracleCheck oracle_score_sign(std::uint64_t seed, std::size_t trials = 40);

// Worst relative error of the empirical KL-noise coefficient variances against
// lambda_k (r = 8, alpha = 2, n = 16 by default).
OracleCheck oracle_kl_spectrum(std::uint64_t seed, std::size_t draws = 10000);

// Heun error ratios e(N)/e(2N) over N in {9, 18, 36} for a single deterministic mode.
struct ConvergenceReport {
  std::vector<std::size_t> steps;
  std::vector<double> errors;
  std::vector<double> ratios;
};
ConvergenceReport heun_convergence(double s = 1.0);
// Uses s = sigma_data^2.
OracleCheck oracle_heun_order();

// Terminal variance of the 18-step sampler with the exact denoiser, stationary
// target s_k = lambda_k at r = 8, relative to the target (pooled over modes).
OracleCheck oracle_heun_variance(std::uint64_t seed, std::size_t runs = 4096);

// Reverse-time SDE: which drift sign reproduces the target variance.
OracleCheck oracle_reverse_sde_sign(std::uint64_t seed);

std::vector<OracleCheck> oracle_suite(std::uint64_t seed);

}  // namespace dfu
