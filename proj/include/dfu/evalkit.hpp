#pragma once

// Radial power spectra, Fréchet distance between fitted Gaussians over
// pluggable features, and score error against an oracle denoiser.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfu/diffusion.hpp"
#include "dfu/grid.hpp"
#include "dfu/trainer.hpp"

namespace dfu {

struct RadialSpectrum {
  std::size_t resolution = 0;
  std::vector<double> radius;      // mean |m| of the modes in each bin
  std::vector<double> power;       // mean |X_m|^2 over the bin, averaged over channels
  std::vector<std::size_t> count;  // modes per bin

  // sum power * count; equals mean(g^2) by Parseval.
  double total() const;
};

// Bin k holds the modes with round(|m|) = k, so bin 0 is the DC term alone.
RadialSpectrum radial_spectrum(const GridFunction& g);
RadialSpectrum mean_spectrum(std::span<const GridFunction> gs);

// sum_k n_k |P_a - P_b| / sum_k n_k P_b over bins lo..hi (inclusive, clipped to both spectra).
double band_error(const RadialSpectrum& a, const RadialSpectrum& b, std::size_t lo, std::size_t hi);

struct SpectrumScores {
  double coherence = 0.0;  // bins <= nyquist_train / 4
  double fidelity = 0.0;   // bins above
  std::size_t split_bin = 0;
};
SpectrumScores spectrum_scores(const RadialSpectrum& generated, const RadialSpectrum& reference, std::size_t r_train);

enum class FeatureKind { flatten_lowres, fixed_random_conv };
FeatureKind feature_kind_from_string(const std::string& s);
std::string to_string(FeatureKind k);

class FeatureExtractor {
 public:
  FeatureExtractor(FeatureKind kind, std::size_t channels, std::uint64_t seed = 0);

  std::vector<double> operator()(const GridFunction& g) const;
  std::size_t dim() const;
  FeatureKind kind() const { return kind_; }
  std::string descriptor() const;

 private:
  FeatureKind kind_;
  std::size_t channels_;
  std::uint64_t seed_;
  std::vector<Tensor> weights_;
};

using FeatureSet = std::vector<std::vector<double>>;
FeatureSet extract(const FeatureExtractor& fx, std::span<const GridFunction> gs);

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clipped at 0.
double frechet_gaussian(const FeatureSet& a, const FeatureSet& b);

struct Probe {
  GridFunction x;
  double sigma;
};

// Probes y + sigma xi with y from `source` (white per-pixel noise), `per_sigma` each.
std::vector<Probe> make_probes(const SyntheticDistributionSpec& source, std::size_t r, std::span<const double> sigmas,
                               std::size_t per_sigma, Rng& rng);
std::vector<double> default_probe_sigmas();

struct ScoreErrorReport {
  double mean = 0.0;
  std::size_t used = 0, skipped = 0;
  std::vector<double> per_probe;
};

// Mean over probes of ||s_model - s_oracle|| / ||s_oracle|| with s = (D - x) / sigma^2.
ScoreErrorReport score_error(const ItemDenoiser& model, const ItemDenoiser& oracle, std::span<const Probe> probes,
                             std::size_t batch = 16);

// Denoisers for a trained model (optionally with substitute weights) and a Gaussian law.
ItemDenoiser model_denoiser(const ModelState& m, const TensorMap* params = nullptr);
ItemDenoiser gaussian_item_denoiser(const SyntheticDistributionSpec& source, std::size_t r);

// One sigma for the whole batch; evaluated in chunks so graph memory stays bounded at large r.
BatchDenoiser batch_model_denoiser(const ModelState& m, const TensorMap* params = nullptr);

// `count` samples at resolution r from the deterministic sampler.
std::vector<GridFunction> generate(const BatchDenoiser& denoiser, std::size_t r, std::size_t count,
                                   std::size_t channels, const DiffusionSchedule& schedule,
                                   const CovarianceOperator& C, Rng& rng);

std::string report_line(const std::string& metric, const std::string& descriptor, std::size_t samples_a,
                        std::size_t samples_b, double value);

}  // namespace dfu
