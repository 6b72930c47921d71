#pragma once

// Denoising score matching over resolution mixtures, and fine-tuning on an
// upsampled resolution with spatial-kernel freezing.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dfu/grid.hpp"
#include "dfu/model.hpp"
#include "dfu/rng.hpp"

namespace dfu {

struct ResolutionMixture {
  std::map<std::size_t, double> weights;

  static ResolutionMixture uniform(const std::vector<std::size_t>& resolutions);
  static ResolutionMixture single(std::size_t r) { return {{{r, 1.0}}}; }
  // Fixed weights for some resolutions; the remaining ones, in descending
  // order, share what is left with geometric decay `ratio`.
  static ResolutionMixture weighted(const std::vector<std::size_t>& resolutions,
                                    const std::map<std::size_t, double>& fixed, double ratio = 0.5);

  // Weights sum to 1, are nonnegative; optional admissibility and dataset checks.
  void validate(const ModelSpec* spec = nullptr, const MultiResDataset* data = nullptr) const;
  std::vector<std::size_t> resolutions() const;
};

std::size_t draw_resolution(const ResolutionMixture& mix, Rng& rng);

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 32;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double p_mean = -1.2, p_std = 1.2;  // log sigma ~ N(p_mean, p_std^2)
  double ema_decay = 0.999;
  double clip_norm = 10.0;  // global gradient norm; 0 disables
  std::uint64_t seed = 0;
  bool fp32_gemm = true;
  bool deterministic = true;  // wall_time is logged as 0
  bool dry_run = false;       // draw and log resolutions only

  void validate() const;
};

// lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2
double loss_weight(double sigma);

struct AdamState {
  TensorMap m, v;
  std::uint64_t t = 0;
};

struct TrainState {
  ModelState model;
  TensorMap ema;
  AdamState adam;
  std::uint64_t step = 0;
  Rng mix_rng, data_rng;
};

TrainState init_train_state(ModelState model, std::uint64_t seed);

// Which parameters are held fixed. Parameters flagged in ModelState::frozen are
// always fixed. When conditional_resolution is nonzero, spatial kernels with
// k > 1 outside except_levels are additionally fixed on batches drawn at that
// resolution only.
struct FreezePolicy {
  std::size_t conditional_resolution = 0;
  std::set<std::size_t> except_levels;
};

struct MetricRecord {
  std::uint64_t step = 0;
  std::size_t resolution = 0;
  double loss = 0.0, lr = 0.0, wall_time = 0.0, grad_norm = 0.0;
};
std::string to_ndjson(const MetricRecord& r);

struct StepInfo {
  std::uint64_t step;
  std::size_t resolution;
  double loss;
  const TrainState& state;
  const std::set<std::string>& held;  // parameters not updated on this step
};
using StepHook = std::function<void(const StepInfo&)>;

struct TrainHooks {
  std::ostream* metrics = nullptr;  // NDJSON sink
  std::vector<MetricRecord>* records = nullptr;
  StepHook on_step;
};

// Per-item denoiser with one sigma per batch item.
using ItemDenoiser = std::function<Tensor(const Tensor& x, std::span<const double> sigmas)>;

struct DsmResult {
  double loss = 0.0;
  std::vector<double> sigmas;
  TensorMap grads;  // empty unless requested
};

// lambda(sigma) * mean over pixels and channels of (D(y + sigma xi; sigma) - y)^2,
// averaged over the batch y [C, N, r, r].
DsmResult dsm_loss(const ItemDenoiser& denoiser, const Tensor& y, Rng& rng, const TrainConfig& cfg);
DsmResult dsm_loss(const ModelState& m, const Tensor& y, Rng& rng, const TrainConfig& cfg, bool need_grads,
                   const TensorMap* params = nullptr);
// Contract-checked batch of grid functions (all at one resolution).
Tensor batch_tensor(std::span<const GridFunction> batch);

// Runs cfg.steps further steps on `state` (resuming from state.step).
void train(TrainState& state, const MultiResDataset& data, const ResolutionMixture& mix, const TrainConfig& cfg,
           const FreezePolicy& freeze = {}, const TrainHooks& hooks = {});

struct FinetuneConfig {
  std::size_t R = 0;
  double w_R = 0.2;
  std::set<std::size_t> except_levels;  // spatial kernels at these levels stay trainable
  bool batch_conditional = true;        // freeze only on batches drawn at R
  bool freeze_all = false;              // every parameter held fixed
  TrainConfig train;

  void validate() const;
};

// Mixture {R: w_R} plus (1 - w_R)/n on each of the n resolutions below R.
ResolutionMixture finetune_mixture(const MultiResDataset& data, const FinetuneConfig& cfg);

// `data` must already contain level R (see with_upsampled_level). Starts from
// the given weights with fresh optimizer moments and EMA = weights.
TrainState finetune(const ModelState& pretrained, const MultiResDataset& data, const FinetuneConfig& cfg,
                    const TrainHooks& hooks = {});

}  // namespace dfu
