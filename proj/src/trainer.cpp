#include "dfu/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dfu/errors.hpp"
#include "dfu/kernels.hpp"

namespace dfu {

// ---- mixtures ----

ResolutionMixture ResolutionMixture::uniform(const std::vector<std::size_t>& resolutions) {
  if (resolutions.empty()) throw ConfigError("mixture: no resolutions");
  ResolutionMixture m;
  for (auto r : resolutions) m.weights[r] = 1.0 / static_cast<double>(resolutions.size());
  return m;
}

ResolutionMixture ResolutionMixture::weighted(const std::vector<std::size_t>& resolutions,
                                              const std::map<std::size_t, double>& fixed, double ratio) {
  ResolutionMixture m;
  double used = 0.0;
  for (const auto& [r, w] : fixed) {
    if (std::find(resolutions.begin(), resolutions.end(), r) == resolutions.end())
      throw ConfigError("mixture: fixed weight for resolution " + std::to_string(r) + " not in the resolution list");
    m.weights[r] = w;
    used += w;
  }
  std::vector<std::size_t> rest;
  for (auto r : resolutions)
    if (!fixed.count(r)) rest.push_back(r);
  std::sort(rest.rbegin(), rest.rend());
  if (!rest.empty()) {
    if (!(ratio > 0.0)) throw ConfigError("mixture: decay ratio must be positive");
    double total = 0.0, g = 1.0;
    for (std::size_t i = 0; i < rest.size(); ++i, g *= ratio) total += g;
    g = 1.0;
    for (auto r : rest) {
      m.weights[r] = (1.0 - used) * g / total;
      g *= ratio;
    }
  }
  m.validate();
  return m;
}

void ResolutionMixture::validate(const ModelSpec* spec, const MultiResDataset* data) const {
  if (weights.empty()) throw ConfigError("mixture: no resolutions");
  double sum = 0.0;
  for (const auto& [r, w] : weights) {
    if (!(w >= 0.0)) throw ConfigError("mixture: weight for resolution " + std::to_string(r) + " is negative");
    sum += w;
    if (spec) check_resolution(*spec, r);
    if (data && !data->has_resolution(r))
      throw ConfigError("mixture: resolution " + std::to_string(r) + " is not present in the dataset");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mixture: weights sum to " + std::to_string(sum) + ", not 1");
}

std::vector<std::size_t> ResolutionMixture::resolutions() const {
  std::vector<std::size_t> out;
  for (const auto& [r, w] : weights) out.push_back(r);
  return out;
}

std::size_t draw_resolution(const ResolutionMixture& mix, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (const auto& [r, w] : mix.weights) {
    if (w <= 0.0) continue;
    acc += w;
    last = r;
    if (u < acc) return r;
  }
  return last;
}

// ---- configuration ----

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta1/beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(p_std > 0.0)) throw ConfigError("train.p_std must be positive");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("train.ema_decay must be in [0, 1]");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be nonnegative");
}

double loss_weight(double sigma) {
  const double sd = Precond::sigma_data;
  return (sigma * sigma + sd * sd) / (sigma * sd * sigma * sd);
}

TrainState init_train_state(ModelState model, std::uint64_t seed) {
  TrainState s;
  s.ema = model.params;
  for (const auto& [name, t] : model.params) {
    s.adam.m[name] = Tensor(t.shape());
    s.adam.v[name] = Tensor(t.shape());
  }
  s.model = std::move(model);
  Rng root(splitmix64(seed ^ 0x7261696eULL));
  s.mix_rng = root.fork();
  s.data_rng = root.fork();
  return s;
}

std::string to_ndjson(const MetricRecord& r) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"step\":" << r.step << ",\"resolution\":" << r.resolution << ",\"loss\":" << r.loss << ",\"lr\":" << r.lr
     << ",\"grad_norm\":" << r.grad_norm << ",\"wall_time\":" << r.wall_time << "}";
  return os.str();
}

// ---- loss ----

Tensor batch_tensor(std::span<const GridFunction> batch) {
  if (batch.empty()) throw ShapeError("batch is empty");
  for (const auto& g : batch)
    if (g.resolution() != batch.front().resolution() || g.channels() != batch.front().channels())
      throw ShapeError("batch mixes resolutions " + std::to_string(batch.front().resolution()) + " and " +
                       std::to_string(g.resolution()) + "; one resolution per batch is required");
  return stack(batch);
}

namespace {

struct Noised {
  Tensor x;
  std::vector<double> sigmas;
};

// sigma per item first, then per-pixel noise, item by item.
Noised add_noise(const Tensor& y, Rng& rng, const TrainConfig& cfg) {
  if (y.rank() != 4 || y.dim(2) != y.dim(3) || y.dim(1) == 0)
    throw ShapeError("dsm_loss: expected a nonempty [C, N, r, r] batch, got " + to_string(y.shape()));
  const std::size_t C = y.dim(0), N = y.dim(1), P = y.dim(2) * y.dim(3);
  Noised out{y, std::vector<double>(N)};
  for (std::size_t n = 0; n < N; ++n) {
    out.sigmas[n] = std::exp(cfg.p_mean + cfg.p_std * rng.normal());
    for (std::size_t c = 0; c < C; ++c) {
      double* px = out.x.data() + (c * N + n) * P;
      for (std::size_t p = 0; p < P; ++p) px[p] += out.sigmas[n] * rng.normal();
    }
  }
  return out;
}

double weighted_error(const Tensor& D, const Tensor& y, const std::vector<double>& sigmas, Tensor* dD) {
  const std::size_t C = y.dim(0), N = y.dim(1), P = y.dim(2) * y.dim(3);
  const double per_item = static_cast<double>(C * P);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double w = loss_weight(sigmas[n]) / (per_item * static_cast<double>(N));
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (c * N + n) * P + p;
        const double e = D[i] - y[i];
        acc += e * e;
        if (dD) (*dD)[i] = 2.0 * w * e;
      }
    loss += w * acc;
  }
  return loss;
}

}  // namespace

DsmResult dsm_loss(const ItemDenoiser& denoiser, const Tensor& y, Rng& rng, const TrainConfig& cfg) {
  auto noised = add_noise(y, rng, cfg);
  const Tensor D = denoiser(noised.x, noised.sigmas);
  if (D.shape() != y.shape()) throw ShapeError("dsm_loss: denoiser changed the batch shape");
  DsmResult res;
  res.loss = weighted_error(D, y, noised.sigmas, nullptr);
  res.sigmas = std::move(noised.sigmas);
  return res;
}

DsmResult dsm_loss(const ModelState& m, const Tensor& y, Rng& rng, const TrainConfig& cfg, bool need_grads,
                   const TensorMap* params) {
  auto noised = add_noise(y, rng, cfg);
  const std::size_t C = y.dim(0), N = y.dim(1), r = y.dim(2), P = r * r;
  if (C != m.spec.image_channels)
    throw ShapeError("dsm_loss: batch has " + std::to_string(C) + " channels, model expects " +
                     std::to_string(m.spec.image_channels));
  NetGraph net;
  build_net(net, m.spec, r, N);
  Tensor xin = noised.x;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const double ci = Precond::c_in(noised.sigmas[n]);
      for (std::size_t p = 0; p < P; ++p) xin[(c * N + n) * P + p] *= ci;
    }
  net.graph.forward({{"x", xin}, {"noise", noise_features(m.spec, noised.sigmas)}}, params ? *params : m.params);
  const Tensor& F = net.graph.value(net.out);
  Tensor D(y.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const double cs = Precond::c_skip(noised.sigmas[n]), co = Precond::c_out(noised.sigmas[n]);
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (c * N + n) * P + p;
        D[i] = cs * noised.x[i] + co * F[i];
      }
    }
  DsmResult res;
  Tensor dD(y.shape());
  res.loss = weighted_error(D, y, noised.sigmas, need_grads ? &dD : nullptr);
  if (need_grads) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t n = 0; n < N; ++n) {
        const double co = Precond::c_out(noised.sigmas[n]);
        for (std::size_t p = 0; p < P; ++p) dD[(c * N + n) * P + p] *= co;
      }
    net.graph.backward(net.out, dD);
    res.grads = net.graph.param_grads();
  }
  res.sigmas = std::move(noised.sigmas);
  return res;
}

// ---- training loop ----

namespace {

double params_norm(const TensorMap& p) {
  double s = 0.0;
  for (const auto& [name, t] : p)
    for (double v : t.vec()) s += v * v;
  return std::sqrt(s);
}

std::set<std::string> held_parameters(const ModelState& m, const FreezePolicy& freeze, std::size_t r) {
  std::set<std::string> held;
  for (const auto& [name, f] : m.frozen)
    if (f) held.insert(name);
  if (freeze.conditional_resolution && r == freeze.conditional_resolution) {
    for (const auto& [name, info] : m.info) {
      if (info.kind != ParamKind::spatial || info.shape.at(2) <= 1) continue;
      if (freeze.except_levels.count(static_cast<std::size_t>(info.level))) continue;
      held.insert(name);
    }
  }
  return held;
}

}  // namespace

void train(TrainState& state, const MultiResDataset& data, const ResolutionMixture& mix, const TrainConfig& cfg,
           const FreezePolicy& freeze, const TrainHooks& hooks) {
  cfg.validate();
  mix.validate(&state.model.spec, &data);
  if (data.size() == 0) throw ConfigError("train: dataset is empty");
  if (data.channels != state.model.spec.image_channels)
    throw ConfigError("train: dataset has " + std::to_string(data.channels) + " channels, model expects " +
                      std::to_string(state.model.spec.image_channels));
  kernels::GemmPrecisionScope precision(cfg.fp32_gemm ? kernels::GemmPrecision::f32 : kernels::GemmPrecision::f64);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t it = 0; it < cfg.steps; ++it) {
    const std::size_t r = draw_resolution(mix, state.mix_rng);
    MetricRecord rec;
    rec.step = state.step + 1;
    rec.resolution = r;
    rec.lr = cfg.lr;
    std::set<std::string> held;

    if (!cfg.dry_run) {
      std::vector<GridFunction> items;
      items.reserve(cfg.batch);
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        auto idx = static_cast<std::size_t>(state.data_rng.uniform() * static_cast<double>(data.size()));
        items.push_back(data.at(std::min(idx, data.size() - 1), r));
      }
      const Tensor y = batch_tensor(items);
      auto res = dsm_loss(state.model, y, state.data_rng, cfg, true);
      held = held_parameters(state.model, freeze, r);

      double g2 = 0.0;
      bool finite = std::isfinite(res.loss);
      for (const auto& [name, g] : res.grads) {
        if (held.count(name)) continue;
        for (double v : g.vec()) g2 += v * v;
      }
      finite = finite && std::isfinite(g2);
      if (!finite) {
        std::ostringstream os;
        os << "non-finite loss or gradient at step " << rec.step << " (resolution " << r << ", loss " << res.loss
           << "); sigmas:";
        for (double s : res.sigmas) os << ' ' << s;
        os << "; parameter norm " << params_norm(state.model.params);
        throw TrainingError(os.str());
      }
      const double gnorm = std::sqrt(g2);
      const double clip = (cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm) ? cfg.clip_norm / gnorm : 1.0;

      state.adam.t += 1;
      const double t = static_cast<double>(state.adam.t);
      const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
      for (auto& [name, p] : state.model.params) {
        if (held.count(name)) continue;
        const Tensor& g = res.grads.at(name);
        Tensor& m = state.adam.m.at(name);
        Tensor& v = state.adam.v.at(name);
        Tensor& e = state.ema.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g[i] * clip;
          m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
          v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
          p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
          e[i] = cfg.ema_decay == 0.0 ? p[i] : cfg.ema_decay * e[i] + (1.0 - cfg.ema_decay) * p[i];
        }
      }
      rec.loss = res.loss;
      rec.grad_norm = gnorm;
    }

    state.step += 1;
    if (!cfg.deterministic) rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.metrics) *hooks.metrics << to_ndjson(rec) << '\n';
    if (hooks.records) hooks.records->push_back(rec);
    if (hooks.on_step) hooks.on_step(StepInfo{rec.step, r, rec.loss, state, held});
  }
  if (hooks.metrics) hooks.metrics->flush();
}

// ---- fine-tuning ----

void FinetuneConfig::validate() const {
  if (R == 0) throw ConfigError("finetune.R must be set");
  if (!(w_R >= 0.0 && w_R <= 1.0)) throw ConfigError("finetune.w_R must be in [0, 1]");
  train.validate();
}

ResolutionMixture finetune_mixture(const MultiResDataset& data, const FinetuneConfig& cfg) {
  std::vector<std::size_t> base;
  for (auto r : data.resolutions)
    if (r < cfg.R) base.push_back(r);
  if (base.empty()) throw ConfigError("finetune: no pre-training resolutions below R");
  ResolutionMixture mix;
  mix.weights[cfg.R] = cfg.w_R;
  if (cfg.w_R < 1.0)
    for (auto r : base) mix.weights[r] = (1.0 - cfg.w_R) / static_cast<double>(base.size());
  return mix;
}

TrainState finetune(const ModelState& pretrained, const MultiResDataset& data, const FinetuneConfig& cfg,
                    const TrainHooks& hooks) {
  cfg.validate();
  std::size_t r_max = 0;
  for (auto r : data.resolutions)
    if (r != cfg.R) r_max = std::max(r_max, r);
  if (cfg.R <= r_max)
    throw ConfigError("finetune: R=" + std::to_string(cfg.R) + " must exceed the largest pre-training resolution " +
                      std::to_string(r_max));
  if (!data.has_resolution(cfg.R))
    throw ConfigError("finetune: dataset has no level at R=" + std::to_string(cfg.R) + "; upsample it first");
  check_resolution(pretrained.spec, cfg.R);

  ModelState m = pretrained;
  FreezePolicy policy;
  if (cfg.freeze_all) {
    for (const auto& [name, t] : m.params) m.frozen[name] = true;
  } else if (cfg.batch_conditional) {
    policy.conditional_resolution = cfg.R;
    policy.except_levels = cfg.except_levels;
    for (auto l : cfg.except_levels)
      if (l >= m.spec.levels) throw ConfigError("finetune: except level " + std::to_string(l) + " out of range");
  } else {
    m = freeze_spatial(std::move(m), cfg.except_levels);
  }
  TrainState state = init_train_state(std::move(m), cfg.train.seed);
  train(state, data, finetune_mixture(data, cfg), cfg.train, policy, hooks);
  return state;
}

}  // namespace dfu
