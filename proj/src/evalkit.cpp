#include "dfu/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>

#include "dfu/diffusion.hpp"
#include "dfu/errors.hpp"
#include "dfu/fft.hpp"
#include "dfu/kernels.hpp"

namespace dfu {

// ---- spectra ----

double RadialSpectrum::total() const {
  double s = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) s += power[k] * static_cast<double>(count[k]);
  return s;
}

RadialSpectrum radial_spectrum(const GridFunction& g) {
  const std::size_t r = g.resolution(), hc = fft::half_cols(r), C = g.channels();
  if (r == 0) throw ShapeError("radial_spectrum: empty grid function");
  std::vector<cplx> X(C * r * hc);
  fft::rfft2(g.values(), X, r, C);
  RadialSpectrum s;
  s.resolution = r;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      const int m1 = fft::signed_freq(i, r), m2 = fft::signed_freq(j, r);
      const double rad = std::sqrt(static_cast<double>(m1 * m1 + m2 * m2));
      const auto bin = static_cast<std::size_t>(std::lround(rad));
      if (bin >= s.power.size()) {
        s.power.resize(bin + 1, 0.0);
        s.radius.resize(bin + 1, 0.0);
        s.count.resize(bin + 1, 0);
      }
      double p = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        // full-spectrum entry (i, j) through Hermitian symmetry
        const cplx z = j < hc ? X[(c * r + i) * hc + j] : std::conj(X[(c * r + (r - i) % r) * hc + (r - j)]);
        p += std::norm(z);
      }
      s.power[bin] += p / static_cast<double>(C);
      s.radius[bin] += rad;
      s.count[bin] += 1;
    }
  for (std::size_t k = 0; k < s.power.size(); ++k)
    if (s.count[k]) {
      s.power[k] /= static_cast<double>(s.count[k]);
      s.radius[k] /= static_cast<double>(s.count[k]);
    }
  return s;
}

RadialSpectrum mean_spectrum(std::span<const GridFunction> gs) {
  if (gs.empty()) throw ConfigError("mean_spectrum: no samples");
  RadialSpectrum acc = radial_spectrum(gs.front());
  for (std::size_t i = 1; i < gs.size(); ++i) {
    auto s = radial_spectrum(gs[i]);
    if (s.resolution != acc.resolution) throw ShapeError("mean_spectrum: samples differ in resolution");
    for (std::size_t k = 0; k < acc.power.size(); ++k) acc.power[k] += s.power[k];
  }
  for (auto& p : acc.power) p /= static_cast<double>(gs.size());
  return acc;
}

double band_error(const RadialSpectrum& a, const RadialSpectrum& b, std::size_t lo, std::size_t hi) {
  hi = std::min({hi, a.power.size() - 1, b.power.size() - 1});
  double diff = 0.0, ref = 0.0;
  for (std::size_t k = lo; k <= hi; ++k) {
    const double w = static_cast<double>(b.count[k]);
    diff += w * std::abs(a.power[k] - b.power[k]);
    ref += w * b.power[k];
  }
  if (!(ref > 0.0)) throw ConfigError("band_error: reference has no energy in bins " + std::to_string(lo) + ".." +
                                      std::to_string(hi));
  return diff / ref;
}

SpectrumScores spectrum_scores(const RadialSpectrum& generated, const RadialSpectrum& reference, std::size_t r_train) {
  SpectrumScores s;
  s.split_bin = (r_train / 2) / 4;
  s.coherence = band_error(generated, reference, 0, s.split_bin);
  s.fidelity = band_error(generated, reference, s.split_bin + 1, static_cast<std::size_t>(-1));
  return s;
}

// ---- features ----

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "flatten-lowres") return FeatureKind::flatten_lowres;
  if (s == "fixed-random-conv") return FeatureKind::fixed_random_conv;
  throw ConfigError("unknown feature extractor '" + s + "' (expected flatten-lowres or fixed-random-conv)");
}

std::string to_string(FeatureKind k) {
  return k == FeatureKind::flatten_lowres ? "flatten-lowres" : "fixed-random-conv";
}

namespace {

constexpr std::size_t kLowres = 16;
constexpr std::size_t kConvInput = 32;
constexpr std::size_t kConvWidths[] = {16, 32, 64};

GridFunction to_resolution(const GridFunction& g, std::size_t r) {
  if (g.resolution() == r) return g;
  return resample(g, r, g.resolution() > r ? ResampleMethod::area : ResampleMethod::bilinear);
}

std::vector<double> pool(const std::vector<double>& x, std::size_t C, std::size_t r, std::size_t f) {
  const std::size_t ro = r / f;
  std::vector<double> y(C * ro * ro, 0.0);
  const double w = 1.0 / static_cast<double>(f * f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) y[(c * ro + i / f) * ro + j / f] += w * x[(c * r + i) * r + j];
  return y;
}

}  // namespace

FeatureExtractor::FeatureExtractor(FeatureKind kind, std::size_t channels, std::uint64_t seed)
    : kind_(kind), channels_(channels), seed_(seed) {
  if (channels == 0) throw ConfigError("feature extractor: channels must be positive");
  if (kind == FeatureKind::fixed_random_conv) {
    Rng rng(splitmix64(seed ^ 0x66656174ULL));
    std::size_t cin = channels;
    for (std::size_t cout : kConvWidths) {
      Tensor w({cout, cin, 3, 3});
      const double sd = std::sqrt(2.0 / static_cast<double>(cin * 9));
      for (auto& v : w.vec()) v = sd * rng.normal();
      weights_.push_back(std::move(w));
      cin = cout;
    }
  }
}

std::size_t FeatureExtractor::dim() const {
  return kind_ == FeatureKind::flatten_lowres ? channels_ * kLowres * kLowres : 256;
}

std::string FeatureExtractor::descriptor() const {
  return to_string(kind_) + (kind_ == FeatureKind::fixed_random_conv ? "/seed=" + std::to_string(seed_) : "") +
         "/dim=" + std::to_string(dim());
}

std::vector<double> FeatureExtractor::operator()(const GridFunction& g) const {
  if (g.channels() != channels_)
    throw ShapeError("feature extractor: expected " + std::to_string(channels_) + " channels, got " +
                     std::to_string(g.channels()));
  if (kind_ == FeatureKind::flatten_lowres) {
    const auto low = to_resolution(g, kLowres);
    return {low.values().begin(), low.values().end()};
  }
  const auto in = to_resolution(g, kConvInput);
  std::vector<double> x(in.values().begin(), in.values().end());
  std::size_t cin = channels_, r = kConvInput;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const std::size_t cout = weights_[l].dim(0);
    std::vector<double> y(cout * r * r);
    kernels::conv2d_forward(x.data(), weights_[l].data(), y.data(), kernels::ConvDims{cin, cout, 1, r, r, 3});
    for (auto& t : y) t = std::max(t, 0.0);
    const std::size_t f = l + 1 < weights_.size() ? 2 : r / 2;
    x = pool(y, cout, r, f);
    r /= f;
    cin = cout;
  }
  return x;
}

FeatureSet extract(const FeatureExtractor& fx, std::span<const GridFunction> gs) {
  FeatureSet out;
  out.reserve(gs.size());
  for (const auto& g : gs) out.push_back(fx(g));
  return out;
}

// ---- Fréchet distance ----

namespace {

void moments(const FeatureSet& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const std::size_t n = f.size(), d = f.front().size();
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (f[i].size() != d) throw ShapeError("frechet: ragged feature set");
    for (std::size_t j = 0; j < d; ++j) X(i, j) = f[i][j];
  }
  mu = X.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - mu.transpose();
  cov = (Xc.transpose() * Xc) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
  if (n <= d) cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

double frechet_gaussian(const FeatureSet& a, const FeatureSet& b) {
  if (a.empty() || b.empty()) throw ConfigError("frechet: empty feature set");
  if (a.front().size() != b.front().size())
    throw ShapeError("frechet: feature dimensions differ (" + std::to_string(a.front().size()) + " vs " +
                     std::to_string(b.front().size()) + ")");
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd Sa, Sb;
  moments(a, ma, Sa);
  moments(b, mb, Sb);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(Sa);
  Eigen::VectorXd sq = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd Ra = ea.eigenvectors() * sq.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd M = Ra * Sb * Ra;
  M = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(M, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (ma - mb).squaredNorm() + Sa.trace() + Sb.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

// ---- score error ----

std::vector<double> default_probe_sigmas() { return {0.05, 0.1, 0.2, 0.5, 1.0, 2.0}; }

std::vector<Probe> make_probes(const SyntheticDistributionSpec& source, std::size_t r, std::span<const double> sigmas,
                               std::size_t per_sigma, Rng& rng) {
  std::vector<Probe> out;
  for (double s : sigmas)
    for (std::size_t i = 0; i < per_sigma; ++i) {
      GridFunction y = sample_on_grid(source, r, rng.fork());
      std::vector<double> v(y.values().begin(), y.values().end());
      for (auto& t : v) t += s * rng.normal();
      out.push_back({GridFunction(y.channels(), r, std::move(v)), s});
    }
  return out;
}

ScoreErrorReport score_error(const ItemDenoiser& model, const ItemDenoiser& oracle, std::span<const Probe> probes,
                             std::size_t batch) {
  ScoreErrorReport rep;
  if (batch == 0) batch = 1;
  for (std::size_t start = 0; start < probes.size(); start += batch) {
    const std::size_t n = std::min(batch, probes.size() - start);
    std::vector<GridFunction> xs;
    std::vector<double> sig;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(probes[start + i].x);
      sig.push_back(probes[start + i].sigma);
    }
    const Tensor x = batch_tensor(xs);
    const Tensor dm = model(x, sig), dor = oracle(x, sig);
    const std::size_t C = x.dim(0), N = x.dim(1), P = x.dim(2) * x.dim(3);
    for (std::size_t k = 0; k < N; ++k) {
      double num = 0.0, den = 0.0;
      const double inv = 1.0 / (sig[k] * sig[k]);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
          const std::size_t i = (c * N + k) * P + p;
          const double so = (dor[i] - x[i]) * inv, d = (dm[i] - dor[i]) * inv;
          num += d * d;
          den += so * so;
        }
      if (den == 0.0) {
        ++rep.skipped;
        continue;
      }
      rep.per_probe.push_back(std::sqrt(num / den));
    }
  }
  rep.used = rep.per_probe.size();
  for (double e : rep.per_probe) rep.mean += e;
  if (rep.used) rep.mean /= static_cast<double>(rep.used);
  return rep;
}

ItemDenoiser model_denoiser(const ModelState& m, const TensorMap* params) {
  return [&m, params](const Tensor& x, std::span<const double> sigmas) { return denoise_batch(m, x, sigmas, params); };
}

ItemDenoiser gaussian_item_denoiser(const SyntheticDistributionSpec& source, std::size_t r) {
  auto D = std::make_shared<GaussianDenoiser>(GaussianData::from_synthetic(source, r), CovarianceOperator::white());
  return [D](const Tensor& x, std::span<const double> sigmas) {
    const std::size_t C = x.dim(0), N = x.dim(1), P = x.dim(2) * x.dim(3);
    if (sigmas.size() != N) throw ShapeError("denoiser: one sigma per item required");
    Tensor out(x.shape());
    for (std::size_t n = 0; n < N; ++n) {
      Tensor item({C, 1, x.dim(2), x.dim(3)});
      for (std::size_t c = 0; c < C; ++c) std::copy_n(x.data() + (c * N + n) * P, P, item.data() + c * P);
      Tensor d = (*D)(item, sigmas[n]);
      for (std::size_t c = 0; c < C; ++c) std::copy_n(d.data() + c * P, P, out.data() + (c * N + n) * P);
    }
    return out;
  };
}

BatchDenoiser batch_model_denoiser(const ModelState& m, const TensorMap* params) {
  return [&m, params](const Tensor& x, double sigma) {
    const std::size_t C = x.dim(0), N = x.dim(1), r = x.dim(2), P = r * r;
    const std::size_t chunk = std::max<std::size_t>(1, 32 * 48 * 48 / P);
    if (N <= chunk) return denoise_batch(m, x, std::vector<double>(N, sigma), params);
    Tensor out(x.shape());
    for (std::size_t s = 0; s < N; s += chunk) {
      const std::size_t n = std::min(chunk, N - s);
      Tensor part({C, n, r, r});
      for (std::size_t c = 0; c < C; ++c) std::copy_n(x.data() + (c * N + s) * P, n * P, part.data() + c * n * P);
      Tensor d = denoise_batch(m, part, std::vector<double>(n, sigma), params);
      for (std::size_t c = 0; c < C; ++c) std::copy_n(d.data() + c * n * P, n * P, out.data() + (c * N + s) * P);
    }
    return out;
  };
}

std::vector<GridFunction> generate(const BatchDenoiser& denoiser, std::size_t r, std::size_t count,
                                   std::size_t channels, const DiffusionSchedule& schedule,
                                   const CovarianceOperator& C, Rng& rng) {
  SampleOptions opt;
  opt.channels = channels;
  opt.count = count;
  return unstack(sample_batch(denoiser, r, schedule, C, rng, opt));
}

std::string report_line(const std::string& metric, const std::string& descriptor, std::size_t samples_a,
                        std::size_t samples_b, double value) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"metric\":\"" << metric << "\",\"extractor\":\"" << descriptor << "\",\"samples_a\":" << samples_a
     << ",\"samples_b\":" << samples_b << ",\"value\":" << value << "}";
  return os.str();
}

}  // namespace dfu
