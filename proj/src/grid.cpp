#include "dfu/grid.hpp"

#include <algorithm>
#include <cmath>

#include "dfu/errors.hpp"
#include "dfu/fft.hpp"
#include "dfu/image_io.hpp"

namespace dfu {

GridFunction::GridFunction(std::size_t channels, std::size_t resolution, std::vector<double> values)
    : channels_(channels), r_(resolution) {
  if (channels == 0 || resolution == 0) throw ConfigError("GridFunction needs positive channels and resolution");
  if (values.size() != channels * resolution * resolution)
    throw ShapeError("GridFunction: " + std::to_string(values.size()) + " values for " + std::to_string(channels) +
                     "x" + std::to_string(resolution) + "x" + std::to_string(resolution));
  if (!all_finite(values)) throw ConfigError("GridFunction: non-finite value");
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

GridFunction GridFunction::constant(std::size_t channels, std::size_t r, double v) {
  return GridFunction(channels, r, std::vector<double>(channels * r * r, v));
}

GridFunction GridFunction::from_function(std::size_t channels, std::size_t r,
                                         const std::function<double(std::size_t, double, double)>& f) {
  std::vector<double> v(channels * r * r);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) v[(c * r + i) * r + j] = f(c, node(j, r), node(i, r));
  return GridFunction(channels, r, std::move(v));
}

bool GridFunction::operator==(const GridFunction& o) const {
  if (channels_ != o.channels_ || r_ != o.r_) return false;
  const auto a = values(), b = o.values();
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

namespace {

void require_same(const GridFunction& a, const GridFunction& b) {
  if (a.channels() != b.channels() || a.resolution() != b.resolution())
    throw ShapeError("GridFunction arithmetic on mismatched shapes");
}

template <class Op>
GridFunction zip(const GridFunction& a, const GridFunction& b, Op op) {
  require_same(a, b);
  std::vector<double> v(a.size());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = op(x[i], y[i]);
  return GridFunction(a.channels(), a.resolution(), std::move(v));
}

// Row-stochastic 1D map from rs source cells to rt target cells.
struct Weights1D {
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

Weights1D bilinear_weights(std::size_t rs, std::size_t rt) {
  Weights1D w;
  w.rows.resize(rt);
  for (std::size_t t = 0; t < rt; ++t) {
    const double s = (static_cast<double>(t) + 0.5) * static_cast<double>(rs) / static_cast<double>(rt) - 0.5;
    const double fl = std::floor(s);
    const double frac = s - fl;
    const auto i0 = static_cast<std::ptrdiff_t>(fl);
    auto clampi = [&](std::ptrdiff_t i) {
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(rs) - 1));
    };
    w.rows[t] = {{clampi(i0), 1.0 - frac}, {clampi(i0 + 1), frac}};
  }
  return w;
}

Weights1D area_weights(std::size_t rs, std::size_t rt) {
  Weights1D w;
  w.rows.resize(rt);
  // Work in units of 1/(rs*rt) so that cell boundaries are integers.
  for (std::size_t t = 0; t < rt; ++t) {
    const std::size_t lo = t * rs, hi = (t + 1) * rs;
    for (std::size_t s = lo / rt; s < rs && s * rt < hi; ++s) {
      const std::size_t a = std::max(lo, s * rt), b = std::min(hi, (s + 1) * rt);
      if (b > a) w.rows[t].push_back({s, static_cast<double>(b - a) / static_cast<double>(rs)});
    }
  }
  return w;
}

GridFunction separable(const GridFunction& g, std::size_t rt, const Weights1D& w) {
  const std::size_t rs = g.resolution(), C = g.channels();
  const auto src = g.values();
  std::vector<double> tmp(C * rs * rt), out(C * rt * rt);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < rs; ++i)
      for (std::size_t j = 0; j < rt; ++j) {
        double s = 0.0;
        for (auto [k, a] : w.rows[j]) s += a * src[(c * rs + i) * rs + k];
        tmp[(c * rs + i) * rt + j] = s;
      }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < rt; ++i)
      for (std::size_t j = 0; j < rt; ++j) {
        double s = 0.0;
        for (auto [k, a] : w.rows[i]) s += a * tmp[(c * rs + k) * rt + j];
        out[(c * rt + i) * rt + j] = s;
      }
  return GridFunction(C, rt, std::move(out));
}

}  // namespace

GridFunction operator+(const GridFunction& a, const GridFunction& b) {
  return zip(a, b, [](double x, double y) { return x + y; });
}
GridFunction operator-(const GridFunction& a, const GridFunction& b) {
  return zip(a, b, [](double x, double y) { return x - y; });
}
GridFunction operator*(double s, const GridFunction& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (auto& x : v) x *= s;
  return GridFunction(a.channels(), a.resolution(), std::move(v));
}

GridFunction resample(const GridFunction& g, std::size_t r_target, ResampleMethod method) {
  if (r_target == 0) throw ConfigError("resample: target resolution must be positive");
  if (r_target == g.resolution()) return g;
  switch (method) {
    case ResampleMethod::bilinear:
      return separable(g, r_target, bilinear_weights(g.resolution(), r_target));
    case ResampleMethod::area:
      return separable(g, r_target, area_weights(g.resolution(), r_target));
    case ResampleMethod::spectral: {
      const std::size_t rs = g.resolution(), C = g.channels();
      Tensor x({C, rs, rs}, std::vector<double>(g.values().begin(), g.values().end()));
      CTensor X = fft::rfft2(x);
      CTensor Y({C, r_target, fft::half_cols(r_target)});
      fft::resize_half(X.span(), rs, Y.span(), r_target, C);
      Tensor y = fft::irfft2(Y, r_target);
      return GridFunction(C, r_target, std::move(y.vec()));
    }
  }
  return g;
}

Tensor stack(std::span<const GridFunction> batch) {
  if (batch.empty()) throw ShapeError("stack: empty batch");
  const std::size_t C = batch[0].channels(), r = batch[0].resolution(), N = batch.size(), P = r * r;
  Tensor t({C, N, r, r});
  for (std::size_t n = 0; n < N; ++n) {
    if (batch[n].channels() != C || batch[n].resolution() != r)
      throw ShapeError("stack: batch mixes shapes (item " + std::to_string(n) + ")");
    const auto v = batch[n].values();
    for (std::size_t c = 0; c < C; ++c) std::copy_n(v.data() + c * P, P, t.data() + (c * N + n) * P);
  }
  return t;
}

std::vector<GridFunction> unstack(const Tensor& t) {
  if (t.rank() != 4 || t.dim(2) != t.dim(3)) throw ShapeError("unstack: expected [C,N,r,r], got " + to_string(t.shape()));
  const std::size_t C = t.dim(0), N = t.dim(1), r = t.dim(2), P = r * r;
  std::vector<GridFunction> out;
  out.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> v(C * P);
    for (std::size_t c = 0; c < C; ++c) std::copy_n(t.data() + (c * N + n) * P, P, v.data() + c * P);
    out.emplace_back(C, r, std::move(v));
  }
  return out;
}

// ---- synthetic ----

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "band-limited-fourier") return SyntheticKind::band_limited_fourier;
  if (s == "gaussian-process") return SyntheticKind::gaussian_process;
  if (s == "edge-plus-smooth") return SyntheticKind::edge_plus_smooth;
  throw ConfigError("unknown synthetic distribution kind '" + s + "'");
}

std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::band_limited_fourier: return "band-limited-fourier";
    case SyntheticKind::gaussian_process: return "gaussian-process";
    case SyntheticKind::edge_plus_smooth: return "edge-plus-smooth";
  }
  return "?";
}

double gp_eigenvalue(int m1, int m2, double alpha) {
  return std::pow(1.0 + static_cast<double>(m1 * m1 + m2 * m2), -alpha);
}

double ContinuousField::operator()(std::size_t ch, double x, double y) const {
  double s = 0.0;
  for (const auto& t : terms_.at(ch)) {
    const double th = 2.0 * M_PI * (t.m1 * y + t.m2 * x);
    s += t.a * std::cos(th) + t.b * std::sin(th);
  }
  if (ch < edges_.size() && edges_[ch].weight != 0.0) {
    const auto& e = edges_[ch];
    auto pd = [](double u, double v) {
      const double d = std::abs(u - v);
      return std::min(d, 1.0 - d);
    };
    const double dx = pd(x, e.cx), dy = pd(y, e.cy);
    s += e.weight * std::tanh(e.sharpness * (e.radius - std::sqrt(dx * dx + dy * dy)));
  }
  return s;
}

namespace {

// Half-plane enumeration of |m1|,|m2| <= cutoff with (m1, m2) and (-m1, -m2) identified.
template <class F>
void for_each_half_mode(int cutoff, F&& f) {
  for (int m1 = -cutoff; m1 <= cutoff; ++m1)
    for (int m2 = 0; m2 <= cutoff; ++m2) {
      if (m2 == 0 && m1 < 0) continue;
      f(m1, m2);
    }
}

std::vector<ContinuousField::Term> random_terms(int cutoff, double alpha, double amp, bool decay, Rng& rng) {
  std::vector<ContinuousField::Term> terms;
  std::size_t count = 0;
  for_each_half_mode(cutoff, [&](int, int) { ++count; });
  for_each_half_mode(cutoff, [&](int m1, int m2) {
    const double sd = decay ? amp * std::sqrt(gp_eigenvalue(m1, m2, alpha)) : amp / std::sqrt(2.0 * count);
    if (m1 == 0 && m2 == 0) {
      const double a = sd * rng.normal();
      terms.push_back({0, 0, a, 0.0});
    } else {
      const double a = sd * std::sqrt(2.0) * rng.normal();
      const double b = sd * std::sqrt(2.0) * rng.normal();
      terms.push_back({m1, m2, a, b});
    }
  });
  return terms;
}

}  // namespace

ContinuousField draw_field(const SyntheticDistributionSpec& spec, Rng& rng) {
  if (spec.channels == 0) throw ConfigError("synthetic spec: channels must be positive");
  if (spec.cutoff < 0) throw ConfigError("synthetic spec: cutoff must be nonnegative");
  ContinuousField f;
  f.terms_.resize(spec.channels);
  f.edges_.resize(spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    switch (spec.kind) {
      case SyntheticKind::band_limited_fourier:
        f.terms_[c] = random_terms(spec.cutoff, 0.0, spec.amplitude, false, rng);
        break;
      case SyntheticKind::gaussian_process:
        f.terms_[c] = random_terms(spec.cutoff, spec.alpha, spec.amplitude, true, rng);
        break;
      case SyntheticKind::edge_plus_smooth: {
        f.terms_[c] = random_terms(std::min(spec.cutoff, 2), 0.0, 0.3 * spec.amplitude, false, rng);
        ContinuousField::Edge e;
        e.cx = rng.uniform();
        e.cy = rng.uniform();
        e.radius = 0.15 + 0.2 * rng.uniform();
        e.sharpness = spec.sharpness;
        e.weight = 0.6 * spec.amplitude;
        f.edges_[c] = e;
        break;
      }
    }
  }
  return f;
}

GridFunction sample_on_grid(const SyntheticDistributionSpec& spec, std::size_t r, Rng rng) {
  if (r == 0) throw ConfigError("sample_on_grid: resolution must be positive");
  const ContinuousField f = draw_field(spec, rng);
  return GridFunction::from_function(spec.channels, r, [&](std::size_t c, double x, double y) { return f(c, x, y); });
}

// ---- datasets ----

const GridFunction& MultiResDataset::at(std::size_t entry, std::size_t r) const {
  const auto& p = entries.at(entry);
  auto it = p.find(r);
  if (it == p.end()) throw ConfigError("dataset has no level at resolution " + std::to_string(r));
  return it->second;
}

bool MultiResDataset::has_resolution(std::size_t r) const {
  return std::find(resolutions.begin(), resolutions.end(), r) != resolutions.end();
}

void MultiResDataset::validate() const {
  for (std::size_t e = 0; e < entries.size(); ++e)
    for (std::size_t r : resolutions) {
      const GridFunction& g = at(e, r);
      if (g.channels() != channels) throw IngestionError("entry " + std::to_string(e) + " has wrong channel count");
    }
}

namespace {

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> r) {
  std::sort(r.begin(), r.end());
  r.erase(std::unique(r.begin(), r.end()), r.end());
  if (!r.empty() && r.front() == 0) throw ConfigError("dataset resolutions must be positive");
  return r;
}

}  // namespace

MultiResDataset build_dataset(const std::filesystem::path& image_dir, std::vector<std::size_t> resolutions,
                              std::size_t count) {
  MultiResDataset ds;
  ds.resolutions = sorted_unique(std::move(resolutions));
  if (count == 0) return ds;
  if (!std::filesystem::is_directory(image_dir))
    throw IngestionError("image directory '" + image_dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(image_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.size() < count)
    throw IngestionError("image directory '" + image_dir.string() + "' holds " + std::to_string(files.size()) +
                         " PNG files, " + std::to_string(count) + " requested");
  for (std::size_t n = 0; n < count; ++n) {
    const RawImage img = read_png(files[n]);
    const std::string who = files[n].filename().string();
    if (img.width != img.height)
      throw IngestionError(who + ": non-square image " + std::to_string(img.width) + "x" + std::to_string(img.height));
    if (!ds.resolutions.empty() && img.width < ds.resolutions.back())
      throw IngestionError(who + ": source resolution " + std::to_string(img.width) + " is below requested " +
                           std::to_string(ds.resolutions.back()));
    if (n == 0) {
      ds.channels = img.channels;
      ds.normalization.scale.assign(img.channels, 1.0 / 127.5);
      ds.normalization.shift.assign(img.channels, -1.0);
    } else if (img.channels != ds.channels) {
      throw IngestionError(who + ": channel count " + std::to_string(img.channels) + " differs from " +
                           std::to_string(ds.channels));
    }
    const std::size_t r = img.width, C = img.channels;
    std::vector<double> v(C * r * r);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < r * r; ++p) v[c * r * r + p] = img.pixels[p * C + c] / 127.5 - 1.0;
    const GridFunction src(C, r, std::move(v));
    MultiResDataset::Pyramid pyr;
    for (std::size_t t : ds.resolutions) pyr.emplace(t, resample(src, t, ResampleMethod::area));
    ds.entries.push_back(std::move(pyr));
  }
  return ds;
}

MultiResDataset build_dataset(const SyntheticDistributionSpec& spec, std::vector<std::size_t> resolutions,
                              std::size_t count) {
  MultiResDataset ds;
  ds.resolutions = sorted_unique(std::move(resolutions));
  ds.channels = spec.channels;
  // Synthetic values already live on the normalized scale; the affine only serves image export.
  ds.normalization.scale.assign(spec.channels, 1.0 / 127.5);
  ds.normalization.shift.assign(spec.channels, -1.0);
  Rng master(spec.seed);
  for (std::size_t n = 0; n < count; ++n) {
    Rng item = master.fork();
    const ContinuousField f = draw_field(spec, item);
    MultiResDataset::Pyramid pyr;
    for (std::size_t r : ds.resolutions)
      pyr.emplace(r, GridFunction::from_function(spec.channels, r,
                                                 [&](std::size_t c, double x, double y) { return f(c, x, y); }));
    ds.entries.push_back(std::move(pyr));
  }
  return ds;
}

MultiResDataset with_upsampled_level(MultiResDataset ds, std::size_t R) {
  if (ds.resolutions.empty()) throw ConfigError("cannot upsample an empty resolution list");
  const std::size_t top = ds.resolutions.back();
  if (R <= top)
    throw ConfigError("upsampled level " + std::to_string(R) + " must exceed the largest level " + std::to_string(top));
  for (auto& p : ds.entries) p.emplace(R, resample(p.at(top), R, ResampleMethod::bilinear));
  ds.resolutions.push_back(R);
  return ds;
}

}  // namespace dfu
