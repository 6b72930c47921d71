#include "dfu/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dfu/dual_conv.hpp"
#include "dfu/errors.hpp"

namespace dfu {

Arch arch_from_string(const std::string& s) {
  if (s == "dfu") return Arch::dfu;
  if (s == "fno-unet") return Arch::fno_unet;
  if (s == "multires-unet") return Arch::multires_unet;
  if (s == "singleres-unet") return Arch::singleres_unet;
  throw ConfigError("unknown architecture '" + s + "'");
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::dfu: return "dfu";
    case Arch::fno_unet: return "fno-unet";
    case Arch::multires_unet: return "multires-unet";
    case Arch::singleres_unet: return "singleres-unet";
  }
  return "?";
}

std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::spatial: return "spatial";
    case ParamKind::spectral: return "spectral";
    case ParamKind::bias: return "bias";
    case ParamKind::norm: return "norm";
    case ParamKind::mix: return "mix";
    case ParamKind::embed: return "embed";
  }
  return "?";
}

ModelSpec ModelSpec::full() { return ModelSpec{}; }

ModelSpec ModelSpec::desk() {
  ModelSpec s;
  s.levels = 3;
  s.blocks = 1;
  s.base_channels = 16;
  s.multipliers = {1, 2, 2};
  s.modes = 8;
  return s;
}

void ModelSpec::validate() const {
  if (levels == 0) throw ConfigError("model.levels must be positive");
  if (blocks == 0) throw ConfigError("model.blocks must be positive");
  if (base_channels == 0) throw ConfigError("model.base_channels must be positive");
  if (multipliers.size() != levels)
    throw ConfigError("model.multipliers has " + std::to_string(multipliers.size()) + " entries for " +
                      std::to_string(levels) + " levels");
  for (auto m : multipliers)
    if (m == 0) throw ConfigError("model.multipliers entries must be positive");
  if (spatial_k % 2 == 0) throw ConfigError("model.spatial_k must be odd");
  if (image_channels == 0) throw ConfigError("model.image_channels must be positive");
  if (groups == 0) throw ConfigError("model.groups must be positive");
  if (has_spectral()) {
    if (modes < 1 || (modes >> (levels - 1)) < 1)
      throw ConfigError("model.modes = " + std::to_string(modes) + " leaves no Fourier modes at level " +
                        std::to_string(levels - 1));
  }
  if (arch == Arch::singleres_unet && fixed_resolution == 0)
    throw ConfigError("singleres-unet needs model.fixed_resolution");
}

int ModelSpec::cutoff(std::size_t level) const {
  if (!has_spectral()) return -1;
  return (modes >> level) - 1;
}

std::size_t ModelSpec::kernel_size() const { return arch == Arch::fno_unet ? 1 : spatial_k; }

bool resolution_admissible(const ModelSpec& spec, std::size_t r) {
  const std::size_t div = std::size_t{1} << (spec.levels - 1);
  if (r == 0 || r % div != 0) return false;
  for (std::size_t l = 0; l < spec.levels; ++l) {
    const int c = spec.cutoff(l);
    if (c >= 0 && (r >> l) < static_cast<std::size_t>(2 * c + 1)) return false;
  }
  return true;
}

std::vector<std::size_t> admissible_resolutions(const ModelSpec& spec, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t r = std::max<std::size_t>(lo, 1); r <= hi; ++r)
    if (resolution_admissible(spec, r)) out.push_back(r);
  return out;
}

void check_resolution(const ModelSpec& spec, std::size_t r) {
  if (resolution_admissible(spec, r)) return;
  const std::size_t div = std::size_t{1} << (spec.levels - 1);
  std::ostringstream os;
  os << "resolution " << r << " is not admissible: it must be a multiple of " << div;
  if (spec.has_spectral())
    os << " and every level must resolve its spectral cutoff (level " << spec.levels - 1 << " needs at least "
       << 2 * spec.cutoff(spec.levels - 1) + 1 << " points)";
  std::size_t below = 0, above = 0;
  for (std::size_t q = r; q-- > 1;)
    if (resolution_admissible(spec, q)) {
      below = q;
      break;
    }
  for (std::size_t q = r + 1; q < r + 8 * div + 64; ++q)
    if (resolution_admissible(spec, q)) {
      above = q;
      break;
    }
  os << "; nearest admissible:";
  if (below) os << " " << below;
  if (above) os << " " << above;
  auto some = admissible_resolutions(spec, 1, std::max<std::size_t>(2 * r, 64));
  if (some.size() > 12) some.resize(12);
  os << "; admissible values include";
  for (auto q : some) os << " " << q;
  throw ResolutionError(os.str());
}

double Precond::c_out(double s) { return s * sigma_data / std::sqrt(s * s + sigma_data * sigma_data); }
double Precond::c_in(double s) { return 1.0 / std::sqrt(s * s + sigma_data * sigma_data); }
double Precond::c_noise(double s) { return std::log(s) / 4.0; }

Tensor noise_features(const ModelSpec& spec, std::span<const double> sigmas) {
  const std::size_t F = spec.feature_dim(), half = F / 2, N = sigmas.size();
  Tensor t({F, N, 1, 1});
  for (std::size_t n = 0; n < N; ++n) {
    const double c = Precond::c_noise(sigmas[n]);
    for (std::size_t i = 0; i < half; ++i) {
      const double f = half > 1 ? std::pow(64.0, static_cast<double>(i) / static_cast<double>(half - 1)) : 1.0;
      t[i * N + n] = std::cos(f * c);
      t[(half + i) * N + n] = std::sin(f * c);
    }
    if (F % 2) t[(F - 1) * N + n] = c;
  }
  return t;
}

namespace {

std::size_t group_count(const ModelSpec& spec, std::size_t c) {
  for (std::size_t g = std::min(spec.groups, c); g > 1; --g)
    if (c % g == 0) return g;
  return 1;
}

std::string level_name(const char* path, std::size_t l, std::size_t b) {
  return std::string(path) + ".L" + std::to_string(l) + ".B" + std::to_string(b);
}

struct Builder {
  Graph& g;
  const ModelSpec& spec;
  NodeId emb = 0;

  NodeId norm_act(NodeId h, std::size_t c, const std::string& name) {
    Graph::Scope s(g, name);
    auto n = g.group_norm(h, group_count(spec, c));
    n = g.affine(n, g.param(name + ".gamma", {c}), g.param(name + ".beta", {c}));
    return g.silu(n);
  }

  NodeId conv(NodeId h, const std::string& name, std::size_t cin, std::size_t cout, std::size_t level) {
    return dual_conv_node(g, h, name, cin, cout, spec.kernel_size(), spec.cutoff(level));
  }

  NodeId linear(NodeId x, const std::string& name, std::size_t cin, std::size_t cout) {
    auto y = g.channel_mix(x, g.param(name + ".weight", {cout, cin}));
    return g.broadcast_add(y, g.param(name + ".bias", {cout, 1, 1, 1}));
  }

  NodeId block(NodeId h, const std::string& name, std::size_t cin, std::size_t cout, std::size_t level) {
    Graph::Scope s(g, name);
    auto y = conv(norm_act(h, cin, name + ".norm1"), name + ".dc1", cin, cout, level);
    y = g.broadcast_add(y, linear(emb, name + ".emb", spec.emb_dim(), cout));
    y = conv(norm_act(y, cout, name + ".norm2"), name + ".dc2", cout, cout, level);
    NodeId skip = h;
    if (cin != cout) skip = g.channel_mix(h, g.param(name + ".skip.weight", {cout, cin}));
    return g.add(y, skip);
  }
};

}  // namespace

void build_net(NetGraph& net, const ModelSpec& spec, std::size_t r, std::size_t batch) {
  spec.validate();
  check_resolution(spec, r);
  net.graph = Graph{};
  Graph& g = net.graph;
  net.resolution = r;
  net.batch = batch;
  net.x = g.input("x", {spec.image_channels, batch, r, r});
  net.noise = g.input("noise", {spec.feature_dim(), batch, 1, 1});
  Builder b{g, spec};
  {
    Graph::Scope s(g, "embed");
    auto e = g.silu(b.linear(net.noise, "embed.fc1", spec.feature_dim(), spec.emb_dim()));
    b.emb = g.silu(b.linear(e, "embed.fc2", spec.emb_dim(), spec.emb_dim()));
  }
  const std::size_t L = spec.levels;
  NodeId h = b.conv(net.x, "stem", spec.image_channels, spec.channels(0), 0);
  std::vector<NodeId> skips(L);
  std::size_t c = spec.channels(0);
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) h = g.avg_pool2(h);
    for (std::size_t k = 0; k < spec.blocks; ++k) {
      h = b.block(h, level_name("enc", l, k), c, spec.channels(l), l);
      c = spec.channels(l);
    }
    skips[l] = h;
  }
  for (std::size_t l = L; l-- > 0;) {
    if (l + 1 < L) {
      h = g.spectral_resize(h, r >> l);
      h = g.concat(h, skips[l]);
      c += spec.channels(l);
    }
    for (std::size_t k = 0; k < spec.blocks; ++k) {
      h = b.block(h, level_name("dec", l, k), c, spec.channels(l), l);
      c = spec.channels(l);
    }
  }
  h = b.norm_act(h, c, "head.norm");
  net.out = b.conv(h, "head", c, spec.image_channels, 0);
}

namespace {

ParamInfo classify(const std::string& name, const Shape& shape) {
  ParamInfo info{shape, ParamKind::bias, 0};
  auto ends = [&](const std::string& suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (name.rfind("embed.", 0) == 0) {
    info.kind = ParamKind::embed;
    info.level = -1;
    return info;
  }
  const auto p = name.find(".L");
  if (p != std::string::npos) info.level = std::stoi(name.substr(p + 2));
  if (name.find(".emb.") != std::string::npos)
    info.kind = ParamKind::embed;
  else if (ends(".spatial"))
    info.kind = ParamKind::spatial;
  else if (ends(".spectral"))
    info.kind = ParamKind::spectral;
  else if (ends(".gamma") || ends(".beta"))
    info.kind = ParamKind::norm;
  else if (ends(".skip.weight"))
    info.kind = ParamKind::mix;
  else
    info.kind = ParamKind::bias;
  return info;
}

}  // namespace

std::map<std::string, ParamInfo> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  const auto rs = admissible_resolutions(spec, 1, 4096);
  if (rs.empty()) throw ConfigError("model admits no resolution up to 4096");
  NetGraph net;
  build_net(net, spec, rs.front(), 1);
  std::map<std::string, ParamInfo> out;
  for (const auto& [name, shape] : net.graph.param_shapes()) out.emplace(name, classify(name, shape));
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

std::vector<std::string> ModelState::names_of(ParamKind k) const {
  std::vector<std::string> out;
  for (const auto& [name, i] : info)
    if (i.kind == k) out.push_back(name);
  return out;
}

ModelState build(const ModelSpec& spec, Rng& rng) {
  ModelState m;
  m.spec = spec;
  m.info = parameter_layout(spec);
  for (const auto& [name, info] : m.info) {
    Tensor t(info.shape);
    const bool weight = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    switch (info.kind) {
      case ParamKind::spatial: init_spatial(t, rng); break;
      case ParamKind::spectral: init_spectral(t, rng); break;
      case ParamKind::norm:
        if (name.back() == 'a' && name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0) t.fill(1.0);
        break;
      case ParamKind::mix:
      case ParamKind::embed:
        if (weight) {
          const double sd = 1.0 / std::sqrt(static_cast<double>(info.shape[1]));
          for (auto& v : t.vec()) v = sd * rng.normal();
        }
        break;
      case ParamKind::bias: break;
    }
    m.params.emplace(name, std::move(t));
    m.frozen.emplace(name, false);
  }
  return m;
}

ModelState freeze_spatial(ModelState m, const std::set<std::size_t>& except_levels) {
  if (m.spec.arch != Arch::dfu) throw ConfigError("freeze_spatial applies to the dfu architecture only");
  for (auto l : except_levels)
    if (l >= m.spec.levels)
      throw ConfigError("freeze level " + std::to_string(l) + " out of range [0, " + std::to_string(m.spec.levels) + ")");
  for (const auto& [name, info] : m.info) {
    if (info.kind != ParamKind::spatial || info.shape.at(2) <= 1) continue;
    if (except_levels.count(static_cast<std::size_t>(info.level))) continue;
    m.frozen[name] = true;
  }
  return m;
}

Tensor denoise_batch(const ModelState& m, const Tensor& x, std::span<const double> sigmas, const TensorMap* params) {
  if (x.rank() != 4 || x.dim(2) != x.dim(3)) throw ShapeError("denoise: expected [C,N,r,r], got " + to_string(x.shape()));
  if (x.dim(0) != m.spec.image_channels)
    throw ShapeError("denoise: input has " + std::to_string(x.dim(0)) + " channels, model expects " +
                     std::to_string(m.spec.image_channels));
  const std::size_t C = x.dim(0), N = x.dim(1), P = x.dim(2) * x.dim(3);
  if (sigmas.size() != N) throw ShapeError("denoise: one sigma per batch item required");
  for (double s : sigmas)
    if (!(s > 0.0)) throw ConfigError("denoise: sigma must be positive");
  NetGraph net;
  build_net(net, m.spec, x.dim(2), N);
  Tensor xin = x;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < P; ++p) xin[(c * N + n) * P + p] *= Precond::c_in(sigmas[n]);
  net.graph.forward({{"x", xin}, {"noise", noise_features(m.spec, sigmas)}}, params ? *params : m.params);
  const Tensor& F = net.graph.value(net.out);
  Tensor D(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const double cs = Precond::c_skip(sigmas[n]), co = Precond::c_out(sigmas[n]);
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (c * N + n) * P + p;
        D[i] = cs * x[i] + co * F[i];
      }
    }
  return D;
}

GridFunction denoise(const ModelState& m, const GridFunction& x, double sigma, const TensorMap* params) {
  const GridFunction one[] = {x};
  const double s[] = {sigma};
  return unstack(denoise_batch(m, stack(one), s, params)).front();
}

}  // namespace dfu
