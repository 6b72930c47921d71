#include "dfu/dual_conv.hpp"

#include <cmath>

#include "dfu/errors.hpp"

namespace dfu {

std::size_t spectral_modes(int cutoff) { return static_cast<std::size_t>((2 * cutoff + 1) * (cutoff + 1)); }

void init_spatial(Tensor& w, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(w.dim(1) * w.dim(2) * w.dim(3)));
  for (auto& v : w.vec()) v = sd * rng.normal();
}

void init_spectral(Tensor& w, Rng& rng) {
  const double sd = 1.0 / std::sqrt(2.0 * static_cast<double>(w.dim(1) * w.dim(2)));
  for (auto& v : w.vec()) v = sd * rng.normal();
}

DualConvParams init_dual_conv(std::size_t cin, std::size_t cout, std::size_t k, int cutoff, Rng& rng) {
  if (k % 2 == 0) throw ConfigError("spatial kernel size must be odd, got " + std::to_string(k));
  if (cutoff < 0) throw ConfigError("spectral cutoff must be nonnegative");
  DualConvParams p{Tensor({cout, cin, k, k}), Tensor({cout, cin, spectral_modes(cutoff), 2}), Tensor({cout}), cutoff};
  init_spatial(p.spatial, rng);
  init_spectral(p.spectral, rng);
  return p;
}

namespace {

Tensor as_map(const GridFunction& g) {
  return Tensor({g.channels(), 1, g.resolution(), g.resolution()}, std::vector<double>(g.values().begin(), g.values().end()));
}

GridFunction from_map(const Tensor& t) {
  return GridFunction(t.dim(0), t.dim(2), t.vec());
}

}  // namespace

GridFunction spatial_conv(const GridFunction& g, const Tensor& kernel) {
  Graph gr;
  auto x = gr.input("x", {g.channels(), 1, g.resolution(), g.resolution()});
  auto y = gr.conv2d(x, gr.param("w", kernel.shape()));
  TensorMap p{{"w", kernel}};
  gr.forward({{"x", as_map(g)}}, p);
  return from_map(gr.value(y));
}

GridFunction spectral_conv(const GridFunction& g, const Tensor& coeffs, int cutoff) {
  Graph gr;
  auto x = gr.input("x", {g.channels(), 1, g.resolution(), g.resolution()});
  auto y = gr.irfft2(gr.spectral_mul(gr.rfft2(x), gr.param("k", coeffs.shape()), cutoff));
  TensorMap p{{"k", coeffs}};
  gr.forward({{"x", as_map(g)}}, p);
  return from_map(gr.value(y));
}

GridFunction dual_conv(const GridFunction& g, const DualConvParams& p) {
  Graph gr;
  auto x = gr.input("x", {g.channels(), 1, g.resolution(), g.resolution()});
  auto y = dual_conv_node(gr, x, "dc", p.cin(), p.cout(), p.k(), p.cutoff);
  TensorMap params{{"dc.spatial", p.spatial}, {"dc.spectral", p.spectral}, {"dc.bias", Tensor({p.cout(), 1, 1, 1}, p.bias.vec())}};
  gr.forward({{"x", as_map(g)}}, params);
  return from_map(gr.value(y));
}

NodeId dual_conv_node(Graph& g, NodeId x, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                      int cutoff) {
  Graph::Scope s(g, name);
  NodeId y = g.conv2d(x, g.param(name + ".spatial", {cout, cin, k, k}));
  if (cutoff >= 0) {
    auto K = g.param(name + ".spectral", {cout, cin, spectral_modes(cutoff), 2});
    y = g.add(y, g.irfft2(g.spectral_mul(g.rfft2(x), K, cutoff)));
  }
  return g.broadcast_add(y, g.param(name + ".bias", {cout, 1, 1, 1}));
}

}  // namespace dfu
