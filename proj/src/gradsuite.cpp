#include "dfu/gradsuite.hpp"

#include <functional>

#include "dfu/model.hpp"

namespace dfu {

namespace {

Tensor randn(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = scale * rng.normal();
  return t;
}

std::size_t spectral_modes_for(int c) { return static_cast<std::size_t>((2 * c + 1) * (c + 1)); }

}  // namespace

std::vector<GradSuiteCase> gradient_suite(std::uint64_t seed, double step) {
  Rng rng(seed);
  GradCheckOptions opt;
  opt.step = step;
  opt.seed = seed;
  std::vector<GradSuiteCase> out;

  const std::size_t C = 3, N = 2;
  // Each case builds its graph from the shared inputs x, x2 at resolution r.
  using Build = std::function<NodeId(Graph&, NodeId, NodeId, TensorMap&)>;
  auto run = [&](const std::string& name, std::size_t r, const Build& build) {
    Graph g;
    auto x = g.input("x", {C, N, r, r});
    auto x2 = g.input("x2", {C, N, r, r});
    TensorMap params;
    NodeId y = build(g, x, x2, params);
    TensorMap in{{"x", randn({C, N, r, r}, rng)}, {"x2", randn({C, N, r, r}, rng)}};
    out.push_back({name, grad_check(g, y, in, params, opt)});
  };

  run("add", 5, [](Graph& g, NodeId x, NodeId x2, TensorMap&) { return g.add(x, x2); });
  run("scale", 5, [](Graph& g, NodeId x, NodeId, TensorMap&) { return g.scale(x, -1.7); });
  run("hadamard", 5, [](Graph& g, NodeId x, NodeId x2, TensorMap&) { return g.hadamard(x, x2); });
  run("param+channel_mix", 5, [&](Graph& g, NodeId x, NodeId, TensorMap& p) {
    p["w"] = randn({4, C}, rng);
    return g.channel_mix(x, g.param("w", {4, C}));
  });
  for (std::size_t k : {1, 3, 5})
    run("conv2d k=" + std::to_string(k), 6, [&, k](Graph& g, NodeId x, NodeId, TensorMap& p) {
      p["w"] = randn({2, C, k, k}, rng, 0.5);
      return g.conv2d(x, g.param("w", {2, C, k, k}));
    });
  for (std::size_t r : {5, 8})
    run("rfft2+irfft2 r=" + std::to_string(r), r, [](Graph& g, NodeId x, NodeId x2, TensorMap&) {
      return g.hadamard(g.irfft2(g.rfft2(x)), x2);
    });
  for (std::size_t r : {5, 8})
    run("spectral_mul r=" + std::to_string(r), r, [&](Graph& g, NodeId x, NodeId, TensorMap& p) {
      const int cut = 2;
      p["k"] = randn({2, C, spectral_modes_for(cut), 2}, rng);
      return g.irfft2(g.spectral_mul(g.rfft2(x), g.param("k", {2, C, spectral_modes_for(cut), 2}), cut));
    });
  run("silu", 5, [](Graph& g, NodeId x, NodeId, TensorMap&) { return g.silu(x); });
  run("group_norm", 5, [](Graph& g, NodeId x, NodeId x2, TensorMap&) {
    return g.group_norm(g.concat(x, x2), 2);
  });
  run("mean_reduce", 5, [](Graph& g, NodeId x, NodeId x2, TensorMap&) {
    return g.mean(g.hadamard(x, x2));
  });
  run("broadcast_add", 5, [&](Graph& g, NodeId x, NodeId, TensorMap& p) {
    p["e"] = randn({C, N, 1, 1}, rng);
    p["e1"] = randn({C, 1, 1, 1}, rng);
    return g.broadcast_add(g.broadcast_add(x, g.param("e", {C, N, 1, 1})), g.param("e1", {C, 1, 1, 1}));
  });
  run("affine", 5, [&](Graph& g, NodeId x, NodeId, TensorMap& p) {
    p["gamma"] = randn({C}, rng);
    p["beta"] = randn({C}, rng);
    return g.affine(x, g.param("gamma", {C}), g.param("beta", {C}));
  });
  run("concat", 5, [](Graph& g, NodeId x, NodeId x2, TensorMap&) { return g.concat(x, g.scale(x2, 2.0)); });
  run("avg_pool2", 6, [](Graph& g, NodeId x, NodeId, TensorMap&) { return g.avg_pool2(x); });
  for (std::size_t to : {5, 12, 9})
    run("spectral_resize 8->" + std::to_string(to), 8,
        [to](Graph& g, NodeId x, NodeId, TensorMap&) { return g.spectral_resize(x, to); });

  // A complete small network: stem, Dual-FNO residual blocks on two levels, head.
  ModelSpec spec;
  spec.levels = 2;
  spec.blocks = 1;
  spec.base_channels = 4;
  spec.multipliers = {1, 2};
  spec.modes = 4;
  spec.groups = 2;
  spec.embedding_dim = 8;
  Rng init(seed + 1);
  ModelState m = build(spec, init);
  NetGraph net;
  const std::size_t r = 8;
  build_net(net, spec, r, 2);
  const double sig[] = {0.3, 2.0};
  TensorMap in{{"x", randn({1, 2, r, r}, rng)}, {"noise", noise_features(spec, sig)}};
  // Subsample each tensor to keep the network check quick.
  GradCheckOptions nopt = opt;
  nopt.max_elements = 24;
  out.push_back({"dual-fno network", grad_check(net.graph, net.out, in, m.params, nopt)});
  return out;
}

}  // namespace dfu
