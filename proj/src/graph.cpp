#include "dfu/graph.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <cmath>
#include <cstring>

#include "dfu/errors.hpp"
#include "dfu/fft.hpp"
#include "dfu/kernels.hpp"

namespace dfu {

std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::param: return "param";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::hadamard: return "hadamard";
    case OpKind::channel_mix: return "channel-mix";
    case OpKind::conv2d: return "conv2d-circular";
    case OpKind::rfft2: return "rfft2";
    case OpKind::irfft2: return "irfft2";
    case OpKind::spectral_mul: return "complex-pointwise-mul";
    case OpKind::silu: return "silu";
    case OpKind::group_norm: return "group-norm";
    case OpKind::mean_reduce: return "mean-reduce";
    case OpKind::broadcast_add: return "broadcast-add";
    case OpKind::affine: return "affine";
    case OpKind::concat: return "concat";
    case OpKind::avg_pool2: return "avg-pool2";
    case OpKind::spectral_resize: return "spectral-resize";
  }
  return "?";
}

Graph::Scope::Scope(Graph& g, const std::string& name) : g_(g), saved_(g.scope_.size()) { g.scope_.push_back(name); }
Graph::Scope::~Scope() { g_.scope_.resize(saved_); }

std::string Graph::make_label(OpKind k) const {
  std::string s;
  for (const auto& p : scope_) s += p + "/";
  return s + std::string(op_name(k)) + "#" + std::to_string(nodes_.size());
}

void Graph::fail(OpKind k, const std::string& what) const {
  throw ShapeError("graph node " + make_label(k) + ": " + what);
}

const Graph::Node& Graph::checked(NodeId id) const {
  if (id >= nodes_.size()) throw ShapeError("graph: unknown node id " + std::to_string(id));
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  if (n.label.empty()) n.label = make_label(n.op);
  nodes_.push_back(std::move(n));
  forwarded_ = false;
  return nodes_.size() - 1;
}

NodeId Graph::input(const std::string& name, Shape shape) {
  Node n{.op = OpKind::input, .shape = std::move(shape)};
  n.label = name;
  return push(std::move(n));
}

NodeId Graph::param(const std::string& name, Shape shape) {
  for (const auto& n : nodes_)
    if (n.op == OpKind::param && n.label == name) fail(OpKind::param, "parameter '" + name + "' declared twice");
  Node n{.op = OpKind::param, .shape = std::move(shape)};
  n.label = name;
  return push(std::move(n));
}

namespace {
bool is_map(const Shape& s) { return s.size() == 4; }
}  // namespace

NodeId Graph::add(NodeId a, NodeId b) {
  const auto &na = checked(a), &nb = checked(b);
  if (na.complex || nb.complex) fail(OpKind::add, "complex operands are not supported");
  if (na.shape != nb.shape) fail(OpKind::add, "shape mismatch " + to_string(na.shape) + " vs " + to_string(nb.shape));
  return push({.op = OpKind::add, .in = {a, b}, .shape = na.shape});
}

NodeId Graph::scale(NodeId a, double s) {
  const auto& na = checked(a);
  if (na.complex) fail(OpKind::scale, "complex operand is not supported");
  return push({.op = OpKind::scale, .in = {a}, .shape = na.shape, .scalar = s});
}

NodeId Graph::hadamard(NodeId a, NodeId b) {
  const auto &na = checked(a), &nb = checked(b);
  if (na.complex || nb.complex) fail(OpKind::hadamard, "complex operands are not supported");
  if (na.shape != nb.shape)
    fail(OpKind::hadamard, "shape mismatch " + to_string(na.shape) + " vs " + to_string(nb.shape));
  return push({.op = OpKind::hadamard, .in = {a, b}, .shape = na.shape});
}

NodeId Graph::channel_mix(NodeId x, NodeId w) {
  const auto &nx = checked(x), &nw = checked(w);
  if (nx.complex || nx.shape.empty()) fail(OpKind::channel_mix, "input must be a real tensor");
  if (nw.shape.size() != 2 || nw.shape[1] != nx.shape[0])
    fail(OpKind::channel_mix, "weight " + to_string(nw.shape) + " incompatible with input " + to_string(nx.shape));
  Shape s = nx.shape;
  s[0] = nw.shape[0];
  return push({.op = OpKind::channel_mix, .in = {x, w}, .shape = s});
}

NodeId Graph::conv2d(NodeId x, NodeId w) {
  const auto &nx = checked(x), &nw = checked(w);
  if (nx.complex || !is_map(nx.shape)) fail(OpKind::conv2d, "input must be a real [C,N,H,W] map");
  if (nw.shape.size() != 4 || nw.shape[1] != nx.shape[0] || nw.shape[2] != nw.shape[3] || nw.shape[2] % 2 == 0)
    fail(OpKind::conv2d, "kernel " + to_string(nw.shape) + " incompatible with input " + to_string(nx.shape));
  Shape s = nx.shape;
  s[0] = nw.shape[0];
  return push({.op = OpKind::conv2d, .in = {x, w}, .shape = s});
}

NodeId Graph::rfft2(NodeId x) {
  const auto& nx = checked(x);
  if (nx.complex || !is_map(nx.shape) || nx.shape[2] != nx.shape[3])
    fail(OpKind::rfft2, "input must be a real [C,N,r,r] map, got " + to_string(nx.shape));
  Shape s = nx.shape;
  s[3] = fft::half_cols(s[2]);
  return push({.op = OpKind::rfft2, .in = {x}, .shape = s, .complex = true});
}

NodeId Graph::irfft2(NodeId X) {
  const auto& nx = checked(X);
  if (!nx.complex || !is_map(nx.shape) || nx.shape[3] != fft::half_cols(nx.shape[2]))
    fail(OpKind::irfft2, "input must be a complex [C,N,r,r/2+1] half spectrum, got " + to_string(nx.shape));
  Shape s = nx.shape;
  s[3] = s[2];
  return push({.op = OpKind::irfft2, .in = {X}, .shape = s});
}

NodeId Graph::spectral_mul(NodeId X, NodeId K, int cutoff) {
  const auto &nx = checked(X), &nk = checked(K);
  if (!nx.complex || !is_map(nx.shape)) fail(OpKind::spectral_mul, "input must be a complex half spectrum");
  if (cutoff < 0) fail(OpKind::spectral_mul, "negative cutoff");
  const std::size_t r = nx.shape[2];
  if (r < static_cast<std::size_t>(2 * cutoff + 1))
    throw ResolutionError("graph node " + make_label(OpKind::spectral_mul) + ": resolution " + std::to_string(r) +
                          " is below 2*cutoff+1 = " + std::to_string(2 * cutoff + 1) +
                          " (spectral cutoff exceeds Nyquist)");
  const std::size_t nm = static_cast<std::size_t>((2 * cutoff + 1) * (cutoff + 1));
  if (nk.shape.size() != 4 || nk.shape[1] != nx.shape[0] || nk.shape[2] != nm || nk.shape[3] != 2)
    fail(OpKind::spectral_mul, "kernel " + to_string(nk.shape) + " incompatible with input " + to_string(nx.shape) +
                                   " at cutoff " + std::to_string(cutoff));
  Shape s = nx.shape;
  s[0] = nk.shape[0];
  return push({.op = OpKind::spectral_mul, .in = {X, K}, .shape = s, .complex = true, .cutoff = cutoff});
}

NodeId Graph::silu(NodeId x) {
  const auto& nx = checked(x);
  if (nx.complex) fail(OpKind::silu, "complex operand is not supported");
  return push({.op = OpKind::silu, .in = {x}, .shape = nx.shape});
}

NodeId Graph::group_norm(NodeId x, std::size_t groups, double eps) {
  const auto& nx = checked(x);
  if (nx.complex || !is_map(nx.shape)) fail(OpKind::group_norm, "input must be a real [C,N,H,W] map");
  if (groups == 0 || nx.shape[0] % groups != 0)
    fail(OpKind::group_norm, std::to_string(groups) + " groups do not divide " + std::to_string(nx.shape[0]) +
                                 " channels");
  return push({.op = OpKind::group_norm, .in = {x}, .shape = nx.shape, .groups = groups, .eps = eps});
}

NodeId Graph::mean(NodeId x) {
  const auto& nx = checked(x);
  if (nx.complex) fail(OpKind::mean_reduce, "complex operand is not supported");
  return push({.op = OpKind::mean_reduce, .in = {x}, .shape = {1}});
}

NodeId Graph::broadcast_add(NodeId x, NodeId v) {
  const auto &nx = checked(x), &nv = checked(v);
  if (nx.complex || !is_map(nx.shape)) fail(OpKind::broadcast_add, "input must be a real [C,N,H,W] map");
  const bool ok = nv.shape.size() == 4 && nv.shape[0] == nx.shape[0] &&
                  (nv.shape[1] == 1 || nv.shape[1] == nx.shape[1]) && nv.shape[2] == 1 && nv.shape[3] == 1;
  if (!ok) fail(OpKind::broadcast_add, "cannot broadcast " + to_string(nv.shape) + " onto " + to_string(nx.shape));
  return push({.op = OpKind::broadcast_add, .in = {x, v}, .shape = nx.shape});
}

NodeId Graph::affine(NodeId x, NodeId gamma, NodeId beta) {
  const auto &nx = checked(x), &ng = checked(gamma), &nb = checked(beta);
  if (nx.complex || !is_map(nx.shape)) fail(OpKind::affine, "input must be a real [C,N,H,W] map");
  const Shape want{nx.shape[0]};
  if (ng.shape != want || nb.shape != want)
    fail(OpKind::affine, "gamma/beta must have shape " + to_string(want));
  return push({.op = OpKind::affine, .in = {x, gamma, beta}, .shape = nx.shape});
}

NodeId Graph::concat(NodeId a, NodeId b) {
  const auto &na = checked(a), &nb = checked(b);
  if (na.complex || nb.complex || !is_map(na.shape) || !is_map(nb.shape) ||
      !std::equal(na.shape.begin() + 1, na.shape.end(), nb.shape.begin() + 1))
    fail(OpKind::concat, "cannot concatenate " + to_string(na.shape) + " and " + to_string(nb.shape));
  Shape s = na.shape;
  s[0] += nb.shape[0];
  return push({.op = OpKind::concat, .in = {a, b}, .shape = s});
}

NodeId Graph::avg_pool2(NodeId x) {
  const auto& nx = checked(x);
  if (nx.complex || !is_map(nx.shape) || nx.shape[2] % 2 || nx.shape[3] % 2)
    fail(OpKind::avg_pool2, "input must be a real map with even sides, got " + to_string(nx.shape));
  Shape s = nx.shape;
  s[2] /= 2;
  s[3] /= 2;
  return push({.op = OpKind::avg_pool2, .in = {x}, .shape = s});
}

NodeId Graph::spectral_resize(NodeId x, std::size_t r_out) {
  const auto& nx = checked(x);
  if (nx.complex || !is_map(nx.shape) || nx.shape[2] != nx.shape[3] || r_out == 0)
    fail(OpKind::spectral_resize, "input must be a real square map, got " + to_string(nx.shape));
  Shape s = nx.shape;
  s[2] = s[3] = r_out;
  return push({.op = OpKind::spectral_resize, .in = {x}, .shape = s});
}

void Graph::forward(const TensorMap& inputs, const TensorMap& params) {
  for (auto& n : nodes_) {
    if (n.op == OpKind::input || n.op == OpKind::param) {
      const auto& src = n.op == OpKind::input ? inputs : params;
      auto it = src.find(n.label);
      if (it == src.end())
        throw ShapeError(std::string(op_name(n.op)) + " '" + n.label + "' is not bound");
      if (it->second.shape() != n.shape)
        throw ShapeError(std::string(op_name(n.op)) + " '" + n.label + "' expects shape " + to_string(n.shape) +
                         ", got " + to_string(it->second.shape()));
      if (n.op == OpKind::input)
        n.value = it->second;
      else
        n.bound = &it->second;
      continue;
    }
    if (profiling_) {
      const auto t0 = std::chrono::steady_clock::now();
      forward_node(n);
      profile_[std::string(op_name(n.op)) + " fwd"] +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      forward_node(n);
    }
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor{};
    n.cgrad = CTensor{};
  }
  forwarded_ = true;
  backwarded_ = false;
}

void Graph::forward_node(Node& n) {
  auto in = [&](std::size_t i) -> const Tensor& { return val(nodes_[n.in[i]]); };
  auto cin = [&](std::size_t i) -> const CTensor& { return nodes_[n.in[i]].cvalue; };
  if (n.complex)
    n.cvalue = CTensor(n.shape);
  else
    n.value = Tensor(n.shape);
  double* y = n.complex ? nullptr : n.value.data();
  const std::size_t sz = numel(n.shape);

  switch (n.op) {
    case OpKind::add: {
      const double *a = in(0).data(), *b = in(1).data();
      for (std::size_t i = 0; i < sz; ++i) y[i] = a[i] + b[i];
      break;
    }
    case OpKind::scale: {
      const double* a = in(0).data();
      for (std::size_t i = 0; i < sz; ++i) y[i] = n.scalar * a[i];
      break;
    }
    case OpKind::hadamard: {
      const double *a = in(0).data(), *b = in(1).data();
      for (std::size_t i = 0; i < sz; ++i) y[i] = a[i] * b[i];
      break;
    }
    case OpKind::channel_mix: {
      const Tensor& x = in(0);
      kernels::channel_mix_forward(x.data(), in(1).data(), y, x.dim(0), n.shape[0], x.size() / x.dim(0));
      break;
    }
    case OpKind::conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      kernels::conv2d_forward(x.data(), w.data(), y, {x.dim(0), w.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2)});
      break;
    }
    case OpKind::rfft2: {
      const Tensor& x = in(0);
      fft::rfft2(x.span(), n.cvalue.span(), x.dim(2), x.dim(0) * x.dim(1));
      break;
    }
    case OpKind::irfft2:
      fft::irfft2(cin(0).span(), n.value.span(), n.shape[2], n.shape[0] * n.shape[1]);
      break;
    case OpKind::spectral_mul: {
      const CTensor& X = cin(0);
      kernels::spectral_mul_forward(X.data(), in(1).data(), n.cvalue.data(),
                                    {X.dim(0), n.shape[0], X.dim(1), X.dim(2), n.cutoff});
      break;
    }
    case OpKind::silu: {
      const double* a = in(0).data();
      for (std::size_t i = 0; i < sz; ++i) y[i] = a[i] / (1.0 + std::exp(-a[i]));
      break;
    }
    case OpKind::group_norm: {
      const Tensor& x = in(0);
      n.aux_mean = Tensor({x.dim(1) * n.groups});
      n.aux_rstd = Tensor({x.dim(1) * n.groups});
      kernels::group_norm_forward(x.data(), y, n.aux_mean.data(), n.aux_rstd.data(), x.dim(0), x.dim(1),
                                  x.dim(2) * x.dim(3), n.groups, n.eps);
      break;
    }
    case OpKind::mean_reduce: {
      const Tensor& x = in(0);
      double s = 0.0;
      for (double v : x.vec()) s += v;
      y[0] = s / static_cast<double>(x.size());
      break;
    }
    case OpKind::broadcast_add: {
      const Tensor& x = in(0);
      const Tensor& v = in(1);
      const std::size_t C = x.dim(0), N = x.dim(1), plane = x.dim(2) * x.dim(3), vn = v.dim(1);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t b = 0; b < N; ++b) {
          const double add = v[c * vn + (vn == 1 ? 0 : b)];
          const double* src = x.data() + (c * N + b) * plane;
          double* dst = y + (c * N + b) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + add;
        }
      break;
    }
    case OpKind::affine: {
      const Tensor& x = in(0);
      const Tensor &g = in(1), &b = in(2);
      const std::size_t per = x.size() / x.dim(0);
      for (std::size_t c = 0; c < x.dim(0); ++c)
        for (std::size_t i = 0; i < per; ++i) y[c * per + i] = g[c] * x[c * per + i] + b[c];
      break;
    }
    case OpKind::concat: {
      const Tensor &a = in(0), &b = in(1);
      std::memcpy(y, a.data(), a.size() * sizeof(double));
      std::memcpy(y + a.size(), b.data(), b.size() * sizeof(double));
      break;
    }
    case OpKind::avg_pool2: {
      const Tensor& x = in(0);
      const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), h = H / 2, w = W / 2;
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double* s = x.data() + p * H * W + 2 * i * W + 2 * j;
            y[p * h * w + i * w + j] = 0.25 * (s[0] + s[1] + s[W] + s[W + 1]);
          }
      break;
    }
    case OpKind::spectral_resize: {
      const Tensor& x = in(0);
      const std::size_t planes = x.dim(0) * x.dim(1), ri = x.dim(2), ro = n.shape[2];
      CTensor Xi({planes, ri, fft::half_cols(ri)});
      CTensor Xo({planes, ro, fft::half_cols(ro)});
      fft::rfft2(x.span(), Xi.span(), ri, planes);
      fft::resize_half(Xi.span(), ri, Xo.span(), ro, planes);
      fft::irfft2(Xo.span(), n.value.span(), ro, planes);
      break;
    }
    case OpKind::input:
    case OpKind::param:
      break;
  }
}

Tensor& Graph::grad_of(NodeId id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.shape);
    n.has_grad = true;
  }
  return n.grad;
}

CTensor& Graph::cgrad_of(NodeId id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.cgrad = CTensor(n.shape);
    n.has_grad = true;
  }
  return n.cgrad;
}

void Graph::backward(const std::vector<std::pair<NodeId, Tensor>>& seeds) {
  if (!forwarded_) throw StateError("graph: backward called before forward");
  if (backwarded_)
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor{};
      n.cgrad = CTensor{};
    }
  for (const auto& [id, seed] : seeds) {
    const Node& n = checked(id);
    if (n.complex) throw ShapeError("graph: cannot seed complex node " + n.label);
    if (seed.shape() != n.shape)
      throw ShapeError("graph: seed for " + n.label + " has shape " + to_string(seed.shape()) + ", expected " +
                       to_string(n.shape));
    Tensor& g = grad_of(id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  }
  for (std::size_t id = nodes_.size(); id-- > 0;)
    if (nodes_[id].has_grad) {
      if (profiling_) {
        const auto t0 = std::chrono::steady_clock::now();
        backward_node(id);
        profile_[std::string(op_name(nodes_[id].op)) + " bwd"] +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      } else {
        backward_node(id);
      }
    }
  backwarded_ = true;
}

void Graph::backward_node(NodeId id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t i) -> const Tensor& { return val(nodes_[n.in[i]]); };
  const std::size_t sz = numel(n.shape);
  const double* g = n.complex ? nullptr : n.grad.data();

  switch (n.op) {
    case OpKind::input:
    case OpKind::param:
      break;
    case OpKind::add: {
      for (std::size_t k = 0; k < 2; ++k) {
        double* d = grad_of(n.in[k]).data();
        for (std::size_t i = 0; i < sz; ++i) d[i] += g[i];
      }
      break;
    }
    case OpKind::scale: {
      double* d = grad_of(n.in[0]).data();
      for (std::size_t i = 0; i < sz; ++i) d[i] += n.scalar * g[i];
      break;
    }
    case OpKind::hadamard: {
      const double *a = in(0).data(), *b = in(1).data();
      double* da = grad_of(n.in[0]).data();
      for (std::size_t i = 0; i < sz; ++i) da[i] += g[i] * b[i];
      double* db = grad_of(n.in[1]).data();
      for (std::size_t i = 0; i < sz; ++i) db[i] += g[i] * a[i];
      break;
    }
    case OpKind::channel_mix: {
      const Tensor &x = in(0), &w = in(1);
      kernels::channel_mix_backward(x.data(), w.data(), g, grad_of(n.in[0]).data(), grad_of(n.in[1]).data(),
                                    x.dim(0), w.dim(0), x.size() / x.dim(0));
      break;
    }
    case OpKind::conv2d: {
      const Tensor &x = in(0), &w = in(1);
      kernels::conv2d_backward(x.data(), w.data(), g, grad_of(n.in[0]).data(), grad_of(n.in[1]).data(),
                               {x.dim(0), w.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2)});
      break;
    }
    case OpKind::rfft2: {
      const Tensor& x = in(0);
      fft::rfft2_adjoint_acc(n.cgrad.span(), grad_of(n.in[0]).span(), x.dim(2), x.dim(0) * x.dim(1));
      break;
    }
    case OpKind::irfft2:
      fft::irfft2_adjoint_acc(n.grad.span(), cgrad_of(n.in[0]).span(), n.shape[2], n.shape[0] * n.shape[1]);
      break;
    case OpKind::spectral_mul: {
      const CTensor& X = nodes_[n.in[0]].cvalue;
      kernels::spectral_mul_backward(X.data(), in(1).data(), n.cgrad.data(), cgrad_of(n.in[0]).data(),
                                     grad_of(n.in[1]).data(), {X.dim(0), n.shape[0], X.dim(1), X.dim(2), n.cutoff});
      break;
    }
    case OpKind::silu: {
      const double* a = in(0).data();
      double* d = grad_of(n.in[0]).data();
      for (std::size_t i = 0; i < sz; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-a[i]));
        d[i] += g[i] * s * (1.0 + a[i] * (1.0 - s));
      }
      break;
    }
    case OpKind::group_norm: {
      const Tensor& x = in(0);
      kernels::group_norm_backward(n.value.data(), n.aux_rstd.data(), g, grad_of(n.in[0]).data(), x.dim(0), x.dim(1),
                                   x.dim(2) * x.dim(3), n.groups);
      break;
    }
    case OpKind::mean_reduce: {
      Tensor& d = grad_of(n.in[0]);
      const double s = g[0] / static_cast<double>(d.size());
      for (auto& v : d.vec()) v += s;
      break;
    }
    case OpKind::broadcast_add: {
      const std::size_t C = n.shape[0], N = n.shape[1], plane = n.shape[2] * n.shape[3];
      double* dx = grad_of(n.in[0]).data();
      for (std::size_t i = 0; i < sz; ++i) dx[i] += g[i];
      Tensor& dv = grad_of(n.in[1]);
      const std::size_t vn = dv.dim(1);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t b = 0; b < N; ++b) {
          const double* src = g + (c * N + b) * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += src[i];
          dv[c * vn + (vn == 1 ? 0 : b)] += s;
        }
      break;
    }
    case OpKind::affine: {
      const Tensor &x = in(0), &gam = in(1);
      const std::size_t C = x.dim(0), per = x.size() / C;
      double* dx = grad_of(n.in[0]).data();
      double* dg = grad_of(n.in[1]).data();
      double* db = grad_of(n.in[2]).data();
      for (std::size_t c = 0; c < C; ++c) {
        double sg = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
          const double gi = g[c * per + i];
          dx[c * per + i] += gam[c] * gi;
          sg += gi * x[c * per + i];
          sb += gi;
        }
        dg[c] += sg;
        db[c] += sb;
      }
      break;
    }
    case OpKind::concat: {
      Tensor& da = grad_of(n.in[0]);
      Tensor& db = grad_of(n.in[1]);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[da.size() + i];
      break;
    }
    case OpKind::avg_pool2: {
      Tensor& dx = grad_of(n.in[0]);
      const std::size_t planes = n.shape[0] * n.shape[1], h = n.shape[2], w = n.shape[3], W = 2 * w;
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double q = 0.25 * g[p * h * w + i * w + j];
            double* d = dx.data() + p * 4 * h * w + 2 * i * W + 2 * j;
            d[0] += q;
            d[1] += q;
            d[W] += q;
            d[W + 1] += q;
          }
      break;
    }
    case OpKind::spectral_resize: {
      const Tensor& x = in(0);
      const std::size_t planes = x.dim(0) * x.dim(1), ri = x.dim(2), ro = n.shape[2];
      CTensor Go({planes, ro, fft::half_cols(ro)});
      CTensor Gi({planes, ri, fft::half_cols(ri)});
      fft::irfft2_adjoint_acc(n.grad.span(), Go.span(), ro, planes);
      fft::resize_half_adjoint_acc(Go.span(), ro, Gi.span(), ri, planes);
      fft::rfft2_adjoint_acc(Gi.span(), grad_of(n.in[0]).span(), ri, planes);
      break;
    }
  }
}

std::string Graph::profile_report() const {
  std::ostringstream os;
  for (const auto& [k, v] : profile_) os << k << " " << v << "\n";
  return os.str();
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = checked(id);
  if (!forwarded_) throw StateError("graph: value requested before forward");
  if (n.complex) throw StateError("graph: node " + n.label + " is complex");
  return val(n);
}

const CTensor& Graph::cvalue(NodeId id) const {
  const Node& n = checked(id);
  if (!forwarded_) throw StateError("graph: value requested before forward");
  if (!n.complex) throw StateError("graph: node " + n.label + " is real");
  return n.cvalue;
}

Tensor Graph::grad(NodeId id) const {
  const Node& n = checked(id);
  if (!backwarded_) throw StateError("graph: gradient requested before backward");
  if (n.complex) throw StateError("graph: node " + n.label + " is complex");
  return n.has_grad ? n.grad : Tensor(n.shape);
}

TensorMap Graph::param_grads() const {
  if (!backwarded_) throw StateError("graph: gradients requested before backward");
  TensorMap out;
  for (const auto& n : nodes_)
    if (n.op == OpKind::param) out[n.label] = n.has_grad ? n.grad : Tensor(n.shape);
  return out;
}

TensorMap Graph::input_grads() const {
  if (!backwarded_) throw StateError("graph: gradients requested before backward");
  TensorMap out;
  for (const auto& n : nodes_)
    if (n.op == OpKind::input) out[n.label] = n.has_grad ? n.grad : Tensor(n.shape);
  return out;
}

std::vector<std::string> Graph::param_names() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (n.op == OpKind::param) out.push_back(n.label);
  return out;
}

std::map<std::string, Shape> Graph::param_shapes() const {
  std::map<std::string, Shape> out;
  for (const auto& n : nodes_)
    if (n.op == OpKind::param) out[n.label] = n.shape;
  return out;
}

std::map<std::string, Shape> Graph::input_shapes() const {
  std::map<std::string, Shape> out;
  for (const auto& n : nodes_)
    if (n.op == OpKind::input) out[n.label] = n.shape;
  return out;
}

}  // namespace dfu
