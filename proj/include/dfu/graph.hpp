#pragma once

// Reverse-mode differentiation over a fixed operation set.
//
// A Graph is assembled once for fixed shapes (every builder call checks its
// operand shapes and throws ShapeError naming the node), then evaluated with
// forward() and differentiated with backward(). Parameters are bound by name
// at forward() time and must outlive the subsequent backward().

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dfu/tensor.hpp"

namespace dfu {

enum class OpKind {
  input,
  param,
  add,
  scale,
  hadamard,
  channel_mix,
  conv2d,
  rfft2,
  irfft2,
  spectral_mul,
  silu,
  group_norm,
  mean_reduce,
  broadcast_add,
  affine,
  concat,
  avg_pool2,
  spectral_resize,
};

std::string_view op_name(OpKind k);

using NodeId = std::size_t;
using TensorMap = std::map<std::string, Tensor>;

class Graph {
 public:
  // RAII label prefix for nodes created while it is alive.
  class Scope {
   public:
    Scope(Graph& g, const std::string& name);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
    std::size_t saved_;
  };

  NodeId input(const std::string& name, Shape shape);
  NodeId param(const std::string& name, Shape shape);

  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId hadamard(NodeId a, NodeId b);
  // x [Ci, ...], w [Co, Ci] -> [Co, ...]
  NodeId channel_mix(NodeId x, NodeId w);
  // x [Ci, N, H, W], w [Co, Ci, k, k] with odd k; circular padding, stride 1.
  NodeId conv2d(NodeId x, NodeId w);
  NodeId rfft2(NodeId x);
  NodeId irfft2(NodeId X);
  // X complex [Ci, N, r, r/2+1], K [Co, Ci, modes, 2]; requires r >= 2*cutoff+1.
  NodeId spectral_mul(NodeId X, NodeId K, int cutoff);
  NodeId silu(NodeId x);
  NodeId group_norm(NodeId x, std::size_t groups, double eps = 1e-5);
  NodeId mean(NodeId x);
  // x [C, N, H, W] plus v [C, N, 1, 1] or [C, 1, 1, 1].
  NodeId broadcast_add(NodeId x, NodeId v);
  // Per-channel gamma * x + beta with gamma, beta of shape [C].
  NodeId affine(NodeId x, NodeId gamma, NodeId beta);
  NodeId concat(NodeId a, NodeId b);
  NodeId avg_pool2(NodeId x);
  // Band-limited interpolation of [C, N, r, r] planes to r_out.
  NodeId spectral_resize(NodeId x, std::size_t r_out);

  void forward(const TensorMap& inputs, const TensorMap& params);

  // Seeds are adjoints of the given (real) nodes; all other adjoints start at zero.
  void backward(const std::vector<std::pair<NodeId, Tensor>>& seeds);
  void backward(NodeId out, const Tensor& seed) { backward({{out, seed}}); }

  const Tensor& value(NodeId id) const;
  const CTensor& cvalue(NodeId id) const;
  // Adjoint of a real node after backward(); zero tensor if it received none.
  Tensor grad(NodeId id) const;

  // Gradients for every parameter node, keyed by parameter name.
  TensorMap param_grads() const;
  TensorMap input_grads() const;

  // Accumulated wall time per op kind (forward and backward) while profiling is on.
  void set_profiling(bool on) { profiling_ = on; }
  std::string profile_report() const;

  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(NodeId id) const { return nodes_.at(id).shape; }
  bool is_complex(NodeId id) const { return nodes_.at(id).complex; }
  OpKind kind(NodeId id) const { return nodes_.at(id).op; }
  const std::string& label(NodeId id) const { return nodes_.at(id).label; }
  std::vector<std::string> param_names() const;
  std::map<std::string, Shape> param_shapes() const;
  std::map<std::string, Shape> input_shapes() const;

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> in;
    Shape shape;
    bool complex = false;
    std::string label;
    double scalar = 0.0;
    std::size_t groups = 0;
    double eps = 0.0;
    int cutoff = 0;

    Tensor value;
    CTensor cvalue;
    const Tensor* bound = nullptr;
    Tensor aux_mean, aux_rstd;

    Tensor grad;
    CTensor cgrad;
    bool has_grad = false;
  };

  NodeId push(Node n);
  std::string make_label(OpKind k) const;
  const Node& checked(NodeId id) const;
  [[noreturn]] void fail(OpKind k, const std::string& what) const;

  const Tensor& val(const Node& n) const { return n.bound ? *n.bound : n.value; }
  Tensor& grad_of(NodeId id);
  CTensor& cgrad_of(NodeId id);
  void forward_node(Node& n);
  void backward_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<std::string> scope_;
  bool forwarded_ = false;
  bool backwarded_ = false;
  bool profiling_ = false;
  std::map<std::string, double> profile_;
};

}  // namespace dfu
