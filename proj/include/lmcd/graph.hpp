#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmcd/kernels.hpp"

namespace lmcd {

using NodeId = int;

// Computation tape.  Nodes are appended in topological order and values are
// computed eagerly so shape errors surface at build time; backward walks the
// tape in reverse.  Leaf nodes alias the caller's Tensor storage, so binding
// new values or reading accumulated parameter gradients needs no extra API.
template <typename R>
class Graph {
 public:
  // Named differentiable-capable leaf.  Whether it actually receives a
  // gradient follows the tensor's requires_grad flag at backward time.
  NodeId input(const std::string& name, Tensor<R> t) {
    if (!t.defined()) throw StateError("input '" + name + "' is undefined");
    check_finite_leaf(name, t);
    if (!name.empty()) {
      auto [it, fresh] = named_.emplace(name, next_id());
      if (!fresh) throw StateError("duplicate graph input '" + name + "'");
    }
    nodes_.push_back(Node{Op::count_, {}, OpAttrs{}, std::move(t), name, true});
    return next_id() - 1;
  }

  // Unnamed constant leaf (labels, masks); never differentiated.
  NodeId constant(Tensor<R> t) {
    check_finite_leaf("constant", t);
    t.set_requires_grad(false);
    nodes_.push_back(
        Node{Op::count_, {}, OpAttrs{}, std::move(t), std::string(), true});
    return next_id() - 1;
  }

  NodeId apply(Op op, std::vector<NodeId> args, OpAttrs attrs = {}) {
    const KernelInfo<R>& info = kernel_info<R>(op);
    const int n = static_cast<int>(args.size());
    if (n < info.min_arity ||
        (info.max_arity >= 0 && n > info.max_arity)) {
      throw ShapeError(std::string(info.name) + ": expected " +
                       std::to_string(info.min_arity) + " inputs, got " +
                       std::to_string(n));
    }
    std::vector<const Tensor<R>*> ins;
    ins.reserve(args.size());
    for (NodeId id : args) ins.push_back(&value_of(id));
    Tensor<R> out = info.forward(ins, attrs);
    if (!out.all_finite()) {
      throw NumericError(std::string(info.name) +
                         " produced a non-finite value");
    }
    nodes_.push_back(Node{op, std::move(args), std::move(attrs),
                          std::move(out), std::string(), false});
    return next_id() - 1;
  }

  // -- op builders ----------------------------------------------------------

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false,
                bool trans_b = false) {
    OpAttrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    return apply(Op::matmul, {a, b}, at);
  }
  NodeId add(NodeId a, NodeId b) { return apply(Op::add, {a, b}); }
  NodeId sub(NodeId a, NodeId b) { return apply(Op::sub, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return apply(Op::mul, {a, b}); }
  NodeId add_rowvec(NodeId x, NodeId v) {
    return apply(Op::add_rowvec, {x, v});
  }
  NodeId scale(NodeId x, double c) {
    OpAttrs at;
    at.scalar = c;
    return apply(Op::scale, {x}, at);
  }
  NodeId reduce_sum(NodeId x) { return apply(Op::reduce_sum, {x}); }
  NodeId concat_rows(NodeId a, NodeId b) {
    return apply(Op::concat_rows, {a, b});
  }
  NodeId concat_cols(std::vector<NodeId> xs) {
    return apply(Op::concat_cols, std::move(xs));
  }
  NodeId slice_cols(NodeId x, int c0, int c1) {
    OpAttrs at;
    at.i0 = c0;
    at.i1 = c1;
    return apply(Op::slice_cols, {x}, at);
  }
  NodeId take_row(NodeId x, int i) {
    OpAttrs at;
    at.i0 = i;
    return apply(Op::take_row, {x}, at);
  }
  NodeId embed_rows(NodeId table, std::vector<int> ids) {
    OpAttrs at;
    at.indices = std::move(ids);
    return apply(Op::embed_rows, {table}, at);
  }
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5) {
    OpAttrs at;
    at.eps = eps;
    return apply(Op::layer_norm, {x, gamma, beta}, at);
  }
  NodeId softmax_rows(NodeId x) { return apply(Op::softmax_rows, {x}); }
  NodeId softmax_causal(NodeId x) { return apply(Op::softmax_causal, {x}); }
  NodeId gelu(NodeId x) { return apply(Op::gelu, {x}); }
  NodeId sigmoid(NodeId x) { return apply(Op::sigmoid, {x}); }
  NodeId softplus(NodeId x) { return apply(Op::softplus, {x}); }
  NodeId log(NodeId x) { return apply(Op::log, {x}); }
  NodeId bce(NodeId pred, NodeId target) {
    return apply(Op::bce, {pred, target});
  }

  // -- values / rebinding ----------------------------------------------------

  int node_count() const { return static_cast<int>(nodes_.size()); }

  const Tensor<R>& value_of(NodeId id) const {
    if (id < 0 || id >= node_count()) {
      throw StateError("unknown node id " + std::to_string(id));
    }
    if (!nodes_[id].is_leaf && stale_) {
      throw StateError("graph values are stale; call evaluate() first");
    }
    return nodes_[id].value;
  }

  Tensor<R>& leaf_tensor(NodeId id) {
    if (id < 0 || id >= node_count() || !nodes_[id].is_leaf) {
      throw StateError("node " + std::to_string(id) + " is not a leaf");
    }
    return nodes_[id].value;
  }

  NodeId leaf_id(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) {
      throw StateError("no graph input named '" + name + "'");
    }
    return it->second;
  }

  // Replaces the values of a named leaf in place; shape must match.
  void bind(const std::string& name, const Tensor<R>& t) {
    Tensor<R>& dst = leaf_tensor(leaf_id(name));
    if (!dst.same_shape(t)) {
      throw ShapeError("bind '" + name + "': shape " + t.shape_str() +
                       " does not match " + dst.shape_str());
    }
    check_finite_leaf(name, t);
    dst.data() = t.data();
    stale_ = true;
  }

  void invalidate() { stale_ = true; }

  // Recomputes every non-leaf value in tape order.
  const Tensor<R>& evaluate(NodeId out) {
    if (stale_) {
      for (Node& node : nodes_) {
        if (node.is_leaf) continue;
        std::vector<const Tensor<R>*> ins;
        ins.reserve(node.args.size());
        for (NodeId id : node.args) ins.push_back(&nodes_[id].value);
        const KernelInfo<R>& info = kernel_info<R>(node.op);
        node.value = info.forward(ins, node.attrs);
        if (!node.value.all_finite()) {
          throw NumericError(std::string(info.name) +
                             " produced a non-finite value");
        }
      }
      stale_ = false;
    }
    return value_of(out);
  }

  // -- backward ---------------------------------------------------------------

  // Accumulates d(out)/d(leaf), seeded with `seed` (same shape as out), into
  // the grad buffers of every leaf tensor that requires_grad.
  void backward(NodeId out, const Tensor<R>& seed) {
    if (stale_) {
      throw StateError("backward before evaluate: graph values are stale");
    }
    const Tensor<R>& ov = value_of(out);
    if (!seed.same_shape(ov)) {
      throw ShapeError("backward seed shape " + seed.shape_str() +
                       " does not match output " + ov.shape_str());
    }
    // Which nodes need a gradient at all?
    std::vector<char> needs(nodes_.size(), 0);
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const Node& node = nodes_[i];
      if (node.is_leaf) {
        needs[i] = node.value.requires_grad() ? 1 : 0;
      } else {
        for (NodeId a : node.args) needs[i] |= needs[a];
      }
    }
    if (!needs[out]) return;

    std::vector<std::vector<R>> grads(nodes_.size());
    grads[out] = seed.data();
    for (NodeId id = out; id >= 0; --id) {
      Node& node = nodes_[id];
      if (node.is_leaf || grads[id].empty() || !needs[id]) continue;
      std::vector<const Tensor<R>*> ins;
      std::vector<std::vector<R>*> gin;
      ins.reserve(node.args.size());
      gin.reserve(node.args.size());
      for (NodeId a : node.args) {
        ins.push_back(&nodes_[a].value);
        if (needs[a]) {
          if (grads[a].empty()) grads[a].assign(nodes_[a].value.size(), R(0));
          gin.push_back(&grads[a]);
        } else {
          gin.push_back(nullptr);
        }
      }
      kernel_info<R>(node.op).backward(ins, node.value, grads[id], node.attrs,
                                       gin);
      grads[id].clear();
      grads[id].shrink_to_fit();
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Node& node = nodes_[i];
      if (!node.is_leaf || grads[i].empty()) continue;
      if (!node.value.requires_grad()) continue;
      std::vector<R>& g = node.value.grad();
      for (size_t j = 0; j < g.size(); ++j) g[j] += grads[i][j];
    }
  }

  // Seeds a 1x1 output with `seed`.
  void backward_scalar(NodeId out, R seed = R(1)) {
    Tensor<R> s(1, 1);
    s.data()[0] = seed;
    backward(out, s);
  }

  void zero_leaf_grads() {
    for (Node& node : nodes_) {
      if (node.is_leaf) node.value.zero_grad();
    }
  }

  // Leaf node ids in tape order (for grad checks and introspection).
  std::vector<NodeId> leaf_ids() const {
    std::vector<NodeId> out;
    for (int i = 0; i < node_count(); ++i) {
      if (nodes_[i].is_leaf) out.push_back(i);
    }
    return out;
  }

  const std::string& node_name(NodeId id) const { return nodes_[id].name; }

 private:
  struct Node {
    Op op;  // count_ marks a leaf
    std::vector<NodeId> args;
    OpAttrs attrs;
    Tensor<R> value;
    std::string name;
    bool is_leaf;
  };

  static void check_finite_leaf(const std::string& name, const Tensor<R>& t) {
    if (!t.all_finite()) {
      throw NumericError("leaf '" + name + "' holds non-finite values");
    }
  }

  NodeId next_id() const { return static_cast<NodeId>(nodes_.size()); }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> named_;
  bool stale_ = false;
};

// Central-difference gradient check on a scalar output.  Only meaningful in
// 64-bit arithmetic, which the static_assert enforces.  Returns the largest
// relative error |analytic - numeric| / max(1, |analytic|) over every
// coordinate of every leaf that requires a gradient.
template <typename R>
double grad_check(Graph<R>& g, NodeId out, double eps = 1e-5) {
  static_assert(std::is_same_v<R, double>,
                "grad_check must run in 64-bit precision");
  if (g.evaluate(out).size() != 1) {
    throw ShapeError("grad_check output must be a scalar");
  }
  g.zero_leaf_grads();
  g.backward_scalar(out, 1.0);

  double worst = 0.0;
  for (NodeId leaf : g.leaf_ids()) {
    Tensor<R>& t = g.leaf_tensor(leaf);
    if (!t.requires_grad()) continue;
    const std::vector<R> analytic = t.grad();
    for (size_t c = 0; c < t.size(); ++c) {
      const double orig = t.data()[c];
      t.data()[c] = orig + eps;
      g.invalidate();
      const double f_plus = g.evaluate(out).data()[0];
      t.data()[c] = orig - eps;
      g.invalidate();
      const double f_minus = g.evaluate(out).data()[0];
      t.data()[c] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double err =
          std::abs(analytic[c] - numeric) / std::max(1.0, std::abs(analytic[c]));
      worst = std::max(worst, err);
    }
  }
  g.invalidate();
  g.evaluate(out);
  return worst;
}

}  // namespace lmcd
