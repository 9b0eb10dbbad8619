#pragma once

#include <functional>
#include <limits>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "convkit/error.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

// ---------------------------------------------------------------------------
// Op registry. Every op tag used on a tape must be registered (op functions
// self-register on first use); recording an unregistered tag is an error so
// typos and stale tags fail loudly instead of producing silent wrong math.
// ---------------------------------------------------------------------------

inline std::unordered_set<std::string>& op_registry() {
  static std::unordered_set<std::string> reg;
  return reg;
}

inline bool register_op(const std::string& tag) {
  op_registry().insert(tag);
  return true;
}

// ---------------------------------------------------------------------------
// Kink meter. ReLU and max-pool report how close a forward pass came to a
// non-differentiable point; the gradient checker reads the running minimum
// to mask finite-difference coordinates that straddle a kink.
// ---------------------------------------------------------------------------

inline double& kink_margin_ref() {
  thread_local double margin = std::numeric_limits<double>::infinity();
  return margin;
}

inline void kink_reset() { kink_margin_ref() = std::numeric_limits<double>::infinity(); }

inline void kink_note(double m) {
  if (m < kink_margin_ref()) kink_margin_ref() = m;
}

inline double kink_margin() { return kink_margin_ref(); }

// ---------------------------------------------------------------------------
// Tape: dynamically recorded DAG of Nodes. Values are computed eagerly by
// the op functions; each recorded node carries a closure that pushes its
// output gradient back onto its inputs.
// ---------------------------------------------------------------------------

class Tape;

using BackwardFn = std::function<void(Tape&, const Tensor& gout)>;

struct Node {
  int id = -1;
  std::string op;
  std::vector<int> inputs;
  Tensor value;
  bool requires_grad = false;
  bool is_leaf = false;
  BackwardFn backward;  // empty for leaves and grad-free ops
};

class Tape {
 public:
  // Register an input tensor. Parameters pass requires_grad = true.
  int leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.id = static_cast<int>(nodes_.size());
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return nodes_.back().id;
  }

  // Record an op node. Inputs must already be on the tape (ids monotone), so
  // cycles are impossible by construction.
  int record(const std::string& op, std::vector<int> inputs, Tensor value, BackwardFn backward) {
    if (!op_registry().count(op)) throw UnknownOpError("unknown op '" + op + "'");
    const int next = static_cast<int>(nodes_.size());
    bool req = false;
    for (int i : inputs) {
      if (i < 0 || i >= next)
        throw ValueError("record(" + op + "): input id " + std::to_string(i) +
                         " not on tape (next id " + std::to_string(next) + ")");
      req = req || nodes_[static_cast<std::size_t>(i)].requires_grad;
    }
    Node n;
    n.id = next;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = req;
    n.backward = req ? std::move(backward) : BackwardFn{};
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    ++num_ops_;
    return next;
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_ops() const { return num_ops_; }

  // Add a gradient contribution to node `id` (used by backward closures).
  void accum(int id, const Tensor& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;  // dead branch; skip the work
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.empty())
      slot = g;
    else
      axpy(1.0, g, slot);
  }

  // Gradient of node `id` after backward(); zeros if unreachable from loss.
  Tensor grad(int id) const {
    const auto& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.empty()) return Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    return slot;
  }

  // Reverse sweep from a scalar loss node.
  void backward(int loss_id) {
    if (loss_id < 0 || loss_id >= num_nodes())
      throw ValueError("backward: node id " + std::to_string(loss_id) + " not on tape");
    const Tensor& lv = value(loss_id);
    if (lv.size() != 1)
      throw ValueError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    for (auto& g : grads_) g = Tensor();
    grads_[static_cast<std::size_t>(loss_id)] = Tensor::ones(lv.shape());
    for (int id = loss_id; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.backward) continue;
      const auto& g = grads_[static_cast<std::size_t>(id)];
      if (g.empty()) continue;  // not reachable from the loss
      n.backward(*this, g);
    }
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
    num_ops_ = 0;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  int num_ops_ = 0;
};

// ---------------------------------------------------------------------------
// Core arithmetic ops (NN-specific ops live in layers.hpp).
// ---------------------------------------------------------------------------

inline int t_add(Tape& t, int a, int b) {
  static const bool r = register_op("add");
  (void)r;
  Tensor v = t.value(a) + t.value(b);
  return t.record("add", {a, b}, std::move(v), [a, b](Tape& tp, const Tensor& g) {
    tp.accum(a, g);
    tp.accum(b, g);
  });
}

inline int t_sub(Tape& t, int a, int b) {
  static const bool r = register_op("sub");
  (void)r;
  Tensor v = t.value(a) - t.value(b);
  return t.record("sub", {a, b}, std::move(v), [a, b](Tape& tp, const Tensor& g) {
    tp.accum(a, g);
    tp.accum(b, scale(g, -1.0));
  });
}

inline int t_mul(Tape& t, int a, int b) {
  static const bool r = register_op("mul");
  (void)r;
  Tensor v = t.value(a) * t.value(b);
  return t.record("mul", {a, b}, std::move(v), [a, b](Tape& tp, const Tensor& g) {
    tp.accum(a, g * tp.value(b));
    tp.accum(b, g * tp.value(a));
  });
}

inline int t_scale(Tape& t, int a, double c) {
  static const bool r = register_op("scale");
  (void)r;
  Tensor v = scale(t.value(a), c);
  return t.record("scale", {a}, std::move(v),
                  [a, c](Tape& tp, const Tensor& g) { tp.accum(a, scale(g, c)); });
}

inline int t_matmul(Tape& t, int a, int b) {
  static const bool r = register_op("matmul");
  (void)r;
  Tensor v = matmul(t.value(a), t.value(b));
  return t.record("matmul", {a, b}, std::move(v), [a, b](Tape& tp, const Tensor& g) {
    tp.accum(a, matmul(g, transpose(tp.value(b))));
    tp.accum(b, matmul(transpose(tp.value(a)), g));
  });
}

// Broadcast-add a rank-1 tensor along `axis` of a (the bias-add pattern).
inline int t_bias_add(Tape& t, int a, int b, int axis) {
  static const bool r = register_op("bias_add");
  (void)r;
  Tensor v = elementwise_bcast(EwOp::add, t.value(a), t.value(b), axis);
  return t.record("bias_add", {a, b}, std::move(v), [a, b, axis](Tape& tp, const Tensor& g) {
    tp.accum(a, g);
    std::vector<int> axes;
    for (int i = 0; i < g.rank(); ++i)
      if (i != axis) axes.push_back(i);
    Tensor gb = axes.empty() ? g : reduce(ReduceOp::sum, g, axes);
    tp.accum(b, gb);
  });
}

inline int t_sum(Tape& t, int a) {
  static const bool r = register_op("sum");
  (void)r;
  Tensor v = Tensor::scalar(reduce_all(ReduceOp::sum, t.value(a)));
  return t.record("sum", {a}, std::move(v), [a](Tape& tp, const Tensor& g) {
    tp.accum(a, Tensor::full(tp.value(a).shape(), g[0]));
  });
}

inline int t_mean(Tape& t, int a) {
  static const bool r = register_op("mean");
  (void)r;
  const double n = static_cast<double>(t.value(a).size());
  Tensor v = Tensor::scalar(reduce_all(ReduceOp::sum, t.value(a)) / n);
  return t.record("mean", {a}, std::move(v), [a, n](Tape& tp, const Tensor& g) {
    tp.accum(a, Tensor::full(tp.value(a).shape(), g[0] / n));
  });
}

inline int t_reshape(Tape& t, int a, Shape shape) {
  static const bool r = register_op("reshape");
  (void)r;
  Tensor v = t.value(a).reshaped(shape);
  return t.record("reshape", {a}, std::move(v), [a](Tape& tp, const Tensor& g) {
    tp.accum(a, g.reshaped(tp.value(a).shape()));
  });
}

}  // namespace convkit
