#pragma once

// Reverse-mode differentiation over Tensor values.
//
// Every op records a Node holding its output value, its input handles and a
// backward rule. Backward rules are written in terms of the same recorded ops,
// so gradients can themselves be differentiated (create_graph = true), which
// the R1 penalty needs. Nodes get a global creation id; since an op's output
// is always created after its inputs, descending id order is a valid reverse
// topological order.

#include <atomic>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "togan/tensor.hpp"

namespace togan::ad {

template <typename T>
struct Node;

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  const Tensor<T>& value() const { return n_->value; }
  const Shape& shape() const { return n_->value.shape(); }
  int64_t dim(size_t i) const { return n_->value.dim(i); }
  int64_t size() const { return n_->value.size(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  Node<T>* node() const { return n_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return n_; }
  explicit operator bool() const { return static_cast<bool>(n_); }

  /// In-place access for optimizers. Only valid between graph evaluations.
  Tensor<T>& mutable_value() { return n_->value; }

 private:
  std::shared_ptr<Node<T>> n_;
};

/// grad_out, the op's own output, and which inputs need a gradient.
template <typename T>
using BackwardFn =
    std::function<std::vector<Var<T>>(const Var<T>& grad_out, const Var<T>& out, const std::vector<bool>& needs)>;

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
  uint64_t id = 0;
  bool requires_grad = false;
  const char* op = "leaf";
};

namespace detail {
inline std::atomic<uint64_t>& node_counter() {
  static std::atomic<uint64_t> c{0};
  return c;
}
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Scoped switch of graph recording for the current thread.
class GradMode {
 public:
  explicit GradMode(bool enabled) : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = enabled; }
  ~GradMode() { detail::grad_mode_flag() = prev_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool prev_;
};

struct NoGrad : GradMode {
  NoGrad() : GradMode(false) {}
};

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = detail::node_counter()++;
  n->requires_grad = requires_grad;
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

/// Records an op result. Inputs and backward rule are kept only when grad
/// mode is on and some input requires a gradient.
template <typename T>
Var<T> make_op(const char* name, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = name;
  n->id = detail::node_counter()++;
  bool any = false;
  if (grad_enabled())
    for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Gradients of a scalar `loss` with respect to `wrt`. Contributions along
/// every path are summed; an input that does not reach `loss` gets zeros.
/// With create_graph the returned gradients are themselves differentiable.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& loss, const std::vector<Var<T>>& wrt, bool create_graph = false) {
  if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));

  std::unordered_set<const Node<T>*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  // Post-order walk marking nodes that lie on a path from loss to a target.
  std::unordered_map<const Node<T>*, bool> relevant;
  std::vector<std::shared_ptr<Node<T>>> order;
  {
    struct Frame {
      std::shared_ptr<Node<T>> n;
      size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.ptr(), 0});
    relevant[loss.node()] = false;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->inputs.size()) {
        const auto& child = f.n->inputs[f.next++].ptr();
        if (!child->requires_grad && !targets.count(child.get())) continue;
        if (relevant.emplace(child.get(), false).second) stack.push_back({child, 0});
        continue;
      }
      bool rel = targets.count(f.n.get()) > 0;
      for (const auto& in : f.n->inputs) {
        auto it = relevant.find(in.node());
        rel = rel || (it != relevant.end() && it->second);
      }
      relevant[f.n.get()] = rel;
      if (rel) order.push_back(f.n);
      stack.pop_back();
    }
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->id > b->id; });

  GradMode mode(create_graph);
  std::unordered_map<const Node<T>*, Var<T>> grads;
  grads[loss.node()] = constant(Tensor<T>(loss.shape(), T(1)));

  for (const auto& n : order) {
    auto git = grads.find(n.get());
    if (git == grads.end() || n->inputs.empty() || !n->backward) continue;
    std::vector<bool> needs(n->inputs.size());
    bool any = false;
    for (size_t i = 0; i < needs.size(); ++i) {
      auto it = relevant.find(n->inputs[i].node());
      needs[i] = it != relevant.end() && it->second;
      any = any || needs[i];
    }
    if (!any) continue;
    Var<T> g = git->second;
    if (!targets.count(n.get())) grads.erase(git);
    auto in_grads = n->backward(g, Var<T>(n), needs);
    for (size_t i = 0; i < needs.size(); ++i) {
      if (!needs[i] || !in_grads[i]) continue;
      const Node<T>* key = n->inputs[i].node();
      auto [it, fresh] = grads.emplace(key, in_grads[i]);
      if (!fresh) it->second = add(it->second, in_grads[i]);
    }
  }

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    out.push_back(it != grads.end() ? it->second : constant(Tensor<T>(w.shape(), T(0))));
  }
  return out;
}

/// First-order convenience: gradient values per parameter.
template <typename T>
std::vector<Tensor<T>> backward(const Var<T>& loss, const std::vector<Var<T>>& params) {
  auto gs = grad(loss, params, false);
  std::vector<Tensor<T>> out;
  out.reserve(gs.size());
  for (auto& g : gs) out.push_back(g.value());
  return out;
}

}  // namespace togan::ad
