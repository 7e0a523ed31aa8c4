#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "seg25d/tensor.hpp"

namespace seg25d {

// A learned tensor with its accumulated gradient and momentum buffer.
template <class T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        gradient(value.shape()),
        velocity(value.shape()) {}

  std::string name;
  Tensor<T> value;
  Tensor<T> gradient;
  Tensor<T> velocity;

  void zero_grad() { gradient.fill(T{0}); }
};

namespace detail {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  Parameter<T>* param = nullptr;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

}  // namespace detail

// Handle to a value in a dynamically built reverse-mode graph. Nodes are
// reference counted: a graph is retained only while some Var refers to its
// root, and values computed from inputs that need no gradient carry no
// history at all.
template <class T>
class Var {
 public:
  using NodeT = detail::Node<T>;
  using BackwardFn = std::function<void(NodeT&)>;

  Var() = default;

  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(v);
    return Var(std::move(n));
  }

  // Differentiable input; its gradient is retained after backward().
  static Var leaf(Tensor<T> v) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  // Binds a parameter: backward() adds into p.gradient. The parameter must
  // outlive the graph.
  static Var param(Parameter<T>& p) {
    auto n = std::make_shared<NodeT>();
    n->value = p.value;
    n->requires_grad = true;
    n->param = &p;
    return Var(std::move(n));
  }

  // Builds an op result. `fn` receives the result node and must accumulate
  // into the parents' grad buffers for those parents that require grad.
  static Var make(Tensor<T> value, std::vector<Var> parents, BackwardFn fn) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward = std::move(fn);
    }
    return Var(std::move(n));
  }

  bool valid() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient of a leaf after backward(); zeros when nothing reached it.
  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
    return node_->grad;
  }

  void backward() const;

 private:
  explicit Var(std::shared_ptr<NodeT> n) : node_(std::move(n)) {}

  std::shared_ptr<NodeT> node_;
};

template <class T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw DimensionError("backward() needs a scalar root, got shape " +
                         shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->grad.empty()) continue;
    if (n->backward) {
      n->backward(*n);
      n->grad = Tensor<T>();
    } else if (n->param != nullptr) {
      auto g = n->param->gradient.data();
      auto src = n->grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
      n->grad = Tensor<T>();
    }
  }
}

}  // namespace seg25d
