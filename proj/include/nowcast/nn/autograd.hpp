#pragma once

// Reverse-mode differentiation over a dynamically recorded graph. Each op returns a Var whose node
// keeps its inputs and a backward closure that adds into the inputs' gradients.

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nowcast/nn/tensor.hpp"

namespace nowcast::nn {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily
  bool requires_grad = false;
  std::string op;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  const Shape& shape() const { return value.shape; }

  Tensor& grad_buffer() {
    if (grad.shape != value.shape) grad = Tensor(value.shape);
    return grad;
  }
};

namespace detail_ag {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording in its scope (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail_ag::grad_enabled) { detail_ag::grad_enabled = false; }
  ~NoGradGuard() { detail_ag::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail_ag::grad_enabled; }

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "constant";
  return n;
}

inline Var leaf(Tensor t, bool requires_grad = true) {
  auto n = constant(std::move(t));
  n->requires_grad = requires_grad;
  n->op = "leaf";
  return n;
}

/// Wrap an op result; the backward closure is kept only when some input needs a gradient.
inline Var make_result(std::string op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = std::move(op);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return n;
}

/// Accumulate d(root)/d(node) for every node reachable from `root`. The seed defaults to ones.
inline void backward(const Var& root, const Tensor* seed = nullptr) {
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto& g = root->grad_buffer();
  if (seed) {
    detail::require(seed->shape == root->value.shape, "backward seed has the wrong shape");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
  } else {
    for (auto& v : g.data) v += 1.0f;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  // Release the graph eagerly; leaves keep their accumulated gradients.
  for (Node* n : order) {
    n->inputs.clear();
    n->backward = nullptr;
  }
}

}  // namespace nowcast::nn
