#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "jtss/common.hpp"
#include "jtss/nn.hpp"

namespace jtss::nn {

std::string Tensor::shape_str() const {
  return "[" + std::to_string(b) + ", " + std::to_string(c) + ", " + std::to_string(t) + "]";
}

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.b, value.c, value.t);
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || (in && in->requires_grad);
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward = std::move(backward_fn);
  }
  return n;
}

void backward(const Var& root, double seed) {
  if (!root || root->value.size() != 1) throw Error("backward: root must be a scalar node");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer().data[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor uniform_fan_in(int c_out, int c_in, int k, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * k));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w(c_out, c_in, k);
  for (double& v : w.data) v = u(rng);
  return w;
}

Tensor uniform_bias(int c_out, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor b(1, c_out, 1);
  for (double& v : b.data) v = u(rng);
  return b;
}

}  // namespace jtss::nn
