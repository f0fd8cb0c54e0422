#include "phymoe/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace phymoe {

namespace {
std::atomic<uint64_t> g_next_id{1};
}

void Node::accumulate(const Tensor& g) {
  Tensor& dst = grad_ref();
  if (!dst.same_shape(g)) throw std::logic_error("gradient shape mismatch");
  dst.add_inplace(g);
}

void Node::accumulate_at(int64_t index, double g) { grad_ref()[index] += g; }

Tensor& Node::grad_ref() {
  if (!grad_ready) {
    grad = Tensor::zeros(value.shape());
    grad_ready = true;
  }
  return grad;
}

Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1);
  return Var(std::move(n));
}

Var make_param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "param";
  n->id = g_next_id.fetch_add(1);
  return Var(std::move(n));
}

Var make_node(Tensor value, const char* op, std::vector<Var> parents,
              std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool any_grad = false;
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    any_grad = any_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  n->requires_grad = any_grad;
  if (any_grad) n->backward_fn = std::move(backward_fn);
  n->id = g_next_id.fetch_add(1);
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined()) throw std::invalid_argument("backward on undefined var");
  if (root.size() != 1) throw std::invalid_argument("backward root must be scalar");

  // Collect the reachable grad-requiring subgraph.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    nodes.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  // Creation order is topological; process children before parents.
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  root.node()->grad_ref()[0] += 1.0;
  for (Node* n : nodes) {
    if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
  }
}

std::vector<std::string> op_chain(const Var& v) {
  std::vector<std::string> chain;
  NodePtr cur = v.node();
  while (cur && !cur->parents.empty()) {
    chain.emplace_back(cur->op);
    cur = cur->parents.front();
  }
  return chain;
}

Var ParamStore::create(const std::string& name, const std::function<Tensor()>& init) {
  auto it = params_.find(name);
  if (it != params_.end()) return it->second;
  Var v = make_param(init());
  params_.emplace(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) != 0; }

void ParamStore::zero_grads() {
  for (auto& [name, v] : params_) v.zero_grad();
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, v] : params_) n += v.size();
  return n;
}

Tensor init_normal(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor init_he(std::vector<int> shape, int fan_in, Rng& rng) {
  return init_normal(std::move(shape), std::sqrt(2.0 / std::max(1, fan_in)), rng);
}

Tensor init_zeros(std::vector<int> shape) { return Tensor::zeros(std::move(shape)); }

Tensor init_full(std::vector<int> shape, double v) {
  return Tensor::full(std::move(shape), v);
}

}  // namespace phymoe
