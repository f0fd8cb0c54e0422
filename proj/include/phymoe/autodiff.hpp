#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "phymoe/rng.hpp"
#include "phymoe/tensor.hpp"

namespace phymoe {

// Reverse-mode autodiff on an eagerly evaluated graph. Each op records its
// parents and a closure that scatters the output gradient back to them.
// Node ids are creation-ordered, so reverse-id order is a topological order.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool grad_ready = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  uint64_t id = 0;

  void accumulate(const Tensor& g);
  void accumulate_at(int64_t index, double g);
  Tensor& grad_ref();  // zero-initialized on demand
};

/// Value-semantics handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& val_mut() const { return node_->value; }
  const Tensor& grad() const { return node_->grad_ref(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  NodePtr node() const { return node_; }

  const std::vector<int>& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }
  double scalar() const { return node_->value[0]; }

  void zero_grad() const {
    if (node_) {
      node_->grad = Tensor();
      node_->grad_ready = false;
    }
  }

 private:
  NodePtr node_;
};

Var make_const(Tensor value);
Var make_param(Tensor value);
Var make_node(Tensor value, const char* op, std::vector<Var> parents,
              std::function<void(Node&)> backward_fn);

// Backpropagate from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

// Names of ops along the chain from `v` down to (excluding) leaves,
// following the first parent at each step; used by structural tests.
std::vector<std::string> op_chain(const Var& v);

/// Named parameter registry. Iteration order is lexicographic, which keeps
/// optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  // Creates the parameter on first call, returns the existing one after.
  Var create(const std::string& name, const std::function<Tensor()>& init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const;

  void zero_grads();
  int64_t total_size() const;
  size_t count() const { return params_.size(); }
  const std::map<std::string, Var>& items() const { return params_; }
  std::map<std::string, Var>& items_mut() { return params_; }

 private:
  std::map<std::string, Var> params_;
};

// Common initializers.
Tensor init_normal(std::vector<int> shape, double stddev, Rng& rng);
Tensor init_he(std::vector<int> shape, int fan_in, Rng& rng);
Tensor init_zeros(std::vector<int> shape);
Tensor init_full(std::vector<int> shape, double v);

}  // namespace phymoe
