#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace riunet {

using Index = Eigen::Index;

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index shape_numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

inline std::string shape_str(const std::vector<Index>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
[[noreturn]] inline void fail(const std::string& msg) { throw TensorError(msg); }

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Thread-local switch; ops record no tape while disabled.
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Scoped "no tape" region for inference passes.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// One node of the reverse-mode tape. `backprop` pulls this node's grad into
// its parents' grads; accumulation is additive so shared parents collect
// contributions from every path.
template <class Scalar>
struct TensorNode {
  std::vector<Index> shape;
  ArrayX<Scalar> data;
  ArrayX<Scalar> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  bool is_leaf() const { return parents.empty() && !backprop; }

  ArrayX<Scalar>& grad_ref() {
    if (grad.size() != data.size()) grad = ArrayX<Scalar>::Zero(data.size());
    return grad;
  }
};

template <class Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;

  Tensor() = default;

  static Tensor zeros(std::vector<Index> shape, bool requires_grad = false) {
    return filled(std::move(shape), Scalar(0), requires_grad);
  }

  static Tensor filled(std::vector<Index> shape, Scalar value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data = ArrayX<Scalar>::Constant(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_array(std::vector<Index> shape, ArrayX<Scalar> values,
                           bool requires_grad = false) {
    detail::check(shape_numel(shape) == values.size(),
                  "tensor shape " + shape_str(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_values(std::vector<Index> shape, const std::vector<Scalar>& values,
                            bool requires_grad = false) {
    ArrayX<Scalar> a(static_cast<Index>(values.size()));
    for (Index i = 0; i < a.size(); ++i) a[i] = values[static_cast<size_t>(i)];
    return from_array(std::move(shape), std::move(a), requires_grad);
  }

  static Tensor scalar(Scalar v) { return filled({}, v); }

  // Assembles an op result; the closure is attached only when some parent
  // tracks gradients and taping is enabled.
  static Tensor make_op(std::vector<Index> shape, ArrayX<Scalar> data,
                        std::vector<std::shared_ptr<Node>> parents,
                        std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    }
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<Index>& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index extent(Index i) const { return node_->shape[static_cast<size_t>(i)]; }
  Index numel() const { return node_->data.size(); }

  ArrayX<Scalar>& data() { return node_->data; }
  const ArrayX<Scalar>& data() const { return node_->data; }

  Scalar value() const {
    detail::check(numel() == 1, "value() requires a scalar tensor, got shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) {
    detail::check(node_->is_leaf(), "requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
  }

  bool grad_written() const { return node_->grad.size() == node_->data.size(); }

  // Reads as zeros when no backward pass has reached this tensor.
  const ArrayX<Scalar>& grad() const { return node_->grad_ref(); }

  void zero_grad() { node_->grad_ref().setZero(); }
  void drop_grad() { node_->grad.resize(0); }

  // Reverse-mode sweep from a scalar. Visits the tape in reverse topological
  // order; with release_graph the data and grad buffers of interior nodes are
  // freed as soon as their closure has run (their consumers always run
  // earlier), which bounds peak memory during training. Leaves keep both.
  void backward(bool release_graph = true) {
    detail::check(defined() && numel() == 1,
                  "backward expects a scalar loss, got shape " + shape_str(shape()));
    detail::check(node_->requires_grad,
                  "backward called on a tensor that does not track gradients");

    std::vector<std::shared_ptr<Node>> order;
    topo_sort(order);
    node_->grad_ref()[0] = Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node& n = **it;
      if (n.backprop) n.backprop(n);
      if (release_graph && !n.is_leaf()) {
        n.data.resize(0);
        n.grad.resize(0);
        n.backprop = nullptr;
        n.parents.clear();
      }
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Iterative DFS postorder; reversed it yields a topological order in which
  // every consumer precedes its inputs.
  void topo_sort(std::vector<std::shared_ptr<Node>>& order) const {
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
    stack.emplace_back(node_, 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        auto parent = n->parents[next++];
        if (parent->requires_grad && !visited.count(parent.get())) {
          visited.insert(parent.get());
          stack.emplace_back(std::move(parent), 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

template <class Scalar>
void backward(Tensor<Scalar>& loss, bool release_graph = true) {
  loss.backward(release_graph);
}

}  // namespace riunet
