#pragma once

// Dense float64 tensor with reverse-mode gradient recording.
//
// A Tensor is a shared handle: copying it aliases the same storage. Tensors
// produced by ops are immutable; only leaf tensors (parameters) have their
// data mutated, and only by the optimizer. Every op whose inputs require
// gradients records its parents and a backward closure on the output node.
// backward() linearizes the recorded graph into a Tape (topological order)
// and replays it in reverse.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace crossvit {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Receives this node's accumulated output gradient and pushes
  // contributions into the parents' grad buffers.
  std::function<void(const std::vector<double>&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> data(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl().shape.at(axis); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  // Mutable access is for leaves only (initialization, optimizer updates).
  std::span<double> mutable_data() {
    if (!impl().is_leaf())
      throw ContractError("mutable_data() on a non-leaf tensor produced by '" +
                          std::string(impl().op) + "'");
    return impl().data;
  }

  double item() const {
    if (numel() != 1)
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl().data[0];
  }
  double operator[](std::size_t i) const { return impl().data[i]; }
  double at(std::size_t row, std::size_t col) const {
    return impl().data[row * impl().shape.back() + col];
  }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool flag) {
    if (!impl().is_leaf())
      throw ContractError("requires_grad can only be set on leaf tensors");
    impl().requires_grad = flag;
  }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  std::span<double> mutable_grad() { return impl().grad_buffer(); }
  void zero_grad() { impl().grad.clear(); }

  const char* op_name() const { return impl().op; }

  // Deep copy of the values as a fresh leaf.
  Tensor clone(bool requires_grad) const {
    return Tensor(impl().shape, impl().data, requires_grad);
  }
  // Same values, no graph history.
  Tensor detach() const { return clone(false); }

  detail::TensorImpl& impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
  }
  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }

  // Builds an op output. Parents that do not require grad are not retained.
  static Tensor make_result(
      Shape shape, std::vector<double> data, const char* op,
      std::vector<std::shared_ptr<detail::TensorImpl>> parents,
      std::function<void(const std::vector<double>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(data), false);
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    out.impl_->op = op;
    if (any) {
      out.impl_->requires_grad = true;
      out.impl_->parents = std::move(parents);
      out.impl_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  Tensor(Shape shape, std::vector<double> data, bool requires_grad)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    for (std::size_t d : shape)
      if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape));
    const std::size_t n = shape_numel(shape);
    if (data.empty()) data.assign(n, 0.0);
    if (data.size() != n)
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Topologically ordered record of the operations reachable from a root.
// Every node appears after all of its parents.
class Tape {
 public:
  explicit Tape(const Tensor& root) {
    std::unordered_set<const detail::TensorImpl*> seen;
    // Iterative post-order DFS; graphs can be thousands of nodes deep.
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.handle().get(), 0);
    seen.insert(root.handle().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::TensorImpl* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second)
          stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<detail::TensorImpl*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<detail::TensorImpl*> order_;
};

// Populates grad on every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate ones are reset.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("backward() on a loss that does not require grad");
  Tape tape(loss);
  for (auto* node : tape.order())
    if (!node->is_leaf()) node->grad.clear();
  loss.impl().grad_buffer()[0] += 1.0;
  const auto& order = tape.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(node->grad);
  }
}

}  // namespace crossvit
