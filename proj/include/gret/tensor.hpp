// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Every op whose operands
// require gradients appends one node to the calling thread's Graph; backward()
// walks that tape in reverse insertion order and then frees it.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gret {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Violated precondition of an operation (not a shape mismatch).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first gradient reaches it
  bool requires_grad = false;
  bool is_leaf = true;
};

using ImplPtr = std::shared_ptr<TensorImpl>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access. Only valid on tensors not yet consumed by a recorded op.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; a zero buffer of matching size when no gradient arrived.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const ImplPtr& impl() const { return impl_; }

 private:
  ImplPtr impl_;
};

namespace autodiff {

/// Called once per recorded node during backward. `out` carries the incoming
/// gradient in out.grad; implementations add into grad_of(inputs[i]).
using BackwardFn = std::function<void(const TensorImpl& out, std::span<const ImplPtr> inputs)>;

struct Node {
  std::vector<ImplPtr> inputs;
  ImplPtr output;
  BackwardFn backward;
};

class Graph {
 public:
  static Graph& current();

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }
  /// Reverse traversal. Returns the number of nodes visited.
  std::size_t run_backward();

 private:
  std::vector<Node> nodes_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Gradient accumulator for an operand; empty span when it needs no gradient.
std::span<double> grad_of(const ImplPtr& impl);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
bool any_requires_grad(std::span<const Tensor> inputs);

/// Wraps a freshly computed buffer as an op result, recording a node when
/// gradients are enabled and any input requires them.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward);

}  // namespace autodiff

/// Seeds d(loss)/d(loss) = 1 and propagates to every leaf that requires grad.
/// Leaf gradients accumulate across calls until zero_grad(). Frees the graph.
void backward(const Tensor& loss);

}  // namespace gret
