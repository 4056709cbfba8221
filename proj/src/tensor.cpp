// SPDX-License-Identifier: Apache-2.0

#include "gret/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace gret {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
}

ImplPtr new_impl(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (numel_of(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(new_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_impl({1}, {value}, requires_grad));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at: index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("at: index out of range for " + shape_str(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

void Tensor::set_requires_grad(bool value) {
  if (!impl_->is_leaf && !value) throw ContractError("set_requires_grad: cannot detach an op result in place");
  impl_->requires_grad = value;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  return Tensor(new_impl(impl_->shape, impl_->data, false));
}

namespace autodiff {

namespace {
thread_local bool g_grad_enabled = true;
}

Graph& Graph::current() {
  thread_local Graph graph;
  return graph;
}

std::size_t Graph::run_backward() {
  std::size_t visited = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++visited;
    if (it->output->grad.empty()) continue;  // no gradient reached this node
    it->backward(*it->output, it->inputs);
  }
  return visited;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::span<double> grad_of(const ImplPtr& impl) {
  if (!impl || !impl->requires_grad) return {};
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool any_requires_grad(std::span<const Tensor> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  const bool record = grad_enabled() && any_requires_grad(std::span<const Tensor>(inputs));
  auto impl = new_impl(std::move(shape), std::move(data), record);
  impl->is_leaf = !record;
  if (record) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.defined() ? t.impl() : nullptr);
    node.output = impl;
    node.backward = std::move(backward);
    Graph::current().record(std::move(node));
  }
  return Tensor(std::move(impl));
}

}  // namespace autodiff

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  auto& graph = autodiff::Graph::current();
  if (graph.empty() || loss.impl()->is_leaf) {
    graph.clear();
    throw ContractError("backward: loss is not connected to any recorded operation");
  }
  loss.impl()->grad.assign(1, 1.0);
  graph.run_backward();
  graph.clear();
}

}  // namespace gret
