// SPDX-License-Identifier: Apache-2.0
#include "stagewise/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "stagewise/errors.hpp"

namespace stagewise {

namespace {
thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
  }
}
}  // namespace

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<float>& TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0F);
  return grad;
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
  validate_shape(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, value, requires_grad); }

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }

float Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ContractError("item() needs a single-element tensor, got " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf() && !flag) throw ContractError("cannot clear requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

bool Tensor::has_grad() const { return impl_->has_grad(); }
std::span<float> Tensor::grad() { return impl_->grad; }
std::span<const float> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0F);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }
const std::shared_ptr<Node>& Tensor::grad_fn() const { return impl_->grad_fn; }

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, impl_->data, false);
  return out;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return from_impl(std::move(impl));
}

Tensor Tensor::reshape(Shape shape) const {
  validate_shape(shape);
  if (numel_of(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(impl_->shape) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), impl_->data, false);
  if (detail::needs_grad({this})) {
    detail::attach(out, "reshape", {*this}, [src = impl_](const TensorImpl& o) {
      auto& g = src->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
  }
  return out;
}

void Tensor::backward() const {
  if (impl_->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw ContractError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<TensorImpl*> order;
  std::unordered_set<const TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (child->grad_fn && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  impl_->ensure_grad();
  impl_->grad[0] += 1.0F;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->has_grad()) continue;
    node->grad_fn->backward(*node);
    // Intermediate gradients are not retained once propagated.
    if (node != impl_.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void attach(Tensor& out, const char* name, std::vector<Tensor> inputs,
            std::function<void(const TensorImpl& out)> backward) {
  auto node = std::make_shared<Node>();
  node->name = name;
  for (auto& t : inputs) {
    if (t.defined() && t.requires_grad()) node->inputs.push_back(t.impl_ptr());
  }
  node->backward = std::move(backward);
  out.impl().grad_fn = std::move(node);
  out.impl().requires_grad = true;
}

}  // namespace detail

}  // namespace stagewise
