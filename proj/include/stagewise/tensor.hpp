// SPDX-License-Identifier: Apache-2.0
//
// Dense float32 tensors with tape-free reverse-mode autodiff. Every op that
// consumes a tensor with requires_grad records a Node on its output; calling
// backward() on a scalar walks those nodes in reverse topological order.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stagewise {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// One recorded operation. `backward` reads the output gradient and
/// accumulates into every input that requires grad.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
  const char* name = "";
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty when no gradient is held
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  bool has_grad() const { return !grad.empty(); }
  std::vector<float>& ensure_grad();
};

/// Handle with shared ownership of its storage. Copying a Tensor aliases;
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0F, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<float> grad();
  std::span<const float> grad() const;
  /// Allocates (if needed) and zero-fills the gradient buffer.
  void zero_grad();
  /// Drops the gradient buffer entirely.
  void clear_grad();

  bool is_leaf() const;
  const std::shared_ptr<Node>& grad_fn() const;

  Tensor clone() const;
  /// Same storage, no history.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  /// Reverse-mode sweep from this scalar.
  void backward() const;

  TensorImpl& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// True when an op over `inputs` has to record a node.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Attaches a node to `out` and marks it as requiring grad.
void attach(Tensor& out, const char* name, std::vector<Tensor> inputs,
            std::function<void(const TensorImpl& out)> backward);

}  // namespace detail

}  // namespace stagewise
