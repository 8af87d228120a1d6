// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "gemm.hpp"
#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"

namespace stagewise {

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (detail::needs_grad({&a, &b})) {
    detail::attach(out, "add", {a, b}, [ia = a.impl_ptr(), ib = b.impl_ptr()](const TensorImpl& o) {
      for (auto* in : {ia.get(), ib.get()}) {
        if (!in->requires_grad) continue;
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (detail::needs_grad({&a, &b})) {
    detail::attach(out, "mul", {a, b}, [ia = a.impl_ptr(), ib = b.impl_ptr()](const TensorImpl& o) {
      if (ia->requires_grad) {
        auto& g = ia->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ib->data[i];
      }
      if (ib->requires_grad) {
        auto& g = ib->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ia->data[i];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0F ? in[i] : 0.0F;
  if (detail::needs_grad({&x})) {
    detail::attach(out, "relu", {x}, [ix = x.impl_ptr()](const TensorImpl& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ix->data[i] > 0.0F) g[i] += o.grad[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (detail::needs_grad({&x})) {
    detail::attach(out, "sum", {x}, [ix = x.impl_ptr()](const TensorImpl& o) {
      auto& g = ix->ensure_grad();
      const float go = o.grad[0];
      for (auto& v : g) v += go;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.dim(1);
  Tensor out({m, n});
  detail::as_mat(out.data().data(), m, n).noalias() =
      detail::as_mat(a.data().data(), m, k) * detail::as_mat(b.data().data(), k, n);
  if (detail::needs_grad({&a, &b})) {
    detail::attach(out, "matmul", {a, b},
                   [ia = a.impl_ptr(), ib = b.impl_ptr(), m, k, n](const TensorImpl& o) {
                     auto go = detail::as_mat(o.grad.data(), m, n);
                     if (ia->requires_grad) {
                       detail::as_mat(ia->ensure_grad().data(), m, k).noalias() +=
                           go * detail::as_mat(ib->data.data(), k, n).transpose();
                     }
                     if (ib->requires_grad) {
                       detail::as_mat(ib->ensure_grad().data(), k, n).noalias() +=
                           detail::as_mat(ia->data.data(), m, k).transpose() * go;
                     }
                   });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const auto n = x.dim(0);
  const auto in = x.dim(1);
  const auto out_features = weight.dim(0);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_features)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(out_features) + " outputs");
  }
  Tensor out({n, out_features});
  auto y = detail::as_mat(out.data().data(), n, out_features);
  y.noalias() = detail::as_mat(x.data().data(), n, in) *
                detail::as_mat(weight.data().data(), out_features, in).transpose();
  if (bias.defined()) {
    auto b = bias.data();
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t c = 0; c < out_features; ++c) y(r, c) += b[static_cast<std::size_t>(c)];
    }
  }
  if (detail::needs_grad({&x, &weight, &bias})) {
    std::shared_ptr<TensorImpl> ib = bias.defined() ? bias.impl_ptr() : nullptr;
    detail::attach(
        out, "linear", {x, weight, bias},
        [ix = x.impl_ptr(), iw = weight.impl_ptr(), ib, n, in, out_features](const TensorImpl& o) {
          auto go = detail::as_mat(o.grad.data(), n, out_features);
          if (ix->requires_grad) {
            detail::as_mat(ix->ensure_grad().data(), n, in).noalias() +=
                go * detail::as_mat(iw->data.data(), out_features, in);
          }
          if (iw->requires_grad) {
            detail::as_mat(iw->ensure_grad().data(), out_features, in).noalias() +=
                go.transpose() * detail::as_mat(ix->data.data(), n, in);
          }
          if (ib && ib->requires_grad) {
            auto& g = ib->ensure_grad();
            for (std::int64_t c = 0; c < out_features; ++c) {
              double acc = 0.0;
              for (std::int64_t r = 0; r < n; ++r) acc += go(r, c);
              g[static_cast<std::size_t>(c)] += static_cast<float>(acc);
            }
          }
        });
  }
  return out;
}

Tensor flatten(const Tensor& x) {
  const auto n = x.dim(0);
  return x.reshape({n, x.numel() / n});
}

Tensor dropout(const Tensor& x, float p, bool training, std::mt19937_64& rng) {
  if (p < 0.0F || p >= 1.0F) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0F) return x;
  const float scale = 1.0F / (1.0F - p);
  std::uniform_real_distribution<float> uniform(0.0F, 1.0F);
  std::vector<float> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = uniform(rng) >= p ? scale : 0.0F;
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * mask[i];
  if (detail::needs_grad({&x})) {
    detail::attach(out, "dropout", {x},
                   [ix = x.impl_ptr(), mask = std::move(mask)](const TensorImpl& o) {
                     auto& g = ix->ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
                   });
  }
  return out;
}

}  // namespace stagewise
