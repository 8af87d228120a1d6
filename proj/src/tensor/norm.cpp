// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"

namespace stagewise {

namespace {

// Shared kernel: input viewed as N×C×S with S = H·W (or 1 for the 1-D case).
Tensor batch_norm_impl(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opts,
                       std::int64_t spatial, const char* op) {
  const auto n = input.dim(0);
  const auto c = input.dim(1);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->ndim() != 1 || t->dim(0) != c) {
      throw ShapeError(std::string(op) + ": per-channel tensor " + shape_str(t->shape()) +
                       " does not match " + std::to_string(c) + " channels");
    }
  }
  if (!(opts.eps > 0.0F)) throw ConfigError(std::string(op) + ": eps must be > 0");
  const std::int64_t count = n * spatial;
  if (opts.training && count < 2) {
    throw ShapeError(std::string(op) + ": degenerate batch, training mode needs N*H*W >= 2 (got " +
                     std::to_string(count) + ")");
  }

  Tensor out(input.shape());
  const float* x = input.data().data();
  float* y = out.data().data();
  const float* gm = gamma.data().data();
  const float* bt = beta.data().data();
  float* rm = running_mean.data().data();
  float* rv = running_var.data().data();

  std::vector<float> xhat(static_cast<std::size_t>(input.numel()));
  std::vector<float> inv_std(static_cast<std::size_t>(c));

  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    double var = 0.0;
    if (opts.training) {
      for (std::int64_t i = 0; i < n; ++i) {
        const float* src = x + (i * c + ch) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) mean += src[s];
      }
      mean /= static_cast<double>(count);
      for (std::int64_t i = 0; i < n; ++i) {
        const float* src = x + (i * c + ch) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) {
          const double d = src[s] - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(count - 1);
      var /= static_cast<double>(count);
      const double m = opts.momentum;
      rm[ch] = static_cast<float>((1.0 - m) * rm[ch] + m * mean);
      rv[ch] = static_cast<float>((1.0 - m) * rv[ch] + m * unbiased);
    } else {
      mean = rm[ch];
      var = rv[ch];
    }
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(opts.eps));
    inv_std[static_cast<std::size_t>(ch)] = static_cast<float>(istd);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t base = (i * c + ch) * spatial;
      for (std::int64_t s = 0; s < spatial; ++s) {
        const float xh = static_cast<float>((x[base + s] - mean) * istd);
        xhat[static_cast<std::size_t>(base + s)] = xh;
        y[base + s] = gm[ch] * xh + bt[ch];
      }
    }
  }

  if (detail::needs_grad({&input, &gamma, &beta})) {
    detail::attach(
        out, op, {input, gamma, beta},
        [ix = input.impl_ptr(), ig = gamma.impl_ptr(), ib = beta.impl_ptr(),
         xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, spatial,
         training = opts.training](const TensorImpl& o) {
          const auto count = static_cast<double>(n * spatial);
          const float* dy = o.grad.data();
          for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
              const std::int64_t base = (i * c + ch) * spatial;
              for (std::int64_t s = 0; s < spatial; ++s) {
                sum_dy += dy[base + s];
                sum_dy_xhat += static_cast<double>(dy[base + s]) * xhat[static_cast<std::size_t>(base + s)];
              }
            }
            if (ig->requires_grad) ig->ensure_grad()[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy_xhat);
            if (ib->requires_grad) ib->ensure_grad()[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy);
            if (!ix->requires_grad) continue;
            auto& gx = ix->ensure_grad();
            const double g = ig->data[static_cast<std::size_t>(ch)];
            const double istd = inv_std[static_cast<std::size_t>(ch)];
            for (std::int64_t i = 0; i < n; ++i) {
              const std::int64_t base = (i * c + ch) * spatial;
              for (std::int64_t s = 0; s < spatial; ++s) {
                const auto idx = static_cast<std::size_t>(base + s);
                double d;
                if (training) {
                  d = g * istd / count *
                      (count * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat);
                } else {
                  d = g * istd * dy[idx];
                }
                gx[idx] += static_cast<float>(d);
              }
            }
          }
        });
  }
  return out;
}

}  // namespace

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opts) {
  if (input.ndim() != 4) {
    throw ShapeError("batch_norm2d: input must be N×C×H×W, got " + shape_str(input.shape()));
  }
  return batch_norm_impl(input, gamma, beta, running_mean, running_var, opts,
                         input.dim(2) * input.dim(3), "batch_norm2d");
}

Tensor batch_norm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opts) {
  if (input.ndim() != 2) {
    throw ShapeError("batch_norm1d: input must be N×C, got " + shape_str(input.shape()));
  }
  return batch_norm_impl(input, gamma, beta, running_mean, running_var, opts, 1, "batch_norm1d");
}

}  // namespace stagewise
