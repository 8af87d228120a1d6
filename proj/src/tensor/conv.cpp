// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <limits>

#include "gemm.hpp"
#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"

namespace stagewise {

namespace {

struct ConvGeometry {
  std::int64_t n, c, h, w;     // input
  std::int64_t kh, kw;         // kernel
  std::int64_t ho, wo;         // output
  std::int64_t stride, pad;

  std::int64_t patch() const { return c * kh * kw; }
  std::int64_t plane() const { return ho * wo; }
  std::int64_t columns() const { return n * ho * wo; }
};

std::int64_t output_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                           std::int64_t pad, const char* op) {
  const std::int64_t span = in + 2 * pad - k;
  if (span < 0 || stride < 1) {
    throw ConfigError(std::string(op) + ": non-positive output size (input " + std::to_string(in) +
                      ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(pad) + ")");
  }
  return span / stride + 1;
}

// Column matrix layout: rows = (c, ki, kj), columns = (n, oh, ow).
void im2col(const float* x, const ConvGeometry& g, float* col) {
  const std::int64_t cols = g.columns();
  const std::int64_t plane = g.plane();
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        float* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::int64_t n = 0; n < g.n; ++n) {
          const float* src = x + (n * g.c + c) * g.h * g.w;
          float* dst = row + n * plane;
          for (std::int64_t oh = 0; oh < g.ho; ++oh) {
            const std::int64_t ih = oh * g.stride - g.pad + ki;
            float* drow = dst + oh * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(drow, drow + g.wo, 0.0F);
              continue;
            }
            const float* srow = src + ih * g.w;
            for (std::int64_t ow = 0; ow < g.wo; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + kj;
              drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : 0.0F;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* dx) {
  const std::int64_t cols = g.columns();
  const std::int64_t plane = g.plane();
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const float* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::int64_t n = 0; n < g.n; ++n) {
          float* dst = dx + (n * g.c + c) * g.h * g.w;
          const float* src = row + n * plane;
          for (std::int64_t oh = 0; oh < g.ho; ++oh) {
            const std::int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            float* drow = dst + ih * g.w;
            const float* srow = src + oh * g.wo;
            for (std::int64_t ow = 0; ow < g.wo; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  if (input.ndim() != 4) {
    throw ShapeError("conv2d: input must be N×C×H×W, got " + shape_str(input.shape()));
  }
  if (weight.ndim() != 4) {
    throw ShapeError("conv2d: weight must be O×I×kh×kw, got " + shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  const std::int64_t out_ch = weight.dim(0);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_ch)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(out_ch) + " output channels");
  }

  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.ho = output_extent(g.h, g.kh, stride, padding, "conv2d");
  g.wo = output_extent(g.w, g.kw, stride, padding, "conv2d");

  const std::int64_t k = g.patch();
  const std::int64_t cols = g.columns();
  const std::int64_t plane = g.plane();

  std::vector<float> col(static_cast<std::size_t>(k * cols));
  im2col(input.data().data(), g, col.data());
  std::vector<float> y(static_cast<std::size_t>(out_ch * cols));
  detail::as_mat(y.data(), out_ch, cols).noalias() =
      detail::as_mat(weight.data().data(), out_ch, k) * detail::as_mat(col.data(), k, cols);

  Tensor out({g.n, out_ch, g.ho, g.wo});
  auto o = out.data();
  const float* b = bias.defined() ? bias.data().data() : nullptr;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oc = 0; oc < out_ch; ++oc) {
      const float* src = y.data() + oc * cols + n * plane;
      float* dst = o.data() + (n * out_ch + oc) * plane;
      const float add = b ? b[oc] : 0.0F;
      for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] + add;
    }
  }

  if (detail::needs_grad({&input, &weight, &bias})) {
    std::shared_ptr<TensorImpl> ib = bias.defined() ? bias.impl_ptr() : nullptr;
    // The column matrix is only kept when the weight gradient needs it.
    if (!weight.requires_grad()) col.clear();
    detail::attach(
        out, "conv2d", {input, weight, bias},
        [ix = input.impl_ptr(), iw = weight.impl_ptr(), ib, g, out_ch,
         col = std::move(col)](const TensorImpl& o) {
          const std::int64_t k = g.patch();
          const std::int64_t cols = g.columns();
          const std::int64_t plane = g.plane();
          std::vector<float> dy(static_cast<std::size_t>(out_ch * cols));
          for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t oc = 0; oc < out_ch; ++oc) {
              const float* src = o.grad.data() + (n * out_ch + oc) * plane;
              std::copy(src, src + plane, dy.data() + oc * cols + n * plane);
            }
          }
          auto dy_m = detail::as_mat(dy.data(), out_ch, cols);
          if (iw->requires_grad) {
            detail::as_mat(iw->ensure_grad().data(), out_ch, k).noalias() +=
                dy_m * detail::as_mat(col.data(), k, cols).transpose();
          }
          if (ib && ib->requires_grad) {
            auto& gb = ib->ensure_grad();
            for (std::int64_t oc = 0; oc < out_ch; ++oc) {
              double acc = 0.0;
              const float* row = dy.data() + oc * cols;
              for (std::int64_t j = 0; j < cols; ++j) acc += row[j];
              gb[static_cast<std::size_t>(oc)] += static_cast<float>(acc);
            }
          }
          if (ix->requires_grad) {
            std::vector<float> dcol(static_cast<std::size_t>(k * cols));
            detail::as_mat(dcol.data(), k, cols).noalias() =
                detail::as_mat(iw->data.data(), out_ch, k).transpose() * dy_m;
            col2im(dcol.data(), g, ix->ensure_grad().data());
          }
        });
  }
  return out;
}

Tensor max_pool2d(const Tensor& input, int kernel, int stride, int padding) {
  if (input.ndim() != 4) {
    throw ShapeError("max_pool2d: input must be N×C×H×W, got " + shape_str(input.shape()));
  }
  if (kernel < 1 || padding < 0 || 2 * padding > kernel) {
    throw ConfigError("max_pool2d: invalid kernel/padding");
  }
  const auto n = input.dim(0);
  const auto c = input.dim(1);
  const auto h = input.dim(2);
  const auto w = input.dim(3);
  const auto ho = output_extent(h, kernel, stride, padding, "max_pool2d");
  const auto wo = output_extent(w, kernel, stride, padding, "max_pool2d");

  Tensor out({n, c, ho, wo});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
  const float* x = input.data().data();
  float* y = out.data().data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = x + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_idx = -1;
        for (std::int64_t ki = 0; ki < kernel; ++ki) {
          const std::int64_t ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= h) continue;
          for (std::int64_t kj = 0; kj < kernel; ++kj) {
            const std::int64_t iw = ow * stride - padding + kj;
            if (iw < 0 || iw >= w) continue;
            const float v = src[ih * w + iw];
            if (v > best || best_idx < 0) {
              best = v;
              best_idx = static_cast<std::int32_t>(ih * w + iw);
            }
          }
        }
        const std::int64_t oi = (plane * ho + oh) * wo + ow;
        y[oi] = best;
        argmax[static_cast<std::size_t>(oi)] = best_idx;
      }
    }
  }
  if (detail::needs_grad({&input})) {
    const std::int64_t in_plane = h * w;
    const std::int64_t out_plane = ho * wo;
    detail::attach(out, "max_pool2d", {input},
                   [ix = input.impl_ptr(), argmax = std::move(argmax), in_plane,
                    out_plane](const TensorImpl& o) {
                     auto& g = ix->ensure_grad();
                     for (std::size_t i = 0; i < argmax.size(); ++i) {
                       const auto plane = static_cast<std::int64_t>(i) / out_plane;
                       g[static_cast<std::size_t>(plane * in_plane + argmax[i])] += o.grad[i];
                     }
                   });
  }
  return out;
}

Tensor adaptive_concat_pool(const Tensor& input) {
  if (input.ndim() != 4) {
    throw ShapeError("adaptive_concat_pool: input must be N×C×H×W, got " +
                     shape_str(input.shape()));
  }
  const auto n = input.dim(0);
  const auto c = input.dim(1);
  const auto spatial = input.dim(2) * input.dim(3);
  Tensor out({n, 2 * c});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(n * c));
  const float* x = input.data().data();
  float* y = out.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float* src = x + (i * c + ch) * spatial;
      double acc = 0.0;
      std::int64_t best = 0;
      for (std::int64_t s = 0; s < spatial; ++s) {
        acc += src[s];
        if (src[s] > src[best]) best = s;
      }
      y[i * 2 * c + ch] = static_cast<float>(acc / static_cast<double>(spatial));
      y[i * 2 * c + c + ch] = src[best];
      argmax[static_cast<std::size_t>(i * c + ch)] = static_cast<std::int32_t>(best);
    }
  }
  if (detail::needs_grad({&input})) {
    detail::attach(out, "adaptive_concat_pool", {input},
                   [ix = input.impl_ptr(), argmax = std::move(argmax), n, c,
                    spatial](const TensorImpl& o) {
                     auto& g = ix->ensure_grad();
                     const float inv = 1.0F / static_cast<float>(spatial);
                     for (std::int64_t i = 0; i < n; ++i) {
                       for (std::int64_t ch = 0; ch < c; ++ch) {
                         float* dst = g.data() + (i * c + ch) * spatial;
                         const float g_avg = o.grad[static_cast<std::size_t>(i * 2 * c + ch)] * inv;
                         for (std::int64_t s = 0; s < spatial; ++s) dst[s] += g_avg;
                         dst[argmax[static_cast<std::size_t>(i * c + ch)]] +=
                             o.grad[static_cast<std::size_t>(i * 2 * c + c + ch)];
                       }
                     }
                   });
  }
  return out;
}

}  // namespace stagewise
