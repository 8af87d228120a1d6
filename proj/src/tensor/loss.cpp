// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"

namespace stagewise {

namespace {
void require_logits(const Tensor& logits, const char* op) {
  if (logits.ndim() != 2) {
    throw ShapeError(std::string(op) + ": logits must be N×K, got " + shape_str(logits.shape()));
  }
}
}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_logits(logits, "cross_entropy");
  const auto n = logits.dim(0);
  const auto k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
  }

  const float* z = logits.data().data();
  std::vector<float> probs(static_cast<std::size_t>(n * k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = z + i * k;
    const double mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (std::int64_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[labels[static_cast<std::size_t>(i)]];
    for (std::int64_t j = 0; j < k; ++j) {
      probs[static_cast<std::size_t>(i * k + j)] = static_cast<float>(std::exp(row[j] - lse));
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));

  if (detail::needs_grad({&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    detail::attach(out, "cross_entropy", {logits},
                   [iz = logits.impl_ptr(), probs = std::move(probs), lab = std::move(lab), n,
                    k](const TensorImpl& o) {
                     auto& g = iz->ensure_grad();
                     const float scale = o.grad[0] / static_cast<float>(n);
                     for (std::int64_t i = 0; i < n; ++i) {
                       for (std::int64_t j = 0; j < k; ++j) {
                         const auto idx = static_cast<std::size_t>(i * k + j);
                         const float onehot = (j == lab[static_cast<std::size_t>(i)]) ? 1.0F : 0.0F;
                         g[idx] += scale * (probs[idx] - onehot);
                       }
                     }
                   });
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  require_logits(logits, "softmax");
  const auto n = logits.dim(0);
  const auto k = logits.dim(1);
  Tensor out(logits.shape());
  const float* z = logits.data().data();
  float* p = out.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = z + i * k;
    const double mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (std::int64_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    for (std::int64_t j = 0; j < k; ++j) p[i * k + j] = static_cast<float>(std::exp(row[j] - mx) / se);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_logits(logits, "argmax_rows");
  const auto n = logits.dim(0);
  const auto k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  const float* z = logits.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = z + i * k;
    int best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace stagewise
