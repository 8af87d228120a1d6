// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "stagewise/tensor.hpp"

namespace stagewise {

// Elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
/// Sum of all elements as a {1} tensor (64-bit accumulation).
Tensor sum(const Tensor& x);

// Dense ---------------------------------------------------------------------

/// a: M×K, b: K×N.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x: N×in, weight: out×in, bias: out (may be undefined). Returns N×out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// N×... -> N×(product of the rest).
Tensor flatten(const Tensor& x);

// Convolutional -------------------------------------------------------------

/// Cross-correlation. input N×I×H×W, weight O×I×kh×kw, bias O (optional).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);

/// Max pooling with implicit -inf padding.
Tensor max_pool2d(const Tensor& input, int kernel, int stride, int padding);

/// N×C×H×W -> N×2C: per-channel global mean followed by global max.
Tensor adaptive_concat_pool(const Tensor& input);

// Normalization -------------------------------------------------------------

struct BatchNormOptions {
  bool training = true;
  float eps = 1e-5F;
  float momentum = 0.1F;
};

/// input N×C×H×W. In training mode the running statistics are updated in
/// place (running_var tracks the unbiased batch variance).
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opts);

/// input N×C.
Tensor batch_norm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opts);

// Regularization ------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity.
Tensor dropout(const Tensor& x, float p, bool training, std::mt19937_64& rng);

// Loss ----------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax, no graph recorded.
Tensor softmax(const Tensor& logits);

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace stagewise
