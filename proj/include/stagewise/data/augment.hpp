// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "stagewise/tensor.hpp"

namespace stagewise::data {

enum class FlipAxis { vertical, horizontal };

struct AugmentPolicy {
  float flip_prob = 0.5F;
  FlipAxis flip_axis = FlipAxis::vertical;
  float max_rotation_deg = 15.0F;
  /// Maximum relative change of brightness and of contrast.
  float lighting = 0.1F;

  static AugmentPolicy none() { return {0.0F, FlipAxis::vertical, 0.0F, 0.0F}; }
  void validate() const;
};

/// One draw of the random transform.
struct AugmentSample {
  bool flip = false;
  float angle_deg = 0.0F;
  float brightness = 1.0F;
  float contrast = 1.0F;
};

AugmentSample sample_augment(const AugmentPolicy& policy, std::mt19937_64& rng);

/// Flip, then rotation about the center (bilinear, edge replicate), then
/// contrast around the image mean and brightness scaling, clamped to [0, 1].
Tensor apply_augment(const Tensor& image, const AugmentSample& sample, FlipAxis axis);

Tensor augment(const Tensor& image, const AugmentPolicy& policy, std::uint64_t seed);

}  // namespace stagewise::data
