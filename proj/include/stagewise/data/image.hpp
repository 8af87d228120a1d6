// SPDX-License-Identifier: Apache-2.0
//
// Images are float tensors laid out 3×H×W with values in [0, 1].
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stagewise/tensor.hpp"

namespace stagewise::data {

/// Binary PPM (P6, maxval 255). PNG is not supported and is reported as such.
Tensor decode_image(std::span<const std::uint8_t> bytes);
/// Quantizes to 8 bits with round-to-nearest after clamping to [0, 1].
std::vector<std::uint8_t> encode_ppm(const Tensor& image);

Tensor read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Half-pixel-center bilinear resampling with edge clamping.
Tensor resize_bilinear(const Tensor& image, int height, int width);

struct NormalizationStats {
  std::array<float, 3> mean{0.485F, 0.456F, 0.406F};
  std::array<float, 3> std{0.229F, 0.224F, 0.225F};

  static NormalizationStats imagenet() { return {}; }
  static NormalizationStats identity() { return {{0.0F, 0.0F, 0.0F}, {1.0F, 1.0F, 1.0F}}; }
  void validate() const;
};

Tensor normalize(const Tensor& image, const NormalizationStats& stats);
Tensor denormalize(const Tensor& image, const NormalizationStats& stats);

}  // namespace stagewise::data
