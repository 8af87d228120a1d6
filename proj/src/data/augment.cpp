// SPDX-License-Identifier: Apache-2.0
#include "stagewise/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stagewise/errors.hpp"

namespace stagewise::data {

void AugmentPolicy::validate() const {
  if (!(flip_prob >= 0.0F && flip_prob <= 1.0F)) throw ConfigError("augment: flip probability must be in [0, 1]");
  if (!(max_rotation_deg >= 0.0F)) throw ConfigError("augment: max rotation must be >= 0");
  if (!(lighting >= 0.0F && lighting < 1.0F)) throw ConfigError("augment: lighting must be in [0, 1)");
}

AugmentSample sample_augment(const AugmentPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  std::uniform_real_distribution<float> unit(0.0F, 1.0F);
  AugmentSample s;
  // Every field consumes one draw so the stream layout does not depend on the policy.
  const float u_flip = unit(rng);
  const float u_angle = unit(rng);
  const float u_bright = unit(rng);
  const float u_contrast = unit(rng);
  s.flip = u_flip < policy.flip_prob;
  s.angle_deg = (2.0F * u_angle - 1.0F) * policy.max_rotation_deg;
  s.brightness = 1.0F + (2.0F * u_bright - 1.0F) * policy.lighting;
  s.contrast = 1.0F + (2.0F * u_contrast - 1.0F) * policy.lighting;
  return s;
}

namespace {

void flip_in_place(Tensor& img, FlipAxis axis) {
  const auto h = img.dim(1);
  const auto w = img.dim(2);
  auto d = img.data();
  for (std::int64_t c = 0; c < 3; ++c) {
    float* p = d.data() + c * h * w;
    if (axis == FlipAxis::vertical) {
      for (std::int64_t y = 0; y < h / 2; ++y) {
        std::swap_ranges(p + y * w, p + (y + 1) * w, p + (h - 1 - y) * w);
      }
    } else {
      for (std::int64_t y = 0; y < h; ++y) std::reverse(p + y * w, p + (y + 1) * w);
    }
  }
}

Tensor rotate(const Tensor& img, float angle_deg) {
  const auto h = img.dim(1);
  const auto w = img.dim(2);
  Tensor out(img.shape());
  const double rad = static_cast<double>(angle_deg) * std::numbers::pi / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cx = static_cast<double>(w) / 2.0;
  const double cy = static_cast<double>(h) / 2.0;
  auto src = img.data();
  auto dst = out.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      // Inverse map the output pixel center into the source, in pixel-index coordinates.
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double sx = std::clamp(cs * dx + sn * dy + cx - 0.5, 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(-sn * dx + cs * dy + cy - 0.5, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::int64_t>(sx);
      const auto y0 = static_cast<std::int64_t>(sy);
      const auto x1 = std::min(x0 + 1, w - 1);
      const auto y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::int64_t c = 0; c < 3; ++c) {
        const float* p = src.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
        const double bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
        dst[static_cast<std::size_t>(c * h * w + y * w + x)] = static_cast<float>(top * (1.0 - fy) + bot * fy);
      }
    }
  }
  return out;
}

}  // namespace

Tensor apply_augment(const Tensor& image, const AugmentSample& s, FlipAxis axis) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("augment: expected a 3×H×W image, got " + shape_str(image.shape()));
  }
  Tensor out = image.clone();
  if (s.flip) flip_in_place(out, axis);
  if (s.angle_deg != 0.0F) out = rotate(out, s.angle_deg);
  if (s.brightness != 1.0F || s.contrast != 1.0F) {
    auto d = out.data();
    double mean = 0.0;
    for (float v : d) mean += v;
    mean /= static_cast<double>(d.size());
    for (auto& v : d) {
      const double adjusted = ((v - mean) * s.contrast + mean) * s.brightness;
      v = static_cast<float>(std::clamp(adjusted, 0.0, 1.0));
    }
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentPolicy& policy, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return apply_augment(image, sample_augment(policy, rng), policy.flip_axis);
}

}  // namespace stagewise::data
