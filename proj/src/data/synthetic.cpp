// SPDX-License-Identifier: Apache-2.0
#include "stagewise/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stagewise/data/image.hpp"
#include "stagewise/errors.hpp"
#include "stagewise/rng.hpp"

namespace stagewise::data {

namespace {

using Plane = std::vector<double>;

void add_bump(Plane& p, int size, double cx, double cy, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      p[static_cast<std::size_t>(y * size + x)] += amp * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
}

// Flat-topped disc with a soft rim.
void add_disc(Plane& p, int size, double cx, double cy, double radius, double amp) {
  const double rim = std::max(1.0, 0.25 * radius);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      const double t = std::clamp((radius - d) / rim + 0.5, 0.0, 1.0);
      p[static_cast<std::size_t>(y * size + x)] += amp * t * t * (3.0 - 2.0 * t);
    }
  }
}

}  // namespace

Tensor render_synthetic(int label, int size, std::mt19937_64& rng) {
  if (label < 0 || label > 3) throw std::out_of_range("render_synthetic: label must be in [0, 3]");
  if (size < 16) throw ConfigError("render_synthetic: image size must be >= 16");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double s = size;
  Plane p(static_cast<std::size_t>(size * size), 0.0);

  // Shared nuisance: base level, linear ramp, two broad bumps.
  const double base = uni(0.25, 0.5);
  const double gx = uni(-0.15, 0.15);
  const double gy = uni(-0.15, 0.15);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      p[static_cast<std::size_t>(y * size + x)] = base + gx * (x / s - 0.5) + gy * (y / s - 0.5);
    }
  }
  for (int k = 0; k < 2; ++k) add_bump(p, size, uni(0, s), uni(0, s), uni(0.15, 0.3) * s, uni(-0.12, 0.12));

  switch (label) {
    case 1:
      add_disc(p, size, uni(0.3, 0.7) * s, uni(0.25, 0.55) * s, uni(0.12, 0.18) * s, uni(0.2, 0.35));
      break;
    case 2: {
      const double period = uni(0.1, 0.14) * s;
      const double theta = uni(0.0, std::numbers::pi);
      const double phase = uni(0.0, 2.0 * std::numbers::pi);
      const double amp = uni(0.08, 0.14);
      const double haze = uni(0.04, 0.08);
      const double cx = uni(0.35, 0.65) * s;
      const double cy = uni(0.35, 0.65) * s;
      const double radius = uni(0.25, 0.35) * s;
      const double kx = std::cos(theta) * 2.0 * std::numbers::pi / period;
      const double ky = std::sin(theta) * 2.0 * std::numbers::pi / period;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
          const double mask = std::clamp((radius - d) / (0.2 * radius) + 0.5, 0.0, 1.0);
          p[static_cast<std::size_t>(y * size + x)] += mask * (haze + amp * std::sin(kx * x + ky * y + phase));
        }
      }
      break;
    }
    case 3: {
      const int spots = static_cast<int>(uni(5.0, 9.0));
      for (int k = 0; k < spots; ++k) {
        add_disc(p, size, uni(0.12, 0.88) * s, uni(0.5, 0.9) * s, uni(0.035, 0.055) * s, uni(0.2, 0.35));
      }
      break;
    }
    default:
      break;
  }

  std::normal_distribution<double> noise(0.0, 0.03);
  Tensor img({3, size, size});
  auto d = img.data();
  const auto plane = static_cast<std::size_t>(size * size);
  std::array<double, 3> tint{uni(0.97, 1.03), uni(0.97, 1.03), uni(0.97, 1.03)};
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = p[i] + noise(rng);
    for (std::size_t c = 0; c < 3; ++c) d[c * plane + i] = static_cast<float>(std::clamp(v * tint[c], 0.0, 1.0));
  }
  return img;
}

DatasetManifest gen_synthetic(const std::filesystem::path& out_dir, const SyntheticSpec& spec) {
  if (spec.image_size < 16) throw ConfigError("synthetic: image size must be >= 16");
  for (int n : spec.train) {
    if (n < 0) throw ConfigError("synthetic: class counts must be >= 0");
  }
  for (int n : spec.test) {
    if (n < 0) throw ConfigError("synthetic: class counts must be >= 0");
  }
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.base_dir = out_dir;
  for (Split split : {Split::train, Split::test}) {
    const auto& counts = split == Split::train ? spec.train : spec.test;
    const fs::path dir = out_dir / "images" / split_name(split);
    fs::create_directories(dir);
    for (int label = 0; label < 4; ++label) {
      for (int i = 0; i < counts[static_cast<std::size_t>(label)]; ++i) {
        std::mt19937_64 rng(seed_mix({spec.seed, static_cast<std::uint64_t>(split),
                                      static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)}));
        const std::string file = "c" + std::to_string(label) + "_" + std::to_string(i) + ".ppm";
        write_ppm(dir / file, render_synthetic(label, spec.image_size, rng));
        m.records.push_back({(fs::path("images") / split_name(split) / file).generic_string(), label, split});
      }
    }
  }
  save_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace stagewise::data
