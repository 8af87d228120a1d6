// SPDX-License-Identifier: Apache-2.0
//
// Procedural four-class image set standing in for radiographs at desk scale.
// Class 0 carries only shared nuisance structure; class 1 adds one large soft
// opacity; class 2 a faint oriented striped texture; class 3 several small
// spots. Positions, orientations and intensities vary per image.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>

#include "stagewise/data/manifest.hpp"
#include "stagewise/tensor.hpp"

namespace stagewise::data {

struct SyntheticSpec {
  std::array<int, 4> train{200, 200, 200, 20};
  std::array<int, 4> test{60, 60, 60, 20};
  int image_size = 64;
  std::uint64_t seed = 0;
};

/// One 3×size×size image of class `label` in [0, 1].
Tensor render_synthetic(int label, int size, std::mt19937_64& rng);

/// Writes PPM images under out_dir/images and out_dir/manifest.csv.
DatasetManifest gen_synthetic(const std::filesystem::path& out_dir, const SyntheticSpec& spec);

}  // namespace stagewise::data
