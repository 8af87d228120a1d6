// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagewise/data/augment.hpp"
#include "stagewise/data/image.hpp"
#include "stagewise/data/manifest.hpp"

namespace stagewise::data {

struct Batch {
  Tensor images;  // N×3×H×W, normalized
  std::vector<int> labels;
};

/// Decoded images resized to a stage size, shared across loaders and epochs.
class ImageCache {
 public:
  explicit ImageCache(std::size_t max_bytes = std::size_t{1} << 30) : max_bytes_(max_bytes) {}
  /// Returns the image at `path` resized to size×size, decoding on a miss.
  Tensor get(const std::filesystem::path& path, int size);
  std::size_t bytes() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, Tensor> entries_;
  std::size_t bytes_ = 0;
  std::size_t max_bytes_;
};

struct LoaderConfig {
  int image_size = 224;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Only honoured on the train split.
  bool augment = true;
  AugmentPolicy policy{};
  NormalizationStats stats{};
};

/// Stateless epoch/batch indexing: batch(epoch, i) is a pure function of the
/// manifest, config and arguments, so iteration can resume anywhere.
class BatchLoader {
 public:
  BatchLoader(const DatasetManifest& manifest, Split split, LoaderConfig config,
              std::shared_ptr<ImageCache> cache = nullptr);

  std::size_t size() const { return records_.size(); }
  std::size_t num_batches() const;
  Split split() const { return split_; }
  const LoaderConfig& config() const { return config_; }
  const std::vector<Record>& records() const { return records_; }

  /// Record order for an epoch: shuffled per epoch on train, manifest order on test.
  std::vector<std::size_t> epoch_order(int epoch) const;
  Batch batch(int epoch, std::size_t index) const;
  /// Single preprocessed image (resize, optional augment, normalize).
  Tensor load(std::size_t record, int epoch) const;

 private:
  const DatasetManifest* manifest_;
  Split split_;
  LoaderConfig config_;
  std::shared_ptr<ImageCache> cache_;
  std::vector<Record> records_;
};

}  // namespace stagewise::data
