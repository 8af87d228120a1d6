// SPDX-License-Identifier: Apache-2.0
#include "stagewise/data/loader.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "stagewise/errors.hpp"
#include "stagewise/rng.hpp"

namespace stagewise::data {

Tensor ImageCache::get(const std::filesystem::path& path, int size) {
  const std::string key = path.string() + "@" + std::to_string(size);
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  Tensor img = resize_bilinear(read_image(path), size, size);
  std::lock_guard<std::mutex> lock(mu_);
  const auto cost = static_cast<std::size_t>(img.numel()) * sizeof(float);
  if (bytes_ + cost <= max_bytes_ && entries_.emplace(key, img).second) bytes_ += cost;
  return img;
}

std::size_t ImageCache::bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return bytes_;
}

BatchLoader::BatchLoader(const DatasetManifest& manifest, Split split, LoaderConfig config,
                         std::shared_ptr<ImageCache> cache)
    : manifest_(&manifest),
      split_(split),
      config_(std::move(config)),
      cache_(std::move(cache)),
      records_(manifest.split_records(split)) {
  if (records_.empty()) throw ConfigError(std::string("loader: ") + split_name(split) + " split is empty");
  if (config_.batch_size < 1) throw ConfigError("loader: batch size must be >= 1");
  if (config_.image_size < 1) throw ConfigError("loader: image size must be >= 1");
  config_.policy.validate();
  config_.stats.validate();
}

std::size_t BatchLoader::num_batches() const {
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  return (records_.size() + bs - 1) / bs;
}

std::vector<std::size_t> BatchLoader::epoch_order(int epoch) const {
  std::vector<std::size_t> order(records_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (split_ == Split::train) {
    std::mt19937_64 rng(seed_mix({config_.seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

Tensor BatchLoader::load(std::size_t record, int epoch) const {
  const auto path = manifest_->resolve(records_.at(record));
  Tensor img = cache_ ? cache_->get(path, config_.image_size)
                      : resize_bilinear(read_image(path), config_.image_size, config_.image_size);
  if (split_ == Split::train && config_.augment) {
    const auto seed = seed_mix({config_.seed, 0x415547ULL, static_cast<std::uint64_t>(epoch), record});
    img = augment(img, config_.policy, seed);
  }
  return normalize(img, config_.stats);
}

Batch BatchLoader::batch(int epoch, std::size_t index) const {
  if (index >= num_batches()) throw std::out_of_range("loader: batch index out of range");
  const auto order = epoch_order(epoch);
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  const std::size_t begin = index * bs;
  const std::size_t end = std::min(begin + bs, order.size());
  const std::int64_t s = config_.image_size;
  Batch b;
  b.images = Tensor({static_cast<std::int64_t>(end - begin), 3, s, s});
  auto dst = b.images.data();
  const auto per_image = static_cast<std::size_t>(3 * s * s);
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor img = load(order[i], epoch);
    std::copy(img.data().begin(), img.data().end(), dst.begin() + static_cast<std::ptrdiff_t>((i - begin) * per_image));
    b.labels.push_back(records_[order[i]].label);
  }
  return b;
}

}  // namespace stagewise::data
