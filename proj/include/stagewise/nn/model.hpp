// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "stagewise/nn/layers.hpp"

namespace stagewise::nn {

struct HeadConfig {
  int hidden = 512;
  float p1 = 0.25F;
  float p2 = 0.5F;
};

struct ResNetConfig {
  std::vector<int> blocks{3, 4, 6, 3};
  int base_width = 64;
  bool bottleneck = true;
  int n_classes = 4;
  HeadConfig head{};

  static ResNetConfig resnet50(int n_classes = 4) { return ResNetConfig{{3, 4, 6, 3}, 64, true, n_classes, {}}; }
  /// Desk-scale variant: one block per stage, width 16.
  static ResNetConfig mini(int n_classes = 4) { return ResNetConfig{{1, 1, 1, 1}, 16, true, n_classes, {}}; }

  void validate() const;
};

struct Parameter {
  std::string name;
  Tensor tensor;
  int group_id;
  bool frozen;
};

class Model {
 public:
  static constexpr int kMinInputSize = 32;

  Model() = default;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// images: N×3×H×W with H, W >= kMinInputSize. Returns N×n_classes logits.
  Tensor forward(const Tensor& images, ForwardContext& ctx);

  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  /// Index of the first head layer.
  std::size_t head_begin() const { return head_begin_; }
  int n_groups() const { return n_groups_; }
  int n_classes() const { return config_.n_classes; }
  int body_channels() const { return body_channels_; }
  const ResNetConfig& config() const { return config_; }

  std::vector<Parameter> parameters() const;
  std::vector<NamedTensor> buffers() const;
  /// Parameters followed by buffers; what a checkpoint stores.
  std::vector<NamedTensor> state() const;
  /// Copies values by name. Every entry of state() must be present with a matching shape.
  void load_state(const std::vector<NamedTensor>& entries);
  std::int64_t parameter_count() const;
  /// Allocates zeroed gradients for trainable parameters.
  void zero_grad();

 private:
  friend Model build_resnet(const ResNetConfig&, std::uint64_t);
  friend Model& replace_head(Model&, int, std::uint64_t);
  friend Model& assign_layer_groups(Model&, int);

  std::vector<std::unique_ptr<Layer>> layers_;
  std::size_t head_begin_ = 0;
  int n_groups_ = 2;
  int body_channels_ = 0;
  ResNetConfig config_{};
};

/// Residual body (7×7/2 stem, 3×3/2 max pool, residual stages) with the
/// concat-pool classification head. Groups default to stem, stages, head.
Model build_resnet(const ResNetConfig& config, std::uint64_t seed = 0);

/// Discards the current head and installs a freshly initialized one.
Model& replace_head(Model& model, int n_classes, std::uint64_t seed = 0);

/// Contiguous partition of the body into n_groups - 1 groups, head last.
/// Uses stage granularity when it suffices and per-block granularity otherwise.
Model& assign_layer_groups(Model& model, int n_groups);

enum class FreezeMode { head_only, all_trainable };
Model& set_frozen(Model& model, FreezeMode mode);

constexpr int kDefaultGroups = 6;

}  // namespace stagewise::nn
