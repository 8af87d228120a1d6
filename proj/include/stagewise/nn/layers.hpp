// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "stagewise/ops.hpp"
#include "stagewise/tensor.hpp"

namespace stagewise::nn {

struct ForwardContext {
  bool training = false;
  /// Source of dropout masks; required when training with dropout.
  std::mt19937_64* rng = nullptr;
  /// Let frozen batch-norm layers keep updating running statistics.
  bool update_frozen_bn_stats = false;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Position of a layer in the network, used to derive layer groups.
struct LayerSite {
  int stage = 0;   // 0 = stem, 1..S = residual stages, -1 = head
  int block = -1;  // block index within a residual stage
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual Tensor forward(const Tensor& x, ForwardContext& ctx) = 0;
  virtual std::string_view kind() const = 0;

  /// Appends trainable tensors, fully qualified with this layer's name.
  virtual void collect_parameters(std::vector<NamedTensor>& out) const { (void)out; }
  /// Appends non-trainable state (running statistics).
  virtual void collect_buffers(std::vector<NamedTensor>& out) const { (void)out; }

  /// Frozen layers stop requiring grad; frozen batch norm runs on running stats.
  virtual void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  const std::string& name() const { return name_; }
  int group_id() const { return group_id_; }
  void set_group_id(int g) { group_id_ = g; }
  LayerSite site() const { return site_; }
  void set_site(LayerSite s) { site_ = s; }

 protected:
  std::string qualified(std::string_view leaf) const { return name_ + "." + std::string(leaf); }

 private:
  std::string name_;
  int group_id_ = 0;
  bool frozen_ = false;
  LayerSite site_{};
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int padding,
         bool bias = false);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  std::string_view kind() const override { return "conv"; }
  void collect_parameters(std::vector<NamedTensor>& out) const override;
  void set_frozen(bool frozen) override;
  /// He-normal with fan-out scaling, as used for residual bodies.
  void init_kaiming_normal(std::mt19937_64& rng);

  Tensor weight;
  Tensor bias;
  int stride;
  int padding;
};

/// Shared between the 2-D (N×C×H×W) and 1-D (N×C) variants.
class BatchNorm final : public Layer {
 public:
  BatchNorm(std::string name, int channels, bool spatial, float eps = 1e-5F, float momentum = 0.1F);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  std::string_view kind() const override { return "bn"; }
  void collect_parameters(std::vector<NamedTensor>& out) const override;
  void collect_buffers(std::vector<NamedTensor>& out) const override;
  void set_frozen(bool frozen) override;

  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  bool spatial;
  float eps;
  float momentum;
};

class ReLU final : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, ForwardContext&) override { return relu(x); }
  std::string_view kind() const override { return "relu"; }
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::string name, int kernel, int stride, int padding)
      : Layer(std::move(name)), kernel_(kernel), stride_(stride), padding_(padding) {}
  Tensor forward(const Tensor& x, ForwardContext&) override {
    return max_pool2d(x, kernel_, stride_, padding_);
  }
  std::string_view kind() const override { return "pool"; }

 private:
  int kernel_, stride_, padding_;
};

class AdaptiveConcatPool final : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, ForwardContext&) override { return adaptive_concat_pool(x); }
  std::string_view kind() const override { return "pool"; }
};

class Flatten final : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, ForwardContext&) override { return flatten(x); }
  std::string_view kind() const override { return "flatten"; }
};

class Dropout final : public Layer {
 public:
  Dropout(std::string name, float p);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  std::string_view kind() const override { return "dropout"; }
  float p() const { return p_; }

 private:
  float p_;
};

class Linear final : public Layer {
 public:
  Linear(std::string name, int in_features, int out_features);
  Tensor forward(const Tensor& x, ForwardContext&) override { return linear(x, weight, bias); }
  std::string_view kind() const override { return "linear"; }
  void collect_parameters(std::vector<NamedTensor>& out) const override;
  void set_frozen(bool frozen) override;
  /// Kaiming-uniform weights (ReLU gain), zero bias.
  void init_kaiming_uniform(std::mt19937_64& rng);

  Tensor weight;
  Tensor bias;
};

/// Residual block: bottleneck (1×1, 3×3, 1×1 with 4× expansion) or basic
/// (two 3×3). Stride sits on the 3×3 convolution. A projection shortcut is
/// added when the shape changes.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::string name, int in_ch, int width, int stride, bool bottleneck);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  std::string_view kind() const override { return "residual-block"; }
  void collect_parameters(std::vector<NamedTensor>& out) const override;
  void collect_buffers(std::vector<NamedTensor>& out) const override;
  void set_frozen(bool frozen) override;
  void init(std::mt19937_64& rng);

  int out_channels() const { return out_channels_; }
  static constexpr int kBottleneckExpansion = 4;

 private:
  std::vector<std::unique_ptr<Conv2d>> convs_;
  std::vector<std::unique_ptr<BatchNorm>> bns_;
  std::unique_ptr<Conv2d> shortcut_conv_;
  std::unique_ptr<BatchNorm> shortcut_bn_;
  int out_channels_;
};

}  // namespace stagewise::nn
