// SPDX-License-Identifier: Apache-2.0
#include "stagewise/nn/layers.hpp"

#include <cmath>

#include "stagewise/errors.hpp"

namespace stagewise::nn {

void Layer::set_frozen(bool frozen) { frozen_ = frozen; }

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride_, int padding_,
               bool with_bias)
    : Layer(std::move(name)),
      weight({out_ch, in_ch, kernel, kernel}, 0.0F, true),
      stride(stride_),
      padding(padding_) {
  if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride_ <= 0 || padding_ < 0) {
    throw ConfigError("conv " + this->name() + ": invalid geometry");
  }
  if (with_bias) bias = Tensor({out_ch}, 0.0F, true);
}

Tensor Conv2d::forward(const Tensor& x, ForwardContext&) {
  return conv2d(x, weight, bias, stride, padding);
}

void Conv2d::collect_parameters(std::vector<NamedTensor>& out) const {
  out.push_back({qualified("weight"), weight});
  if (bias.defined()) out.push_back({qualified("bias"), bias});
}

void Conv2d::set_frozen(bool frozen) {
  Layer::set_frozen(frozen);
  weight.set_requires_grad(!frozen);
  if (bias.defined()) bias.set_requires_grad(!frozen);
}

void Conv2d::init_kaiming_normal(std::mt19937_64& rng) {
  const double fan_out = static_cast<double>(weight.dim(0) * weight.dim(2) * weight.dim(3));
  std::normal_distribution<float> dist(0.0F, static_cast<float>(std::sqrt(2.0 / fan_out)));
  for (auto& w : weight.data()) w = dist(rng);
  if (bias.defined()) std::fill(bias.data().begin(), bias.data().end(), 0.0F);
}

BatchNorm::BatchNorm(std::string name, int channels, bool spatial_, float eps_, float momentum_)
    : Layer(std::move(name)),
      gamma({channels}, 1.0F, true),
      beta({channels}, 0.0F, true),
      running_mean({channels}, 0.0F),
      running_var({channels}, 1.0F),
      spatial(spatial_),
      eps(eps_),
      momentum(momentum_) {
  if (channels <= 0) throw ConfigError("bn " + this->name() + ": channels must be > 0");
}

Tensor BatchNorm::forward(const Tensor& x, ForwardContext& ctx) {
  BatchNormOptions opts;
  opts.eps = eps;
  opts.momentum = momentum;
  opts.training = ctx.training && (!frozen() || ctx.update_frozen_bn_stats);
  return spatial ? batch_norm2d(x, gamma, beta, running_mean, running_var, opts)
                 : batch_norm1d(x, gamma, beta, running_mean, running_var, opts);
}

void BatchNorm::collect_parameters(std::vector<NamedTensor>& out) const {
  out.push_back({qualified("weight"), gamma});
  out.push_back({qualified("bias"), beta});
}

void BatchNorm::collect_buffers(std::vector<NamedTensor>& out) const {
  out.push_back({qualified("running_mean"), running_mean});
  out.push_back({qualified("running_var"), running_var});
}

void BatchNorm::set_frozen(bool frozen) {
  Layer::set_frozen(frozen);
  gamma.set_requires_grad(!frozen);
  beta.set_requires_grad(!frozen);
}

Dropout::Dropout(std::string name, float p) : Layer(std::move(name)), p_(p) {
  if (!(p >= 0.0F && p < 1.0F)) throw ConfigError("dropout " + this->name() + ": p must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, ForwardContext& ctx) {
  if (!ctx.training || p_ == 0.0F) return x;
  if (ctx.rng == nullptr) throw ContractError("dropout " + name() + ": training forward needs an rng");
  return dropout(x, p_, true, *ctx.rng);
}

Linear::Linear(std::string name, int in_features, int out_features)
    : Layer(std::move(name)),
      weight({out_features, in_features}, 0.0F, true),
      bias({out_features}, 0.0F, true) {
  if (in_features <= 0 || out_features <= 0) {
    throw ConfigError("linear " + this->name() + ": features must be > 0");
  }
}

void Linear::collect_parameters(std::vector<NamedTensor>& out) const {
  out.push_back({qualified("weight"), weight});
  out.push_back({qualified("bias"), bias});
}

void Linear::set_frozen(bool frozen) {
  Layer::set_frozen(frozen);
  weight.set_requires_grad(!frozen);
  bias.set_requires_grad(!frozen);
}

void Linear::init_kaiming_uniform(std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(weight.dim(1)));
  std::uniform_real_distribution<float> dist(static_cast<float>(-bound), static_cast<float>(bound));
  for (auto& w : weight.data()) w = dist(rng);
  std::fill(bias.data().begin(), bias.data().end(), 0.0F);
}

ResidualBlock::ResidualBlock(std::string name, int in_ch, int width, int stride, bool bottleneck)
    : Layer(std::move(name)) {
  const auto sub = [this](const std::string& leaf) { return this->name() + "." + leaf; };
  if (bottleneck) {
    out_channels_ = width * kBottleneckExpansion;
    convs_.push_back(std::make_unique<Conv2d>(sub("conv1"), in_ch, width, 1, 1, 0));
    convs_.push_back(std::make_unique<Conv2d>(sub("conv2"), width, width, 3, stride, 1));
    convs_.push_back(std::make_unique<Conv2d>(sub("conv3"), width, out_channels_, 1, 1, 0));
  } else {
    out_channels_ = width;
    convs_.push_back(std::make_unique<Conv2d>(sub("conv1"), in_ch, width, 3, stride, 1));
    convs_.push_back(std::make_unique<Conv2d>(sub("conv2"), width, width, 3, 1, 1));
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    bns_.push_back(std::make_unique<BatchNorm>(sub("bn" + std::to_string(i + 1)),
                                               static_cast<int>(convs_[i]->weight.dim(0)), true));
  }
  if (stride != 1 || in_ch != out_channels_) {
    shortcut_conv_ = std::make_unique<Conv2d>(sub("downsample.0"), in_ch, out_channels_, 1, stride, 0);
    shortcut_bn_ = std::make_unique<BatchNorm>(sub("downsample.1"), out_channels_, true);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, ForwardContext& ctx) {
  Tensor y = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    y = bns_[i]->forward(convs_[i]->forward(y, ctx), ctx);
    if (i + 1 < convs_.size()) y = relu(y);
  }
  Tensor identity = x;
  if (shortcut_conv_) identity = shortcut_bn_->forward(shortcut_conv_->forward(x, ctx), ctx);
  return relu(add(y, identity));
}

void ResidualBlock::collect_parameters(std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i]->collect_parameters(out);
    bns_[i]->collect_parameters(out);
  }
  if (shortcut_conv_) {
    shortcut_conv_->collect_parameters(out);
    shortcut_bn_->collect_parameters(out);
  }
}

void ResidualBlock::collect_buffers(std::vector<NamedTensor>& out) const {
  for (const auto& bn : bns_) bn->collect_buffers(out);
  if (shortcut_bn_) shortcut_bn_->collect_buffers(out);
}

void ResidualBlock::set_frozen(bool frozen) {
  Layer::set_frozen(frozen);
  for (auto& c : convs_) c->set_frozen(frozen);
  for (auto& b : bns_) b->set_frozen(frozen);
  if (shortcut_conv_) {
    shortcut_conv_->set_frozen(frozen);
    shortcut_bn_->set_frozen(frozen);
  }
}

void ResidualBlock::init(std::mt19937_64& rng) {
  for (auto& c : convs_) c->init_kaiming_normal(rng);
  if (shortcut_conv_) shortcut_conv_->init_kaiming_normal(rng);
}

}  // namespace stagewise::nn
