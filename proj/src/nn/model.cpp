// SPDX-License-Identifier: Apache-2.0
#include "stagewise/nn/model.hpp"

#include <algorithm>
#include <map>

#include "stagewise/errors.hpp"

namespace stagewise::nn {

void ResNetConfig::validate() const {
  if (blocks.empty()) throw ConfigError("resnet: at least one stage is required");
  for (int b : blocks) {
    if (b <= 0) throw ConfigError("resnet: stage block counts must be positive");
  }
  if (base_width <= 0) throw ConfigError("resnet: base width must be positive");
  if (n_classes < 2) throw ConfigError("resnet: n_classes must be >= 2");
  if (head.hidden <= 0) throw ConfigError("resnet: head hidden width must be positive");
  if (!(head.p1 >= 0.0F && head.p1 < 1.0F) || !(head.p2 >= 0.0F && head.p2 < 1.0F)) {
    throw ConfigError("resnet: head dropout rates must be in [0, 1)");
  }
}

Tensor Model::forward(const Tensor& images, ForwardContext& ctx) {
  if (images.ndim() != 4 || images.dim(1) != 3) {
    throw ShapeError("model: expected N×3×H×W images, got " + shape_str(images.shape()));
  }
  if (images.dim(2) < kMinInputSize || images.dim(3) < kMinInputSize) {
    throw ShapeError("model: input " + shape_str(images.shape()) + " is smaller than the " +
                     std::to_string(kMinInputSize) + "×" + std::to_string(kMinInputSize) + " minimum");
  }
  Tensor x = images;
  for (auto& layer : layers_) x = layer->forward(x, ctx);
  return x;
}

std::vector<Parameter> Model::parameters() const {
  std::vector<Parameter> out;
  std::vector<NamedTensor> scratch;
  for (const auto& layer : layers_) {
    scratch.clear();
    layer->collect_parameters(scratch);
    for (auto& nt : scratch) {
      out.push_back({std::move(nt.name), nt.tensor, layer->group_id(), layer->frozen()});
    }
  }
  return out;
}

std::vector<NamedTensor> Model::buffers() const {
  std::vector<NamedTensor> out;
  for (const auto& layer : layers_) layer->collect_buffers(out);
  return out;
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) out.push_back({std::move(p.name), p.tensor});
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.tensor;
  const auto own = state();
  for (const auto& mine : own) {
    auto it = by_name.find(mine.name);
    if (it == by_name.end()) throw CheckpointError("model state is missing '" + mine.name + "'");
    if (it->second->shape() != mine.tensor.shape()) {
      throw CheckpointError("model state '" + mine.name + "' has shape " +
                            shape_str(it->second->shape()) + ", expected " +
                            shape_str(mine.tensor.shape()));
    }
  }
  for (const auto& mine : own) {
    auto src = by_name.at(mine.name)->data();
    auto dst = Tensor(mine.tensor).data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) {
    if (p.frozen) {
      p.tensor.clear_grad();
    } else {
      p.tensor.zero_grad();
    }
  }
}

namespace {

template <typename L, typename... Args>
L* push(std::vector<std::unique_ptr<Layer>>& layers, LayerSite site, Args&&... args) {
  auto layer = std::make_unique<L>(std::forward<Args>(args)...);
  layer->set_site(site);
  L* raw = layer.get();
  layers.push_back(std::move(layer));
  return raw;
}

}  // namespace

Model build_resnet(const ResNetConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  std::mt19937_64 rng(seed);
  auto& L = m.layers_;

  const int stem_ch = config.base_width;
  push<Conv2d>(L, {0, -1}, "stem.conv", 3, stem_ch, 7, 2, 3)->init_kaiming_normal(rng);
  push<BatchNorm>(L, {0, -1}, "stem.bn", stem_ch, true);
  push<ReLU>(L, {0, -1}, "stem.relu");
  push<MaxPool2d>(L, {0, -1}, "stem.pool", 3, 2, 1);

  int in_ch = stem_ch;
  for (std::size_t s = 0; s < config.blocks.size(); ++s) {
    const int width = config.base_width << s;
    for (int b = 0; b < config.blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      auto* block = push<ResidualBlock>(L, {static_cast<int>(s) + 1, b}, name, in_ch, width, stride,
                                        config.bottleneck);
      block->init(rng);
      in_ch = block->out_channels();
    }
  }
  m.body_channels_ = in_ch;
  m.head_begin_ = L.size();
  replace_head(m, config.n_classes, seed ^ 0x9e3779b97f4a7c15ULL);
  assign_layer_groups(m, std::min<int>(kDefaultGroups, static_cast<int>(config.blocks.size()) + 2));
  return m;
}

Model& replace_head(Model& model, int n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("replace_head: n_classes must be >= 2");
  if (model.head_begin_ == 0) throw ContractError("replace_head: model has no body");
  auto& L = model.layers_;
  L.erase(L.begin() + static_cast<std::ptrdiff_t>(model.head_begin_), L.end());

  const auto& hc = model.config_.head;
  const int c2 = 2 * model.body_channels_;
  std::mt19937_64 rng(seed);
  const LayerSite head{-1, -1};
  push<AdaptiveConcatPool>(L, head, "head.pool");
  push<Flatten>(L, head, "head.flatten");
  push<BatchNorm>(L, head, "head.bn1", c2, false);
  push<Dropout>(L, head, "head.drop1", hc.p1);
  push<Linear>(L, head, "head.fc1", c2, hc.hidden)->init_kaiming_uniform(rng);
  push<ReLU>(L, head, "head.relu");
  push<BatchNorm>(L, head, "head.bn2", hc.hidden, false);
  push<Dropout>(L, head, "head.drop2", hc.p2);
  push<Linear>(L, head, "head.fc2", hc.hidden, n_classes)->init_kaiming_uniform(rng);

  model.config_.n_classes = n_classes;
  for (std::size_t i = model.head_begin_; i < L.size(); ++i) L[i]->set_group_id(model.n_groups_ - 1);
  return model;
}

Model& assign_layer_groups(Model& model, int n_groups) {
  if (n_groups < 2) throw ConfigError("assign_layer_groups: n_groups must be >= 2");
  const int body_groups = n_groups - 1;
  const auto& blocks = model.config_.blocks;
  const int n_stages = static_cast<int>(blocks.size());
  int n_blocks = 0;
  for (int b : blocks) n_blocks += b;

  const bool coarse = body_groups <= 1 + n_stages;
  const int units = coarse ? 1 + n_stages : 1 + n_blocks;
  if (body_groups > units) {
    throw ConfigError("assign_layer_groups: " + std::to_string(n_groups) +
                      " groups exceeds the " + std::to_string(units + 1) + " groupable units");
  }
  std::vector<int> stage_offset(static_cast<std::size_t>(n_stages) + 1, 1);
  for (int s = 0; s < n_stages; ++s) stage_offset[s + 1] = stage_offset[s] + blocks[s];

  auto& L = model.layers_;
  for (std::size_t i = 0; i < L.size(); ++i) {
    if (i >= model.head_begin_) {
      L[i]->set_group_id(n_groups - 1);
      continue;
    }
    const LayerSite site = L[i]->site();
    int unit = 0;
    if (site.stage > 0) unit = coarse ? site.stage : stage_offset[site.stage - 1] + site.block;
    L[i]->set_group_id(static_cast<int>(static_cast<std::int64_t>(unit) * body_groups / units));
  }
  model.n_groups_ = n_groups;
  return model;
}

Model& set_frozen(Model& model, FreezeMode mode) {
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const bool body = i < model.head_begin();
    model.layer(i).set_frozen(mode == FreezeMode::head_only && body);
  }
  return model;
}

}  // namespace stagewise::nn
