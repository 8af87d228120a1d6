// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagewise/data/augment.hpp"
#include "stagewise/data/image.hpp"
#include "stagewise/nn/model.hpp"
#include "stagewise/optim/adam.hpp"
#include "stagewise/optim/lr_finder.hpp"

namespace stagewise::train {

enum class LrKind { fixed, discriminative };

struct LrPolicy {
  LrKind kind = LrKind::fixed;
  double lr = 1e-3;  // fixed
  double lr_first = 1e-6;
  double lr_last = 1e-4;
  optim::LrSpacing spacing = optim::LrSpacing::linear;
  /// Pinned policies keep their values when a suggested or chosen rate arrives.
  bool pinned = false;

  static LrPolicy fixed(double lr, bool pinned = false);
  static LrPolicy discriminative(double first, double last,
                                 optim::LrSpacing spacing = optim::LrSpacing::linear,
                                 bool pinned = false);

  /// Per-group rates: the fixed rate everywhere, or discriminative_lrs(...).
  optim::LrAssignment resolve(int n_groups) const;
  /// Maps a base rate s into this policy: fixed -> s, discriminative -> (s/100, s).
  LrPolicy with_base(double s) const;
};

struct StepPlan {
  int epochs = 1;
  nn::FreezeMode freeze = nn::FreezeMode::all_trainable;
  LrPolicy lr{};
};

struct StagePlan {
  /// Square input side in pixels.
  int image_size = 224;
  std::vector<StepPlan> steps;
  /// Run the LR range test before the stage.
  bool lr_find = false;

  int epochs() const;
};

struct ProtocolConfig {
  std::vector<StagePlan> stages;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::filesystem::path manifest;
  std::filesystem::path checkpoint_dir;
  /// Optional checkpoint whose body tensors initialise the model.
  std::filesystem::path pretrained;
  nn::ResNetConfig model = nn::ResNetConfig::resnet50(4);
  int n_groups = nn::kDefaultGroups;
  data::NormalizationStats stats{};
  data::AugmentPolicy augment{};
  optim::LrFinderConfig lr_finder{};
  /// Seconds to wait for an interactive LR choice before using the suggestion.
  double lr_timeout_s = 300.0;
  int eval_batch_size = 64;

  int total_epochs() const;
  /// Structural checks only; paths are checked when a run starts.
  void validate() const;
};

/// Full-scale protocol: ResNet-50, sizes 128/224/229, 3+5+3+5+25 epochs.
ProtocolConfig default_protocol();
/// Same step structure on the mini network at sizes 32/48/64.
ProtocolConfig desk_protocol();

const char* freeze_name(nn::FreezeMode m);
const char* lr_kind_name(LrKind k);

nlohmann::json to_json(const LrPolicy& p);
LrPolicy lr_policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProtocolConfig& c);
/// Strict: unknown keys and wrong types raise ConfigError naming the field.
/// Missing keys take the defaults of default_protocol().
ProtocolConfig protocol_from_json(const nlohmann::json& j);
/// JSON syntax errors raise ParseError with the offending line.
ProtocolConfig load_protocol(const std::filesystem::path& path);
ProtocolConfig parse_protocol(const std::string& text);

nlohmann::json to_json(const nn::ResNetConfig& c);
nn::ResNetConfig resnet_config_from_json(const nlohmann::json& j);

}  // namespace stagewise::train
