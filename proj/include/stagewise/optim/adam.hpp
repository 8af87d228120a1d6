// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stagewise/nn/model.hpp"

namespace stagewise::optim {

/// One learning rate per layer group, index = group id.
using LrAssignment = std::vector<double>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  Tensor m;
  Tensor v;
};

/// Bias-corrected Adam without weight decay. Moments are keyed by parameter
/// name and created lazily on the first update of each parameter.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// Frozen parameters are skipped. Unfrozen ones must carry a gradient.
  void step(const std::vector<nn::Parameter>& params, const LrAssignment& lrs);

  std::int64_t t() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::map<std::string, AdamSlot>& slots() const { return slots_; }

  /// Moments as "<param>.adam_m" / "<param>.adam_v" tensors.
  std::vector<nn::NamedTensor> state_tensors() const;
  void load_state(std::int64_t t, const std::vector<nn::NamedTensor>& tensors);

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, AdamSlot> slots_;
};

/// Convenience: step on every parameter of a model.
void adam_step(nn::Model& model, Adam& adam, const LrAssignment& lrs);

enum class LrSpacing { linear, geometric };

/// Endpoints exact; interior evenly spaced in value or in log-value.
LrAssignment discriminative_lrs(double lr_first, double lr_last, int n_groups,
                                LrSpacing spacing = LrSpacing::linear);

}  // namespace stagewise::optim
