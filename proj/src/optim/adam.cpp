// SPDX-License-Identifier: Apache-2.0
#include "stagewise/optim/adam.hpp"

#include <algorithm>
#include <cmath>

#include "stagewise/errors.hpp"

namespace stagewise::optim {

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("adam: betas must be in [0, 1)");
  }
  if (!(config.eps > 0.0)) throw ConfigError("adam: eps must be > 0");
}

void Adam::step(const std::vector<nn::Parameter>& params, const LrAssignment& lrs) {
  for (const auto& p : params) {
    if (p.frozen) continue;
    if (p.group_id < 0 || static_cast<std::size_t>(p.group_id) >= lrs.size()) {
      throw ConfigError("adam: no learning rate for group " + std::to_string(p.group_id) + " of '" +
                        p.name + "'");
    }
    if (!p.tensor.has_grad()) throw ContractError("adam: unfrozen parameter '" + p.name + "' has no gradient");
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& p : params) {
    if (p.frozen) continue;
    auto [it, fresh] = slots_.try_emplace(p.name);
    if (fresh) it->second = {Tensor(p.tensor.shape()), Tensor(p.tensor.shape())};
    if (it->second.m.shape() != p.tensor.shape()) {
      throw ShapeError("adam: state for '" + p.name + "' has shape " + shape_str(it->second.m.shape()));
    }
    const double lr = lrs[static_cast<std::size_t>(p.group_id)];
    auto w = Tensor(p.tensor).data();
    auto g = p.tensor.grad();
    auto m = it->second.m.data();
    auto v = it->second.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      w[i] = static_cast<float>(w[i] - update);
    }
  }
}

std::vector<nn::NamedTensor> Adam::state_tensors() const {
  std::vector<nn::NamedTensor> out;
  for (const auto& [name, slot] : slots_) {
    out.push_back({name + ".adam_m", slot.m});
    out.push_back({name + ".adam_v", slot.v});
  }
  return out;
}

void Adam::load_state(std::int64_t t, const std::vector<nn::NamedTensor>& tensors) {
  if (t < 0) throw CheckpointError("adam: negative step counter");
  std::map<std::string, AdamSlot> slots;
  for (const auto& nt : tensors) {
    const auto dot = nt.name.rfind('.');
    if (dot == std::string::npos) throw CheckpointError("adam: unexpected state entry '" + nt.name + "'");
    const auto base = nt.name.substr(0, dot);
    const auto kind = nt.name.substr(dot + 1);
    if (kind == "adam_m") {
      slots[base].m = nt.tensor.clone();
    } else if (kind == "adam_v") {
      slots[base].v = nt.tensor.clone();
    } else {
      throw CheckpointError("adam: unexpected state entry '" + nt.name + "'");
    }
  }
  for (const auto& [name, slot] : slots) {
    if (!slot.m.defined() || !slot.v.defined() || slot.m.shape() != slot.v.shape()) {
      throw CheckpointError("adam: incomplete moments for '" + name + "'");
    }
  }
  t_ = t;
  slots_ = std::move(slots);
}

void adam_step(nn::Model& model, Adam& adam, const LrAssignment& lrs) {
  if (lrs.size() != static_cast<std::size_t>(model.n_groups())) {
    throw ConfigError("adam: " + std::to_string(lrs.size()) + " learning rates for " +
                      std::to_string(model.n_groups()) + " groups");
  }
  adam.step(model.parameters(), lrs);
}

LrAssignment discriminative_lrs(double lr_first, double lr_last, int n_groups, LrSpacing spacing) {
  if (n_groups < 1) throw ConfigError("discriminative_lrs: n_groups must be >= 1");
  if (!(lr_first > 0.0) || !(lr_last >= lr_first) || !std::isfinite(lr_last)) {
    throw ConfigError("discriminative_lrs: need 0 < lr_first <= lr_last");
  }
  if (n_groups == 1) {
    if (lr_first != lr_last) throw ConfigError("discriminative_lrs: one group needs lr_first == lr_last");
    return {lr_first};
  }
  LrAssignment out(static_cast<std::size_t>(n_groups));
  const double last = n_groups - 1;
  for (int i = 0; i < n_groups; ++i) {
    const double f = i / last;
    const double v = spacing == LrSpacing::linear ? lr_first + (lr_last - lr_first) * f
                                                  : lr_first * std::pow(lr_last / lr_first, f);
    out[static_cast<std::size_t>(i)] = std::clamp(v, lr_first, lr_last);
  }
  out.front() = lr_first;
  out.back() = lr_last;
  // Rounding can break monotonicity when the endpoints nearly coincide.
  for (std::size_t i = 1; i < out.size(); ++i) out[i] = std::max(out[i], out[i - 1]);
  return out;
}

}  // namespace stagewise::optim
