// SPDX-License-Identifier: Apache-2.0
//
// Binary layout, all integers little-endian:
//   "SWCK"  u32 version
//   u64 metadata length, metadata as UTF-8 JSON
//   u64 tensor count, then per tensor:
//     u32 name length, name bytes, u8 dtype (0 = f32), u32 ndim, i64 dims[ndim],
//     u64 payload bytes, payload
// Model tensors come first, followed by optimizer moments.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagewise/nn/model.hpp"
#include "stagewise/optim/adam.hpp"

namespace stagewise::train {

/// Where a run stands: the next epoch to execute.
struct Position {
  int stage = 0;
  int step = 0;
  int epoch_in_step = 0;
  int epochs_completed = 0;
  bool finished = false;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nn::ResNetConfig model;
  int n_groups = nn::kDefaultGroups;
  std::vector<std::string> class_names;
  Position position;
  std::uint64_t seed = 0;
  std::int64_t adam_t = 0;
  /// Run bookkeeping (history, chosen rates); opaque to the format.
  nlohmann::json run = nlohmann::json::object();
  std::vector<nn::NamedTensor> model_state;
  std::vector<nn::NamedTensor> optim_state;
};

/// Captures current values. Tensors are deep copies.
Checkpoint make_checkpoint(const nn::Model& model, const optim::Adam* adam, const Position& position);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws CheckpointError: "bad magic", version mismatch, truncation, malformed tables.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
void save_checkpoint(const nn::Model& model, const optim::Adam* adam, const Position& position,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the network described by the checkpoint and loads its tensors.
nn::Model restore_model(const Checkpoint& ck);
/// Restores the optimizer moments and step counter.
void restore_optimizer(const Checkpoint& ck, optim::Adam& adam);

/// Copies every body tensor (anything outside the head) whose name and shape
/// match. Returns the number of tensors copied.
std::size_t load_body_weights(nn::Model& model, const Checkpoint& ck);

}  // namespace stagewise::train
