// SPDX-License-Identifier: Apache-2.0
//
// A small synthetic dataset and a three-stage, six-epoch protocol with the
// same freeze/LR shapes as the full one, for fast end-to-end tests.
#pragma once

#include <filesystem>

#include "stagewise/data/synthetic.hpp"
#include "stagewise/train/protocol.hpp"

namespace stagewise::testing {

inline data::DatasetManifest tiny_dataset(const std::filesystem::path& dir) {
  data::SyntheticSpec spec;
  spec.train = {6, 6, 6, 3};
  spec.test = {3, 3, 3, 2};
  spec.image_size = 40;
  spec.seed = 4;
  return data::gen_synthetic(dir, spec);
}

inline train::ProtocolConfig tiny_protocol(const std::filesystem::path& manifest,
                                           const std::filesystem::path& ckdir = {}) {
  using optim::LrSpacing;
  using train::LrPolicy;
  train::ProtocolConfig c;
  c.model = nn::ResNetConfig::mini(4);
  c.model.head.hidden = 32;
  c.batch_size = 8;
  c.eval_batch_size = 5;
  c.seed = 21;
  c.manifest = manifest;
  c.checkpoint_dir = ckdir;
  c.lr_finder.n_iters = 12;
  c.lr_finder.skip_start = 2;
  c.lr_finder.skip_end = 2;
  c.lr_timeout_s = 30;
  c.stages = {
      {32,
       {{1, nn::FreezeMode::head_only, LrPolicy::fixed(1e-3)},
        {1, nn::FreezeMode::all_trainable, LrPolicy::discriminative(1e-5, 1e-3)}},
       true},
      {32,
       {{1, nn::FreezeMode::head_only, LrPolicy::fixed(1e-3)},
        {1, nn::FreezeMode::all_trainable, LrPolicy::discriminative(1e-5, 1e-3)}},
       false},
      {40, {{2, nn::FreezeMode::all_trainable, LrPolicy::discriminative(1e-5, 1e-3, LrSpacing::linear, true)}},
       false},
  };
  return c;
}

}  // namespace stagewise::testing
