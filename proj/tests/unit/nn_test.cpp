// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "stagewise/errors.hpp"
#include "stagewise/nn/model.hpp"
#include "stagewise/ops.hpp"
#include "../support/gradcheck.hpp"

namespace sw = stagewise;
using sw::nn::FreezeMode;
using sw::nn::ForwardContext;
using sw::nn::Model;
using sw::nn::ResNetConfig;

namespace {

// Independent count: walk the architecture's tensor shapes by hand.
std::int64_t enumerate_parameter_count(const ResNetConfig& c) {
  auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k; };
  auto bn = [](std::int64_t ch) { return 2 * ch; };
  std::int64_t total = conv(3, c.base_width, 7) + bn(c.base_width);
  std::int64_t in = c.base_width;
  for (std::size_t s = 0; s < c.blocks.size(); ++s) {
    const std::int64_t w = static_cast<std::int64_t>(c.base_width) << s;
    const std::int64_t out = c.bottleneck ? 4 * w : w;
    for (int b = 0; b < c.blocks[s]; ++b) {
      const bool strided = s > 0 && b == 0;
      if (c.bottleneck) {
        total += conv(in, w, 1) + bn(w) + conv(w, w, 3) + bn(w) + conv(w, out, 1) + bn(out);
      } else {
        total += conv(in, w, 3) + bn(w) + conv(w, w, 3) + bn(w);
      }
      if (strided || in != out) total += conv(in, out, 1) + bn(out);
      in = out;
    }
  }
  const std::int64_t h = c.head.hidden;
  total += bn(2 * in) + (2 * in * h + h) + bn(h) + (h * c.n_classes + c.n_classes);
  return total;
}

sw::Tensor images(std::int64_t n, std::int64_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sw::testing::random_tensor({n, 3, size, size}, rng);
}

std::vector<float> snapshot(const sw::Tensor& t) {
  auto d = t.data();
  return {d.begin(), d.end()};
}

bool is_body(const std::string& name) { return name.rfind("head.", 0) != 0; }

}  // namespace

TEST(ResNet, Resnet50ParameterCountNear25_6M) {
  Model m = sw::nn::build_resnet(ResNetConfig::resnet50(4), 1);
  const auto count = static_cast<double>(m.parameter_count());
  EXPECT_NEAR(count / 25.6e6, 1.0, 0.05);
  EXPECT_EQ(m.parameter_count(), enumerate_parameter_count(ResNetConfig::resnet50(4)));
}

TEST(ResNet, MiniParameterCountMatchesShapeEnumeration) {
  const auto cfg = ResNetConfig::mini(4);
  Model m = sw::nn::build_resnet(cfg, 1);
  EXPECT_EQ(m.parameter_count(), enumerate_parameter_count(cfg));
  ResNetConfig basic = cfg;
  basic.bottleneck = false;
  basic.blocks = {2, 1, 2};
  EXPECT_EQ(sw::nn::build_resnet(basic, 1).parameter_count(), enumerate_parameter_count(basic));
}

TEST(ResNet, ParameterNamesAreUnique) {
  Model m = sw::nn::build_resnet(ResNetConfig::resnet50(4), 1);
  std::set<std::string> names;
  for (const auto& p : m.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  for (const auto& b : m.buffers()) EXPECT_TRUE(names.insert(b.name).second) << b.name;
  EXPECT_TRUE(names.count("layer1.0.downsample.0.weight"));
  EXPECT_TRUE(names.count("head.fc2.weight"));
}

TEST(ResNet, Resnet50ForwardAtTwoSizesWithSameWeights) {
  Model m = sw::nn::build_resnet(ResNetConfig::resnet50(4), 3);
  ForwardContext eval;
  sw::NoGradGuard ng;
  for (std::int64_t size : {128, 224}) {
    auto y = m.forward(images(1, size, 9), eval);
    EXPECT_EQ(y.shape(), (sw::Shape{1, 4}));
    for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(ResNet, SizeAgnosticForward) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 3);
  ForwardContext eval;
  sw::NoGradGuard ng;
  for (std::int64_t size : {32, 64, 96, 128, 224}) {
    EXPECT_EQ(m.forward(images(2, size, 5), eval).shape(), (sw::Shape{2, 4}));
  }
  EXPECT_EQ(m.forward(images(3, 40, 5), eval).shape(), (sw::Shape{3, 4}));
}

TEST(ResNet, RejectsTooSmallInputAndBadConfig) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 3);
  ForwardContext eval;
  EXPECT_THROW(m.forward(images(1, 31, 5), eval), sw::ShapeError);
  EXPECT_THROW(m.forward(sw::Tensor({1, 1, 64, 64}), eval), sw::ShapeError);
  auto bad = ResNetConfig::mini(1);
  EXPECT_THROW(sw::nn::build_resnet(bad), sw::ConfigError);
  bad = ResNetConfig::mini(4);
  bad.blocks = {1, 0};
  EXPECT_THROW(sw::nn::build_resnet(bad), sw::ConfigError);
}

TEST(ResNet, SeededConstructionIsDeterministic) {
  Model a = sw::nn::build_resnet(ResNetConfig::mini(4), 42);
  Model b = sw::nn::build_resnet(ResNetConfig::mini(4), 42);
  Model c = sw::nn::build_resnet(ResNetConfig::mini(4), 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(snapshot(pa[i].tensor), snapshot(pb[i].tensor)) << pa[i].name;
    any_diff |= snapshot(pa[i].tensor) != snapshot(pc[i].tensor);
  }
  EXPECT_TRUE(any_diff);
}

TEST(ResNet, InitStatistics) {
  Model m = sw::nn::build_resnet(ResNetConfig::resnet50(4), 11);
  for (const auto& p : m.parameters()) {
    auto d = p.tensor.data();
    if (p.name == "layer3.0.conv2.weight") {
      // He-normal, fan-out: std = sqrt(2 / (256 * 3 * 3))
      double ss = 0.0;
      for (float v : d) ss += static_cast<double>(v) * v;
      const double expected = std::sqrt(2.0 / (256 * 9));
      EXPECT_NEAR(std::sqrt(ss / static_cast<double>(d.size())), expected, 0.05 * expected);
    } else if (p.name == "head.fc1.weight") {
      const float bound = static_cast<float>(std::sqrt(6.0 / 4096.0));
      float hi = 0.0F;
      for (float v : d) hi = std::max(hi, std::abs(v));
      EXPECT_LE(hi, bound);
      EXPECT_GT(hi, 0.99F * bound);
    } else if (p.name == "head.fc1.bias" || p.name == "head.bn1.bias") {
      for (float v : d) EXPECT_EQ(v, 0.0F);
    } else if (p.name == "head.bn1.weight") {
      for (float v : d) EXPECT_EQ(v, 1.0F);
    }
  }
}

TEST(ReplaceHead, BodyIsBitIdenticalAndHeadReinitialized) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 7);
  std::map<std::string, std::vector<float>> before;
  for (const auto& p : m.parameters()) before[p.name] = snapshot(p.tensor);
  for (const auto& b : m.buffers()) before[b.name] = snapshot(b.tensor);

  sw::nn::replace_head(m, 4, 99);
  bool head_changed = false;
  for (const auto& p : m.parameters()) {
    if (is_body(p.name)) {
      EXPECT_EQ(snapshot(p.tensor), before.at(p.name)) << p.name;
    } else if (p.name == "head.fc2.weight") {
      head_changed = snapshot(p.tensor) != before.at(p.name);
    }
  }
  for (const auto& b : m.buffers()) {
    if (is_body(b.name)) {
      EXPECT_EQ(snapshot(b.tensor), before.at(b.name)) << b.name;
    }
  }
  EXPECT_TRUE(head_changed);
}

TEST(ReplaceHead, OutputShapeAndSeededDeterminism) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(2), 7);
  sw::nn::replace_head(m, 4, 5);
  std::mt19937_64 rng(1);
  ForwardContext train{true, &rng, false};
  EXPECT_EQ(m.forward(images(8, 64, 2), train).shape(), (sw::Shape{8, 4}));
  EXPECT_EQ(m.n_classes(), 4);

  Model other = sw::nn::build_resnet(ResNetConfig::mini(2), 8);
  sw::nn::replace_head(other, 4, 5);
  auto pa = m.parameters(), pb = other.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (is_body(pa[i].name)) continue;
    EXPECT_EQ(snapshot(pa[i].tensor), snapshot(pb[i].tensor)) << pa[i].name;
  }
  EXPECT_THROW(sw::nn::replace_head(m, 1), sw::ConfigError);
}

TEST(ReplaceHead, HeadStructure) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 7);
  std::vector<std::string> kinds;
  for (std::size_t i = m.head_begin(); i < m.layer_count(); ++i) {
    kinds.emplace_back(m.layer(i).kind());
  }
  EXPECT_EQ(kinds, (std::vector<std::string>{"pool", "flatten", "bn", "dropout", "linear", "relu",
                                             "bn", "dropout", "linear"}));
  for (const auto& p : m.parameters()) {
    if (p.name == "head.fc1.weight") {
      EXPECT_EQ(p.tensor.shape(), (sw::Shape{512, 2 * 64 * 2 * 2 * 2}));
    }
  }
}

TEST(LayerGroups, TwoGroupsSplitsBodyAndHead) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 1);
  sw::nn::assign_layer_groups(m, 2);
  for (const auto& p : m.parameters()) EXPECT_EQ(p.group_id, is_body(p.name) ? 0 : 1) << p.name;
}

TEST(LayerGroups, SixGroupsFollowStageBoundaries) {
  Model m = sw::nn::build_resnet(ResNetConfig::resnet50(4), 1);
  sw::nn::assign_layer_groups(m, 6);
  for (const auto& p : m.parameters()) {
    int expected = 5;
    if (p.name.rfind("stem.", 0) == 0) expected = 0;
    for (int s = 1; s <= 4; ++s) {
      if (p.name.rfind("layer" + std::to_string(s) + ".", 0) == 0) expected = s;
    }
    EXPECT_EQ(p.group_id, expected) << p.name;
  }
}

TEST(LayerGroups, EveryGroupingIsAMonotonePartition) {
  Model m = sw::nn::build_resnet(ResNetConfig::resnet50(4), 1);
  const std::int64_t total = m.parameter_count();
  const int max_groups = 1 + 16 + 1;
  for (int g = 2; g <= max_groups; ++g) {
    sw::nn::assign_layer_groups(m, g);
    EXPECT_EQ(m.n_groups(), g);
    std::vector<std::int64_t> per_group(static_cast<std::size_t>(g), 0);
    int last = 0;
    for (std::size_t i = 0; i < m.layer_count(); ++i) {
      const int gid = m.layer(i).group_id();
      ASSERT_GE(gid, last);
      ASSERT_LT(gid, g);
      if (i == 0) {
        EXPECT_EQ(gid, 0);
      }
      if (i >= m.head_begin()) {
        EXPECT_EQ(gid, g - 1);
      } else {
        EXPECT_LT(gid, g - 1);
      }
      last = gid;
    }
    std::set<std::string> seen;
    for (const auto& p : m.parameters()) {
      EXPECT_TRUE(seen.insert(p.name).second);
      per_group[static_cast<std::size_t>(p.group_id)] += p.tensor.numel();
    }
    std::int64_t sum = 0;
    for (auto c : per_group) {
      EXPECT_GT(c, 0) << "empty group with g=" << g;
      sum += c;
    }
    EXPECT_EQ(sum, total);
  }
  EXPECT_THROW(sw::nn::assign_layer_groups(m, max_groups + 1), sw::ConfigError);
  EXPECT_THROW(sw::nn::assign_layer_groups(m, 1), sw::ConfigError);
}

TEST(LayerGroups, ReplacedHeadLandsInLastGroup) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 1);
  sw::nn::assign_layer_groups(m, 4);
  sw::nn::replace_head(m, 3, 2);
  for (std::size_t i = m.head_begin(); i < m.layer_count(); ++i) EXPECT_EQ(m.layer(i).group_id(), 3);
}

TEST(Freeze, HeadOnlyBlocksBodyGradientsAndStatistics) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 1);
  sw::nn::set_frozen(m, FreezeMode::head_only);
  std::map<std::string, std::vector<float>> buffers_before;
  for (const auto& b : m.buffers()) buffers_before[b.name] = snapshot(b.tensor);

  std::mt19937_64 rng(3);
  ForwardContext train{true, &rng, false};
  m.zero_grad();
  auto logits = m.forward(images(4, 48, 1), train);
  const std::vector<int> labels{0, 1, 2, 3};
  sw::cross_entropy(logits, labels).backward();

  for (const auto& p : m.parameters()) {
    EXPECT_EQ(p.frozen, is_body(p.name)) << p.name;
    EXPECT_EQ(p.tensor.has_grad(), !is_body(p.name)) << p.name;
  }
  for (const auto& b : m.buffers()) {
    const bool same = snapshot(b.tensor) == buffers_before.at(b.name);
    EXPECT_EQ(same, is_body(b.name)) << b.name;
  }
}

TEST(Freeze, OptInStatisticsUpdateForFrozenBody) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 1);
  sw::nn::set_frozen(m, FreezeMode::head_only);
  const auto before = snapshot(m.buffers().front().tensor);
  std::mt19937_64 rng(3);
  ForwardContext train{true, &rng, true};
  sw::NoGradGuard ng;
  m.forward(images(4, 48, 1), train);
  EXPECT_NE(snapshot(m.buffers().front().tensor), before);
}

TEST(Freeze, TogglingClearsFlagsAndKeepsValues) {
  Model m = sw::nn::build_resnet(ResNetConfig::mini(4), 1);
  std::vector<std::vector<float>> before;
  for (const auto& p : m.parameters()) before.push_back(snapshot(p.tensor));
  sw::nn::set_frozen(m, FreezeMode::head_only);
  sw::nn::set_frozen(m, FreezeMode::all_trainable);
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_FALSE(params[i].frozen);
    EXPECT_TRUE(params[i].tensor.requires_grad());
    EXPECT_EQ(snapshot(params[i].tensor), before[i]);
  }
}

TEST(ModelState, LoadStateRoundTripAndValidation) {
  Model a = sw::nn::build_resnet(ResNetConfig::mini(4), 1);
  Model b = sw::nn::build_resnet(ResNetConfig::mini(4), 2);
  std::vector<sw::nn::NamedTensor> copy;
  for (const auto& e : a.state()) copy.push_back({e.name, e.tensor.clone()});
  b.load_state(copy);
  auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(snapshot(sa[i].tensor), snapshot(sb[i].tensor));

  auto missing = copy;
  missing.pop_back();
  EXPECT_THROW(b.load_state(missing), sw::CheckpointError);
  Model c = sw::nn::build_resnet(ResNetConfig::mini(3), 1);
  EXPECT_THROW(c.load_state(copy), sw::CheckpointError);
}
