// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/gradient_suite.hpp"
#include "../support/reference_ops.hpp"
#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"

namespace stagewise {
namespace {

using testing::random_tensor;

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor t({2, 3}, 1.5F);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Tensor x({3}, std::vector<float>{1, 2, 3}, true);
  sum(mul(x, x)).backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0F);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0F);
  EXPECT_FLOAT_EQ(x.grad()[2], 6.0F);
}

TEST(Backward, DetachedLeafGetsNoGradient) {
  Tensor x({3}, std::vector<float>{1, 2, 3}, true);
  Tensor c({3}, std::vector<float>{4, 5, 6}, false);
  sum(mul(x, c)).backward();
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(Backward, NonScalarLossIsContractViolation) {
  Tensor x({3}, 1.0F, true);
  EXPECT_THROW(relu(x).backward(), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // y = x*x + x, dy/dx = 2x + 1; x feeds three edges.
  Tensor x({2}, std::vector<float>{0.5F, -2.0F}, true);
  sum(add(mul(x, x), x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0F);
  EXPECT_FLOAT_EQ(x.grad()[1], -3.0F);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x({2}, 1.0F, true);
  NoGradGuard guard;
  Tensor y = relu(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Conv2d, PointwiseScaling) {
  Tensor x({1, 1, 3, 3}, 1.0F);
  Tensor w({1, 1, 1, 1}, 2.0F);
  Tensor y = conv2d(x, w, Tensor(), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 2.0F);
}

TEST(Conv2d, FullWindowSum) {
  Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor w({1, 1, 2, 2}, 1.0F);
  Tensor y = conv2d(x, w, Tensor(), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 10.0F);
}

TEST(Conv2d, MatchesNestedLoopReference) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y = conv2d(x, w, b, 1, 1);
  auto rb = ref::from_tensor(b);
  auto expected = ref::conv2d(ref::from_tensor(x), ref::from_tensor(w), &rb, 1, 1);
  ASSERT_EQ(y.shape(), expected.shape);
  for (std::size_t i = 0; i < expected.v.size(); ++i) {
    EXPECT_NEAR(y.data()[i], expected.v[i], 1e-5) << "at " << i;
  }
}

TEST(Conv2d, StridedMatchesReference) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({1, 2, 9, 7}, rng);
  Tensor w = random_tensor({3, 2, 7, 7}, rng);
  Tensor y = conv2d(x, w, Tensor(), 2, 3);
  auto expected = ref::conv2d(ref::from_tensor(x), ref::from_tensor(w), nullptr, 2, 3);
  ASSERT_EQ(y.shape(), expected.shape);
  for (std::size_t i = 0; i < expected.v.size(); ++i) EXPECT_NEAR(y.data()[i], expected.v[i], 1e-5);
}

TEST(Conv2d, ErrorPaths) {
  Tensor x({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, Tensor({1, 3, 3, 3}), Tensor(), 1, 0), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor({1, 2, 5, 5}), Tensor(), 1, 0), ConfigError);
  EXPECT_THROW(conv2d(Tensor({2, 4}), Tensor({1, 2, 1, 1}), Tensor(), 1, 0), ShapeError);
}

TEST(BatchNorm2d, TrainModeNormalizes) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({4, 3, 5, 5}, rng, -3.0F, 7.0F);
  Tensor gamma({3}, 1.0F), beta({3}, 0.0F), rm({3}, 0.0F), rv({3}, 1.0F);
  Tensor y = batch_norm2d(x, gamma, beta, rm, rv, {});
  for (int c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    int count = 0;
    for (int n = 0; n < 4; ++n)
      for (int s = 0; s < 25; ++s) {
        const double v = y.data()[static_cast<std::size_t>((n * 3 + c) * 25 + s)];
        mean += v;
        sq += v * v;
        ++count;
      }
    mean /= count;
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(sq / count - mean * mean, 1.0, 1e-3);
  }
  // Running stats moved toward the batch statistics.
  EXPECT_GT(rm.data()[0], 0.0F);
}

TEST(BatchNorm2d, EvalWithIdentityStats) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 2, 3, 3}, rng);
  Tensor gamma({2}, 1.0F), beta({2}, 0.0F), rm({2}, 0.0F), rv({2}, 1.0F);
  const float eps = 1e-5F;
  Tensor y = batch_norm2d(x, gamma, beta, rm, rv, {false, eps, 0.1F});
  const double factor = 1.0 / std::sqrt(1.0 + eps);
  for (std::size_t i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i] * factor, 1e-7);
  EXPECT_EQ(rm.data()[0], 0.0F);
}

TEST(BatchNorm2d, DegenerateBatchRejected) {
  Tensor x({1, 2, 1, 1}, 1.0F);
  Tensor gamma({2}, 1.0F), beta({2}, 0.0F), rm({2}, 0.0F), rv({2}, 1.0F);
  EXPECT_THROW(batch_norm2d(x, gamma, beta, rm, rv, {}), ShapeError);
  EXPECT_NO_THROW(batch_norm2d(x, gamma, beta, rm, rv, {false, 1e-5F, 0.1F}));
}

TEST(ConcatPool, ConstantChannels) {
  Tensor x({1, 2, 3, 3});
  for (int i = 0; i < 9; ++i) {
    x.data()[static_cast<std::size_t>(i)] = 1.5F;
    x.data()[static_cast<std::size_t>(9 + i)] = -2.0F;
  }
  Tensor y = adaptive_concat_pool(x);
  ASSERT_EQ(y.shape(), (Shape{1, 4}));
  EXPECT_FLOAT_EQ(y.data()[0], 1.5F);
  EXPECT_FLOAT_EQ(y.data()[1], -2.0F);
  EXPECT_FLOAT_EQ(y.data()[2], 1.5F);
  EXPECT_FLOAT_EQ(y.data()[3], -2.0F);
}

TEST(ConcatPool, AverageAndMax) {
  Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor y = adaptive_concat_pool(x);
  EXPECT_FLOAT_EQ(y.data()[0], 2.5F);
  EXPECT_FLOAT_EQ(y.data()[1], 4.0F);
}

TEST(ConcatPool, MatchesLoopReference) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({3, 5, 7, 9}, rng);
  Tensor y = adaptive_concat_pool(x);
  auto expected = ref::concat_pool(ref::from_tensor(x));
  for (std::size_t i = 0; i < expected.v.size(); ++i) EXPECT_NEAR(y.data()[i], expected.v[i], 1e-6);
}

TEST(CrossEntropy, UniformLogits) {
  Tensor z({3, 4}, 0.25F);
  std::vector<int> labels{0, 1, 3};
  EXPECT_NEAR(cross_entropy(z, labels).item(), std::log(4.0), 1e-6);
}

TEST(CrossEntropy, ConfidentPrediction) {
  Tensor z({1, 4}, 0.0F);
  z.data()[2] = 1000.0F;
  std::vector<int> labels{2};
  EXPECT_LT(cross_entropy(z, labels).item(), 1e-6F);
}

TEST(CrossEntropy, MatchesLogSumExpReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor z = random_tensor({6, 4}, rng, -5.0F, 5.0F);
    std::vector<int> labels{0, 1, 2, 3, 1, 2};
    EXPECT_NEAR(cross_entropy(z, labels).item(), ref::cross_entropy(ref::from_tensor(z), labels), 1e-5);
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  Tensor z({2, 4});
  std::vector<int> labels{0, 4};
  EXPECT_THROW(cross_entropy(z, labels), std::out_of_range);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(6);
  Tensor p = softmax(random_tensor({50, 4}, rng, -20.0F, 20.0F));
  for (int i = 0; i < 50; ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += p.data()[static_cast<std::size_t>(i * 4 + j)];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(ArgmaxRows, TiesGoToLowestIndex) {
  Tensor z({2, 3}, std::vector<float>{1, 3, 3, 0, 0, 0});
  EXPECT_EQ(argmax_rows(z), (std::vector<int>{1, 0}));
}

TEST(Dropout, EvalIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({4, 4}, rng);
  Tensor y = dropout(x, 0.5F, false, rng);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(x.data()[i], y.data()[i]);
}

TEST(Dropout, TrainPreservesExpectation) {
  std::mt19937_64 rng(2);
  Tensor x({1}, 3.0F);
  double total = 0;
  constexpr int trials = 10000;
  for (int i = 0; i < trials; ++i) total += dropout(x, 0.5F, true, rng).item();
  EXPECT_NEAR(total / trials, 3.0, 0.02 * 3.0);
}

TEST(Determinism, ForwardIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor x = random_tensor({2, 3, 9, 9}, rng);
    Tensor w = random_tensor({5, 3, 3, 3}, rng);
    Tensor g({5}, 1.0F), b({5}, 0.0F), rm({5}, 0.0F), rv({5}, 1.0F);
    Tensor y = relu(batch_norm2d(conv2d(x, w, Tensor(), 2, 1), g, b, rm, rv, {}));
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(GradientSuite, EveryOpPassesFiniteDifferences) {
  for (const auto& report : testing::run_gradient_suite(20, 20240401)) {
    EXPECT_LE(report.worst_rel_error, 1e-3) << report.op;
  }
}

}  // namespace
}  // namespace stagewise
