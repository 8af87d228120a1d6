// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks for every differentiable op, plus a composite
// graph shaped like a residual block feeding the classifier head. Shared by
// the unit tests and the acceptance binary.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "stagewise/ops.hpp"

namespace stagewise::testing {

struct OpGradReport {
  std::string op;
  int instances = 0;
  double worst_rel_error = 0.0;
};

namespace suite_detail {

inline Tensor away_from_zero(const Shape& shape, std::mt19937_64& rng, float margin = 0.05F) {
  std::uniform_real_distribution<float> mag(margin, 1.0F);
  std::bernoulli_distribution sign(0.5);
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(shape, std::move(v));
}

/// Distinct values spaced 0.02 apart in random order, so max-based ops have
/// a unique winner that no ±h perturbation can flip.
inline Tensor well_separated(const Shape& shape, std::mt19937_64& rng) {
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  std::iota(v.begin(), v.end(), 0.0F);
  std::shuffle(v.begin(), v.end(), rng);
  const float offset = static_cast<float>(v.size()) * 0.01F;
  for (auto& x : v) x = x * 0.02F - offset;
  return Tensor(shape, std::move(v));
}

inline std::int64_t pick(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

inline Tensor ones_like(const Tensor& t) { return Tensor(t.shape(), 1.0F); }

}  // namespace suite_detail

/// Runs `instances` random cases for each op and reports the worst error seen.
inline std::vector<OpGradReport> run_gradient_suite(int instances, std::uint64_t seed) {
  using namespace suite_detail;
  std::mt19937_64 rng(seed);
  std::vector<OpGradReport> reports;

  auto record = [&](const std::string& name, auto&& one_case) {
    OpGradReport r{name, instances, 0.0};
    for (int i = 0; i < instances; ++i) r.worst_rel_error = std::max(r.worst_rel_error, one_case());
    reports.push_back(r);
  };

  record("conv2d", [&] {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const auto k = pick(rng, 1, 3);
    const int stride = static_cast<int>(pick(rng, 1, 2));
    const int pad = static_cast<int>(pick(rng, 0, 1));
    const auto h = pick(rng, k + 1, 6), w = pick(rng, k + 1, 6);
    Tensor x = random_tensor({n, c, h, w}, rng);
    Tensor wt = random_tensor({o, c, k, k}, rng);
    Tensor b = random_tensor({o}, rng);
    Tensor probe = random_tensor({n, o, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1}, rng);
    return gradcheck(
        {x, wt, b},
        [&](const std::vector<Tensor>& in) {
          return sum(mul(conv2d(in[0], in[1], in[2], stride, pad), probe));
        },
        [&](const std::vector<ref::Array>& in) {
          return project(ref::conv2d(in[0], in[1], &in[2], stride, pad), probe);
        });
  });

  record("batch_norm2d(train)", [&] {
    const auto n = pick(rng, 2, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 2, 3);
    Tensor x = random_tensor({n, c, h, w}, rng, -2.0F, 2.0F);
    Tensor gamma = random_tensor({c}, rng, 0.5F, 1.5F);
    Tensor beta = random_tensor({c}, rng);
    Tensor probe = random_tensor(x.shape(), rng);
    return gradcheck(
        {x, gamma, beta},
        [&](const std::vector<Tensor>& in) {
          Tensor rm({c}, 0.0F), rv({c}, 1.0F);
          return sum(mul(batch_norm2d(in[0], in[1], in[2], rm, rv, {true, 1e-5F, 0.1F}), probe));
        },
        [&](const std::vector<ref::Array>& in) {
          return project(ref::batch_norm_train(in[0], in[1], in[2], 1e-5), probe);
        });
  });

  record("batch_norm2d(eval)", [&] {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
    Tensor x = random_tensor({n, c, h, w}, rng, -2.0F, 2.0F);
    Tensor gamma = random_tensor({c}, rng, 0.5F, 1.5F);
    Tensor beta = random_tensor({c}, rng);
    Tensor rm = random_tensor({c}, rng), rv = random_tensor({c}, rng, 0.5F, 2.0F);
    Tensor probe = random_tensor(x.shape(), rng);
    return gradcheck(
        {x, gamma, beta},
        [&](const std::vector<Tensor>& in) {
          return sum(mul(batch_norm2d(in[0], in[1], in[2], rm, rv, {false, 1e-5F, 0.1F}), probe));
        },
        [&](const std::vector<ref::Array>& in) {
          return project(ref::batch_norm_eval(in[0], in[1], in[2], ref::from_tensor(rm),
                                              ref::from_tensor(rv), 1e-5),
                         probe);
        });
  });

  // Below four rows the normalized output barely depends on the input and the
  // float32 gradient is dominated by rounding.
  record("batch_norm1d(train)", [&] {
    const auto n = pick(rng, 4, 8), c = pick(rng, 1, 5);
    Tensor x = random_tensor({n, c}, rng, -2.0F, 2.0F);
    Tensor gamma = random_tensor({c}, rng, 0.5F, 1.5F);
    Tensor beta = random_tensor({c}, rng);
    Tensor probe = random_tensor(x.shape(), rng);
    return gradcheck(
        {x, gamma, beta},
        [&](const std::vector<Tensor>& in) {
          Tensor rm({c}, 0.0F), rv({c}, 1.0F);
          return sum(mul(batch_norm1d(in[0], in[1], in[2], rm, rv, {true, 1e-5F, 0.1F}), probe));
        },
        [&](const std::vector<ref::Array>& in) {
          return project(ref::batch_norm_train(in[0], in[1], in[2], 1e-5), probe);
        });
  });

  record("max_pool2d", [&] {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 2), h = pick(rng, 3, 6), w = pick(rng, 3, 6);
    Tensor x = well_separated({n, c, h, w}, rng);
    Tensor probe = random_tensor({n, c, (h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1}, rng);
    return gradcheck(
        {x}, [&](const std::vector<Tensor>& in) { return sum(mul(max_pool2d(in[0], 3, 2, 1), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::max_pool2d(in[0], 3, 2, 1), probe); });
  });

  record("adaptive_concat_pool", [&] {
    const auto n = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    Tensor x = well_separated({n, c, h, w}, rng);
    Tensor probe = random_tensor({n, 2 * c}, rng);
    return gradcheck(
        {x}, [&](const std::vector<Tensor>& in) { return sum(mul(adaptive_concat_pool(in[0]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::concat_pool(in[0]), probe); });
  });

  record("relu", [&] {
    Tensor x = away_from_zero({pick(rng, 1, 4), pick(rng, 1, 6)}, rng);
    Tensor probe = random_tensor(x.shape(), rng);
    return gradcheck(
        {x}, [&](const std::vector<Tensor>& in) { return sum(mul(relu(in[0]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::relu(in[0]), probe); });
  });

  record("linear", [&] {
    const auto n = pick(rng, 1, 4), in_f = pick(rng, 1, 6), out_f = pick(rng, 1, 5);
    Tensor x = random_tensor({n, in_f}, rng);
    Tensor w = random_tensor({out_f, in_f}, rng);
    Tensor b = random_tensor({out_f}, rng);
    Tensor probe = random_tensor({n, out_f}, rng);
    return gradcheck(
        {x, w, b}, [&](const std::vector<Tensor>& in) { return sum(mul(linear(in[0], in[1], in[2]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::linear(in[0], in[1], &in[2]), probe); });
  });

  record("matmul", [&] {
    const auto m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor probe = random_tensor({m, n}, rng);
    return gradcheck(
        {a, b}, [&](const std::vector<Tensor>& in) { return sum(mul(matmul(in[0], in[1]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::matmul(in[0], in[1]), probe); });
  });

  record("dropout(train)", [&] {
    Tensor x = random_tensor({pick(rng, 1, 4), pick(rng, 2, 8)}, rng);
    Tensor probe = random_tensor(x.shape(), rng);
    const std::uint64_t mask_seed = rng();
    // The mask is recovered from the library by dropping out a tensor of ones.
    std::mt19937_64 mask_rng(mask_seed);
    Tensor mask = dropout(ones_like(x), 0.3F, true, mask_rng);
    return gradcheck(
        {x},
        [&](const std::vector<Tensor>& in) {
          std::mt19937_64 r(mask_seed);
          return sum(mul(dropout(in[0], 0.3F, true, r), probe));
        },
        [&](const std::vector<ref::Array>& in) {
          return project(ref::mul(in[0], ref::from_tensor(mask)), probe);
        });
  });

  record("add", [&] {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
    Tensor a = random_tensor(s, rng), b = random_tensor(s, rng), probe = random_tensor(s, rng);
    return gradcheck(
        {a, b}, [&](const std::vector<Tensor>& in) { return sum(mul(add(in[0], in[1]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::add(in[0], in[1]), probe); });
  });

  record("mul", [&] {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
    Tensor a = random_tensor(s, rng), b = random_tensor(s, rng), probe = random_tensor(s, rng);
    return gradcheck(
        {a, b}, [&](const std::vector<Tensor>& in) { return sum(mul(mul(in[0], in[1]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(ref::mul(in[0], in[1]), probe); });
  });

  record("flatten", [&] {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    Tensor x = random_tensor(s, rng);
    Tensor probe = random_tensor({s[0], s[1] * s[2] * s[3]}, rng);
    return gradcheck(
        {x}, [&](const std::vector<Tensor>& in) { return sum(mul(flatten(in[0]), probe)); },
        [&](const std::vector<ref::Array>& in) { return project(in[0], probe); });
  });

  record("cross_entropy", [&] {
    const auto n = pick(rng, 1, 6), k = pick(rng, 2, 5);
    Tensor z = random_tensor({n, k}, rng, -3.0F, 3.0F);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
    return gradcheck(
        {z}, [&](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels); },
        [&](const std::vector<ref::Array>& in) { return ref::cross_entropy(in[0], labels); });
  });

  // conv -> bn -> relu -> conv -> bn + shortcut -> relu -> concat pool -> bn1d
  // -> linear -> cross entropy. Instances whose ReLU inputs sit within 0.01
  // of the kink are redrawn since central differences are undefined there.
  record("composite(residual+head)", [&] {
    for (;;) {
      const std::int64_t n = 8, c = 2, h = 4, w = 4, k = 3;
      Tensor x = random_tensor({n, c, h, w}, rng);
      // Conv weights feeding batch norm are kept away from zero: the loss is
      // invariant to their scale, so its curvature grows like 1/|w|^2.
      Tensor w1 = away_from_zero({c, c, 3, 3}, rng, 0.3F);
      Tensor w2 = away_from_zero({c, c, 1, 1}, rng, 0.3F);
      Tensor g1 = random_tensor({c}, rng, 0.5F, 1.5F), b1 = random_tensor({c}, rng);
      Tensor g2 = random_tensor({c}, rng, 0.5F, 1.5F), b2 = random_tensor({c}, rng);
      Tensor g3 = random_tensor({2 * c}, rng, 0.5F, 1.5F), b3 = random_tensor({2 * c}, rng);
      Tensor fc = random_tensor({k, 2 * c}, rng), fcb = random_tensor({k}, rng);
      const std::vector<int> labels{0, 2, 1, 2, 1, 0, 0, 2};

      auto ref_forward = [&](const std::vector<ref::Array>& in, double* margin) {
        auto a = ref::batch_norm_train(ref::conv2d(in[0], in[1], nullptr, 1, 1), in[3], in[4], 1e-5);
        auto b = ref::add(ref::batch_norm_train(ref::conv2d(ref::relu(a), in[2], nullptr, 1, 0),
                                                in[5], in[6], 1e-5),
                          in[0]);
        if (margin) {
          *margin = 1e9;
          for (double v : a.v) *margin = std::min(*margin, std::abs(v));
          for (double v : b.v) *margin = std::min(*margin, std::abs(v));
          // Gap between the two largest activations of each pooled plane.
          const auto plane = h * w;
          for (std::int64_t p = 0; p < n * c; ++p) {
            std::vector<double> vals(b.v.begin() + p * plane, b.v.begin() + (p + 1) * plane);
            std::sort(vals.rbegin(), vals.rend());
            if (vals[1] > 0.0) *margin = std::min(*margin, vals[0] - vals[1]);
          }
        }
        auto pooled = ref::concat_pool(ref::relu(b));
        auto z = ref::linear(ref::batch_norm_train(pooled, in[7], in[8], 1e-5), in[9], &in[10]);
        return ref::cross_entropy(z, labels);
      };

      std::vector<Tensor> inputs{x, w1, w2, g1, b1, g2, b2, g3, b3, fc, fcb};
      std::vector<ref::Array> ref_in;
      for (const auto& t : inputs) ref_in.push_back(ref::from_tensor(t));
      double margin = 0.0;
      ref_forward(ref_in, &margin);
      if (margin < 0.01) continue;

      return gradcheck(
          inputs,
          [&](const std::vector<Tensor>& in) {
            Tensor rm1({c}, 0.0F), rv1({c}, 1.0F), rm2({c}, 0.0F), rv2({c}, 1.0F);
            Tensor rm3({2 * c}, 0.0F), rv3({2 * c}, 1.0F);
            const BatchNormOptions bn{true, 1e-5F, 0.1F};
            Tensor a = batch_norm2d(conv2d(in[0], in[1], Tensor(), 1, 1), in[3], in[4], rm1, rv1, bn);
            Tensor b = add(batch_norm2d(conv2d(relu(a), in[2], Tensor(), 1, 0), in[5], in[6], rm2, rv2, bn),
                           in[0]);
            Tensor pooled = adaptive_concat_pool(relu(b));
            Tensor z = linear(batch_norm1d(pooled, in[7], in[8], rm3, rv3, bn), in[9], in[10]);
            return cross_entropy(z, labels);
          },
          [&](const std::vector<ref::Array>& in) { return ref_forward(in, nullptr); });
    }
  });

  return reports;
}

}  // namespace stagewise::testing
