// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace stagewise::optim {

struct LrFinderConfig {
  double lr_min = 1e-7;
  double lr_max = 10.0;
  int n_iters = 100;
  double beta = 0.98;
  double divergence_factor = 4.0;
  /// Samples ignored at each end when picking the suggestion. Ignored when
  /// fewer than three samples would remain.
  int skip_start = 10;
  int skip_end = 5;

  void validate() const;
};

struct LrSample {
  double lr;
  double loss;
  double smoothed;
};

enum class StopReason { diverged, exhausted };

struct LrCurve {
  std::vector<LrSample> samples;
  double suggested_lr = 0.0;
  StopReason stop_reason = StopReason::exhausted;
};

/// Runs one training step at `lr` and returns that step's loss.
using LrStepFn = std::function<double(double lr)>;

/// Exponential sweep from lr_min toward lr_max with a bias-corrected EMA of
/// the loss. Stops when the smoothed loss exceeds divergence_factor × best or
/// turns non-finite. Throws DivergenceError if the first loss is non-finite.
LrCurve lr_range_test(const LrStepFn& step, const LrFinderConfig& config = {});

/// Rate at the steepest negative slope of smoothed loss against log(lr),
/// using central differences inside and one-sided ones at the ends.
double suggest_lr(const std::vector<LrSample>& samples, int skip_start = 0, int skip_end = 0);

/// Scalar problem L = ½·λ·(θ − ξ)² with targets ξ ~ N(0, noise²), the
/// stochastic form of ½·λ·θ². Gradient descent on it is stable for lr < 2/λ.
/// Without target noise θ collapses to ~0 near lr = 1/λ and the loss cannot
/// regrow past the smoothed minimum before the sweep ends.
struct QuadraticProblem {
  double lambda = 1.0;
  double theta = 1.0;
  double noise = 0.2;
  std::uint64_t seed = 0;
};

/// Range test with plain stochastic gradient steps on θ; θ is restored afterwards.
LrCurve quadratic_range_test(QuadraticProblem& problem, const LrFinderConfig& config = {});

const char* stop_reason_name(StopReason r);
nlohmann::json to_json(const LrCurve& curve);
LrCurve lr_curve_from_json(const nlohmann::json& j);

/// Log-log style SVG plot of the smoothed curve with the suggestion marked.
std::string lr_curve_svg(const LrCurve& curve, int width = 640, int height = 400);

}  // namespace stagewise::optim
