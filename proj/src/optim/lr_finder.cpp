// SPDX-License-Identifier: Apache-2.0
#include "stagewise/optim/lr_finder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "stagewise/errors.hpp"

namespace stagewise::optim {

void LrFinderConfig::validate() const {
  if (!(lr_min > 0.0) || !(lr_max > lr_min) || !std::isfinite(lr_max)) {
    throw ConfigError("lr finder: need 0 < lr_min < lr_max");
  }
  if (n_iters < 10) throw ConfigError("lr finder: n_iters must be >= 10");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("lr finder: beta must be in [0, 1)");
  if (!(divergence_factor > 1.0)) throw ConfigError("lr finder: divergence factor must be > 1");
  if (skip_start < 0 || skip_end < 0) throw ConfigError("lr finder: skip counts must be >= 0");
}

double suggest_lr(const std::vector<LrSample>& samples, int skip_start, int skip_end) {
  if (samples.empty()) throw ContractError("suggest_lr: no samples");
  if (samples.size() == 1) return samples.front().lr;
  std::size_t lo = static_cast<std::size_t>(skip_start);
  std::size_t hi = samples.size() - std::min<std::size_t>(samples.size(), static_cast<std::size_t>(skip_end));
  if (hi < lo + 3) {
    lo = 0;
    hi = samples.size();
  }
  std::size_t best = lo;
  double best_slope = std::numeric_limits<double>::infinity();
  for (std::size_t i = lo; i < hi; ++i) {
    const std::size_t a = i == lo ? i : i - 1;
    const std::size_t b = i + 1 == hi ? i : i + 1;
    const double slope = (samples[b].smoothed - samples[a].smoothed) /
                         (std::log(samples[b].lr) - std::log(samples[a].lr));
    if (slope < best_slope) {
      best_slope = slope;
      best = i;
    }
  }
  return samples[best].lr;
}

LrCurve lr_range_test(const LrStepFn& step, const LrFinderConfig& config) {
  config.validate();
  LrCurve curve;
  const double ratio = std::log(config.lr_max / config.lr_min);
  double avg = 0.0;
  double best = std::numeric_limits<double>::infinity();
  curve.stop_reason = StopReason::exhausted;
  for (int i = 0; i < config.n_iters; ++i) {
    const double lr = i == 0 ? config.lr_min
                             : config.lr_min * std::exp(ratio * i / static_cast<double>(config.n_iters - 1));
    const double loss = step(lr);
    if (!std::isfinite(loss)) {
      if (i == 0) {
        throw DivergenceError("lr finder: loss is not finite at the first iteration (lr " +
                              std::to_string(lr) + "); check the data and model initialization");
      }
      curve.stop_reason = StopReason::diverged;
      break;
    }
    avg = config.beta * avg + (1.0 - config.beta) * loss;
    const double smoothed = avg / (1.0 - std::pow(config.beta, i + 1));
    curve.samples.push_back({lr, loss, smoothed});
    best = std::min(best, smoothed);
    if (i > 0 && smoothed > config.divergence_factor * best) {
      curve.stop_reason = StopReason::diverged;
      break;
    }
  }
  curve.suggested_lr = suggest_lr(curve.samples, config.skip_start, config.skip_end);
  return curve;
}

LrCurve quadratic_range_test(QuadraticProblem& problem, const LrFinderConfig& config) {
  const double saved = problem.theta;
  double theta = saved;
  std::mt19937_64 rng(problem.seed);
  std::normal_distribution<double> target(0.0, problem.noise);
  auto step = [&](double lr) {
    const double xi = problem.noise > 0.0 ? target(rng) : 0.0;
    const double r = theta - xi;
    const double loss = 0.5 * problem.lambda * r * r;
    theta -= lr * problem.lambda * r;
    return loss;
  };
  LrCurve curve = lr_range_test(step, config);
  problem.theta = saved;
  return curve;
}

const char* stop_reason_name(StopReason r) { return r == StopReason::diverged ? "diverged" : "exhausted"; }

nlohmann::json to_json(const LrCurve& curve) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : curve.samples) samples.push_back({{"lr", s.lr}, {"loss", s.loss}, {"smoothed", s.smoothed}});
  return {{"samples", samples}, {"suggested_lr", curve.suggested_lr}, {"stop_reason", stop_reason_name(curve.stop_reason)}};
}

LrCurve lr_curve_from_json(const nlohmann::json& j) {
  LrCurve c;
  try {
    for (const auto& s : j.at("samples")) {
      c.samples.push_back({s.at("lr").get<double>(), s.at("loss").get<double>(), s.at("smoothed").get<double>()});
    }
    c.suggested_lr = j.at("suggested_lr").get<double>();
    const auto reason = j.at("stop_reason").get<std::string>();
    if (reason == "diverged") {
      c.stop_reason = StopReason::diverged;
    } else if (reason == "exhausted") {
      c.stop_reason = StopReason::exhausted;
    } else {
      throw ParseError("lr curve: unknown stop_reason '" + reason + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("lr curve: ") + e.what());
  }
  return c;
}

std::string lr_curve_svg(const LrCurve& curve, int width, int height) {
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (curve.samples.size() >= 2) {
    const double pad = 50.0;
    double x0 = std::log10(curve.samples.front().lr), x1 = std::log10(curve.samples.back().lr);
    double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
    for (const auto& s : curve.samples) {
      y0 = std::min(y0, s.smoothed);
      y1 = std::max(y1, s.smoothed);
    }
    if (y1 <= y0) y1 = y0 + 1.0;
    auto px = [&](double lr) { return pad + (std::log10(lr) - x0) / (x1 - x0) * (width - 2 * pad); };
    auto py = [&](double v) { return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad); };
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& s : curve.samples) svg << px(s.lr) << ',' << py(s.smoothed) << ' ';
    svg << "\"/>\n";
    const double sx = px(curve.suggested_lr);
    svg << "<line x1=\"" << sx << "\" y1=\"" << pad << "\" x2=\"" << sx << "\" y2=\"" << height - pad
        << "\" stroke=\"#d62728\" stroke-dasharray=\"4 4\"/>\n";
    svg << "<text x=\"" << sx + 4 << "\" y=\"" << pad + 12 << "\" font-size=\"12\">suggested "
        << curve.suggested_lr << "</text>\n";
    for (int d = static_cast<int>(std::ceil(x0)); d <= static_cast<int>(std::floor(x1)); ++d) {
      svg << "<text x=\"" << px(std::pow(10.0, d)) << "\" y=\"" << height - pad + 16
          << "\" font-size=\"11\" text-anchor=\"middle\">1e" << d << "</text>\n";
    }
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
        << "\" font-size=\"12\" text-anchor=\"middle\">learning rate (log)</text>\n";
    svg << "<text x=\"12\" y=\"" << height / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << height / 2
        << ")\" text-anchor=\"middle\">smoothed loss</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace stagewise::optim
