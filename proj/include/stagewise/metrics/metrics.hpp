// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagewise/data/loader.hpp"
#include "stagewise/nn/model.hpp"

namespace stagewise::metrics {

/// counts[t][p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::int64_t>> counts;

  int k() const { return static_cast<int>(counts.size()); }
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int t) const;
  std::int64_t col_sum(int p) const;
};

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int k,
                                 std::vector<std::string> classes = {});

/// Percentages rounded half-to-even to 2 decimals; nullopt when undefined.
struct ClassMetrics {
  std::optional<double> recall;
  std::optional<double> ppv;
  std::optional<double> f1;
};

/// 100·num/den rounded half-to-even at 2 decimals, computed exactly.
double percent(std::int64_t num, std::int64_t den);

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);
/// Mean recall over classes with a non-empty row, unrounded.
double macro_recall(const ConfusionMatrix& cm);

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  std::int64_t n = 0;
};

EvalReport make_report(const ConfusionMatrix& cm);

/// Argmax predictions over an ordered, unaugmented pass of the loader.
EvalReport evaluate(nn::Model& model, const data::BatchLoader& test);
EvalReport evaluate(nn::Model& model, const data::DatasetManifest& manifest, int image_size,
                    int batch_size = 32, const data::NormalizationStats& stats = {});

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
/// Plain-text recall / PPV / F1 tables followed by the confusion matrix.
std::string format_report(const EvalReport& report);

}  // namespace stagewise::metrics
