// SPDX-License-Identifier: Apache-2.0
#include "stagewise/metrics/metrics.hpp"

#include <iomanip>
#include <sstream>

#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"

namespace stagewise::metrics {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) {
    for (auto v : row) n += v;
  }
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (int i = 0; i < k(); ++i) n += counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  return n;
}

std::int64_t ConfusionMatrix::row_sum(int t) const {
  std::int64_t n = 0;
  for (auto v : counts.at(static_cast<std::size_t>(t))) n += v;
  return n;
}

std::int64_t ConfusionMatrix::col_sum(int p) const {
  std::int64_t n = 0;
  for (const auto& row : counts) n += row.at(static_cast<std::size_t>(p));
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int k,
                                 std::vector<std::string> classes) {
  if (k < 1) throw ContractError("confusion_matrix: k must be >= 1");
  if (predictions.size() != labels.size()) {
    throw ContractError("confusion_matrix: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (classes.empty()) {
    for (int i = 0; i < k; ++i) classes.push_back(std::to_string(i));
  }
  if (static_cast<int>(classes.size()) != k) throw ContractError("confusion_matrix: class names do not match k");
  ConfusionMatrix cm{std::move(classes), std::vector<std::vector<std::int64_t>>(
                                             static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0))};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i];
    const int p = predictions[i];
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw ContractError("confusion_matrix: sample " + std::to_string(i) + " has class outside [0, " +
                          std::to_string(k) + ")");
    }
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

double percent(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num < 0) throw ContractError("percent: need num >= 0 and den > 0");
  // 100·num/den in units of 0.01 is 10000·num/den; round that rational half-to-even.
  const std::int64_t scaled = num * 10000;
  std::int64_t q = scaled / den;
  const std::int64_t twice_rem = 2 * (scaled % den);
  if (twice_rem > den || (twice_rem == den && q % 2 == 1)) ++q;
  return static_cast<double>(q) / 100.0;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out(static_cast<std::size_t>(cm.k()));
  for (int c = 0; c < cm.k(); ++c) {
    const auto tp = cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const auto row = cm.row_sum(c);
    const auto col = cm.col_sum(c);
    auto& m = out[static_cast<std::size_t>(c)];
    if (row > 0) m.recall = percent(tp, row);
    if (col > 0) m.ppv = percent(tp, col);
    // 2PR/(P+R) with P = tp/col, R = tp/row reduces to 2tp/(row+col); zero when tp = 0.
    if (row > 0 && col > 0) m.f1 = percent(2 * tp, row + col);
  }
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw ContractError("accuracy: empty confusion matrix");
  return percent(cm.trace(), n);
}

double macro_recall(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < cm.k(); ++c) {
    const auto row = cm.row_sum(c);
    if (row == 0) continue;
    sum += static_cast<double>(cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
           static_cast<double>(row);
    ++defined;
  }
  if (defined == 0) throw ContractError("macro_recall: empty confusion matrix");
  return 100.0 * sum / defined;
}

EvalReport make_report(const ConfusionMatrix& cm) {
  return {cm, per_class_metrics(cm), accuracy(cm), cm.total()};
}

EvalReport evaluate(nn::Model& model, const data::BatchLoader& test) {
  if (test.split() != data::Split::test) throw ContractError("evaluate: loader must iterate the test split");
  if (test.size() == 0) throw ContractError("evaluate: empty test split");
  NoGradGuard no_grad;
  nn::ForwardContext eval;
  std::vector<int> predictions;
  std::vector<int> labels;
  for (std::size_t b = 0; b < test.num_batches(); ++b) {
    const auto batch = test.batch(0, b);
    const auto pred = argmax_rows(model.forward(batch.images, eval));
    predictions.insert(predictions.end(), pred.begin(), pred.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  std::vector<std::string> names;
  const int k = model.n_classes();
  for (int i = 0; i < k; ++i) {
    const auto& table = data::default_class_names();
    names.push_back(i < static_cast<int>(table.size()) ? table[static_cast<std::size_t>(i)] : std::to_string(i));
  }
  return make_report(confusion_matrix(predictions, labels, k, names));
}

EvalReport evaluate(nn::Model& model, const data::DatasetManifest& manifest, int image_size, int batch_size,
                    const data::NormalizationStats& stats) {
  if (manifest.count(data::Split::test) == 0) throw ContractError("evaluate: empty test split");
  data::LoaderConfig cfg;
  cfg.image_size = image_size;
  cfg.batch_size = batch_size;
  cfg.augment = false;
  cfg.stats = stats;
  data::BatchLoader loader(manifest, data::Split::test, cfg);
  auto report = evaluate(model, loader);
  if (static_cast<int>(manifest.class_names.size()) == report.confusion.k()) report.confusion.classes = manifest.class_names;
  return report;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << *v;
  return s.str();
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    per_class.push_back({{"class", r.confusion.classes.at(i)},
                         {"recall", opt(r.per_class[i].recall)},
                         {"ppv", opt(r.per_class[i].ppv)},
                         {"f1", opt(r.per_class[i].f1)}});
  }
  return {{"classes", r.confusion.classes},
          {"confusion", r.confusion.counts},
          {"per_class", per_class},
          {"accuracy", r.accuracy},
          {"n", r.n}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.confusion.classes = j.at("classes").get<std::vector<std::string>>();
    r.confusion.counts = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
    for (const auto& pc : j.at("per_class")) {
      r.per_class.push_back({opt_from(pc.at("recall")), opt_from(pc.at("ppv")), opt_from(pc.at("f1"))});
    }
    r.accuracy = j.at("accuracy").get<double>();
    r.n = j.at("n").get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  const auto& names = r.confusion.classes;
  auto table = [&](const char* title, auto field) {
    out << title << "\n";
    for (const auto& n : names) out << std::setw(12) << n;
    out << "\n";
    for (const auto& m : r.per_class) out << std::setw(12) << cell(m.*field);
    out << "\n\n";
  };
  table("Recall (Sensitivity) %", &ClassMetrics::recall);
  table("Positive Predictive Value (Precision) %", &ClassMetrics::ppv);
  table("F-1 score %", &ClassMetrics::f1);
  out << "Confusion matrix (rows: true, columns: predicted)\n" << std::setw(12) << "";
  for (const auto& n : names) out << std::setw(12) << n;
  out << "\n";
  for (std::size_t t = 0; t < r.confusion.counts.size(); ++t) {
    out << std::setw(12) << names.at(t);
    for (auto v : r.confusion.counts[t]) out << std::setw(12) << v;
    out << "\n";
  }
  out << "\nAccuracy " << cell(r.accuracy) << "% (" << r.confusion.trace() << "/" << r.n << ")\n";
  return out.str();
}

}  // namespace stagewise::metrics
