// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagewise/metrics/metrics.hpp"
#include "stagewise/train/checkpoint.hpp"
#include "stagewise/train/protocol.hpp"

namespace stagewise::train {

enum class RunStatus { idle, lrfind, training, awaiting_lr, done, failed };
const char* status_name(RunStatus s);

/// One completed epoch. Stage and step are 1-based; epoch counts across the run.
struct EpochRecord {
  int stage = 0;
  int step = 0;
  int epoch = 0;
  int image_size = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  optim::LrAssignment lrs;
};

/// How the rates of one stage were decided.
struct StageRates {
  std::optional<double> suggested;
  /// Base rate mapped into the unpinned step policies.
  std::optional<double> chosen;
  /// "config", "suggested", "interactive" or "timeout".
  std::string source = "config";
  std::vector<LrPolicy> steps;
};

struct RunState {
  RunStatus status = RunStatus::idle;
  /// 0-based position of the stage/step being executed; -1 before the run.
  int stage = -1;
  int step = -1;
  int epochs_completed = 0;
  int total_epochs = 0;
  std::vector<EpochRecord> history;
  std::vector<StageRates> stage_rates;
  std::vector<std::optional<optim::LrCurve>> curves;
  std::optional<metrics::EvalReport> report;
  std::vector<std::string> warnings;
  std::string error;
  bool diverged = false;
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StageRates& r);
/// Snapshot without curves or report; those have their own documents.
nlohmann::json to_json(const RunState& s);

enum class SubmitResult { accepted, not_awaiting, wrong_stage, invalid_lr };

/// Single-slot hand-off of an interactive LR choice to the waiting run.
class LrChannel {
 public:
  void open(int stage);
  void close();
  /// Wakes a waiting run with no value; later opens are refused until reset().
  void cancel();
  void reset();
  SubmitResult submit(int stage, double lr);
  /// Returns the submitted rate, or nothing on timeout or cancellation.
  std::optional<double> wait(std::chrono::milliseconds timeout);
  std::optional<int> awaiting() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<int> stage_;
  std::optional<double> value_;
  bool cancelled_ = false;
};

struct TrainerHooks {
  std::function<void(const RunState&)> on_state;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(int stage, const optim::LrCurve&)> on_lr_curve;
  std::function<void(const std::string&)> on_warning;
  /// Before the first epoch of a step, with the rates in effect.
  std::function<void(int stage, int step, const optim::LrAssignment&, const nn::Model&)> on_step_begin;
  std::function<void(int stage, int step, const nn::Model&)> on_step_end;
};

struct RunOptions {
  bool interactive = false;
  /// JSON lines per epoch. Defaults to checkpoint_dir/events.jsonl when a
  /// checkpoint directory is configured.
  std::filesystem::path event_log;
  /// Continue from this checkpoint instead of starting fresh.
  std::optional<Checkpoint> resume;
};

/// Executes a ProtocolConfig. One run at a time per Trainer; snapshot(),
/// channel() and request_stop() may be called from other threads.
class Trainer {
 public:
  explicit Trainer(ProtocolConfig config, TrainerHooks hooks = {});

  /// Builds the model (fresh, pretrained body, or from options.resume) and runs.
  RunState run(const RunOptions& options = {});
  /// Runs on a caller-provided model whose groups are already assigned.
  RunState run(nn::Model& model, const RunOptions& options = {});

  RunState snapshot() const;
  LrChannel& channel() { return channel_; }
  void request_stop();
  const ProtocolConfig& config() const { return config_; }

  /// Range test on the model at the given stage; weights, statistics and
  /// freeze flags are restored afterwards.
  optim::LrCurve lr_find(nn::Model& model, const data::BatchLoader& train, int stage);

 private:
  struct Context;
  void publish();
  void warn(const std::string& msg);
  StageRates decide_rates(Context& ctx, int stage);
  void run_stage(Context& ctx, int stage);
  double train_epoch(Context& ctx, const data::BatchLoader& train, optim::Adam& adam,
                     const optim::LrAssignment& lrs, int stage, int step);
  void checkpoint(Context& ctx, const optim::Adam* adam, const std::filesystem::path& path);

  ProtocolConfig config_;
  TrainerHooks hooks_;
  LrChannel channel_;
  std::atomic<bool> stop_{false};
  mutable std::mutex mu_;
  RunState state_;
};

/// Convenience wrapper around Trainer::run.
RunState run_protocol(const ProtocolConfig& config, nn::Model& model, bool interactive,
                      TrainerHooks hooks = {});

}  // namespace stagewise::train
