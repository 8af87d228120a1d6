// SPDX-License-Identifier: Apache-2.0
#include "stagewise/train/trainer.hpp"

#include <cmath>
#include <fstream>

#include "stagewise/data/loader.hpp"
#include "stagewise/data/manifest.hpp"
#include "stagewise/errors.hpp"
#include "stagewise/ops.hpp"
#include "stagewise/rng.hpp"

namespace stagewise::train {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTagModel = 0x4d4f44454c;  // "MODEL"
constexpr std::uint64_t kTagDropout = 0x44524f50;  // "DROP"
constexpr std::uint64_t kTagLrFind = 0x4c5246;     // "LRF"
// Loader epoch indices used by the range test, far from real epochs.
constexpr int kLrFindEpochBase = 1 << 20;

struct Stopped : std::runtime_error {
  Stopped() : std::runtime_error("run stopped") {}
};

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

StageRates stage_rates_from_json(const json& j) {
  StageRates r;
  r.suggested = optional_from(j.at("suggested"));
  r.chosen = optional_from(j.at("chosen"));
  r.source = j.at("source").get<std::string>();
  for (const auto& p : j.at("steps")) r.steps.push_back(lr_policy_from_json(p));
  return r;
}

}  // namespace

const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::idle: return "idle";
    case RunStatus::lrfind: return "lrfind";
    case RunStatus::training: return "training";
    case RunStatus::awaiting_lr: return "awaiting_lr";
    case RunStatus::done: return "done";
    case RunStatus::failed: return "failed";
  }
  return "unknown";
}

json to_json(const EpochRecord& r) {
  return {{"stage", r.stage},
          {"step", r.step},
          {"epoch", r.epoch},
          {"image_size", r.image_size},
          {"train_loss", r.train_loss},
          {"test_accuracy", r.test_accuracy},
          {"lrs", r.lrs}};
}

EpochRecord epoch_record_from_json(const json& j) {
  EpochRecord r;
  r.stage = j.at("stage").get<int>();
  r.step = j.at("step").get<int>();
  r.epoch = j.at("epoch").get<int>();
  r.image_size = j.at("image_size").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.lrs = j.at("lrs").get<optim::LrAssignment>();
  return r;
}

json to_json(const StageRates& r) {
  json steps = json::array();
  for (const auto& p : r.steps) steps.push_back(to_json(p));
  return {{"suggested", optional_json(r.suggested)},
          {"chosen", optional_json(r.chosen)},
          {"source", r.source},
          {"steps", steps}};
}

json to_json(const RunState& s) {
  json history = json::array();
  for (const auto& r : s.history) history.push_back(to_json(r));
  json rates = json::array();
  for (const auto& r : s.stage_rates) rates.push_back(to_json(r));
  json awaiting = nullptr;
  if (s.status == RunStatus::awaiting_lr) awaiting = s.stage + 1;
  return {{"status", status_name(s.status)},
          {"stage", s.stage + 1},
          {"step", s.step + 1},
          {"epochs_completed", s.epochs_completed},
          {"total_epochs", s.total_epochs},
          {"awaiting_stage", awaiting},
          {"history", history},
          {"stage_rates", rates},
          {"warnings", s.warnings},
          {"error", s.error},
          {"diverged", s.diverged}};
}

// ---- LrChannel ----

void LrChannel::open(int stage) {
  std::lock_guard lock(mu_);
  if (cancelled_) return;
  stage_ = stage;
  value_.reset();
}

void LrChannel::close() {
  std::lock_guard lock(mu_);
  stage_.reset();
  value_.reset();
}

void LrChannel::cancel() {
  {
    std::lock_guard lock(mu_);
    cancelled_ = true;
  }
  cv_.notify_all();
}

void LrChannel::reset() {
  std::lock_guard lock(mu_);
  cancelled_ = false;
  stage_.reset();
  value_.reset();
}

SubmitResult LrChannel::submit(int stage, double lr) {
  if (!std::isfinite(lr) || lr <= 0.0) return SubmitResult::invalid_lr;
  {
    std::lock_guard lock(mu_);
    if (!stage_ || value_) return SubmitResult::not_awaiting;
    if (*stage_ != stage) return SubmitResult::wrong_stage;
    value_ = lr;
  }
  cv_.notify_all();
  return SubmitResult::accepted;
}

std::optional<double> LrChannel::wait(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return value_.has_value() || cancelled_; });
  auto v = value_;
  stage_.reset();
  value_.reset();
  return v;
}

std::optional<int> LrChannel::awaiting() const {
  std::lock_guard lock(mu_);
  if (value_) return std::nullopt;
  return stage_;
}

// ---- Trainer ----

struct Trainer::Context {
  nn::Model* model = nullptr;
  data::DatasetManifest manifest;
  std::shared_ptr<data::ImageCache> cache;
  Position pos;
  bool interactive = false;
  std::ofstream events;
  const Checkpoint* resume = nullptr;
};

Trainer::Trainer(ProtocolConfig config, TrainerHooks hooks)
    : config_(std::move(config)), hooks_(std::move(hooks)) {}

RunState Trainer::snapshot() const {
  std::lock_guard lock(mu_);
  return state_;
}

void Trainer::request_stop() {
  stop_ = true;
  channel_.cancel();
}

void Trainer::publish() {
  if (!hooks_.on_state) return;
  hooks_.on_state(snapshot());
}

void Trainer::warn(const std::string& msg) {
  {
    std::lock_guard lock(mu_);
    state_.warnings.push_back(msg);
  }
  if (hooks_.on_warning) hooks_.on_warning(msg);
}

RunState Trainer::run(const RunOptions& options) {
  config_.validate();
  nn::Model model;
  if (options.resume) {
    const auto& ck = *options.resume;
    if (to_json(ck.model) != to_json(config_.model) || ck.n_groups != config_.n_groups) {
      throw ConfigError("resume checkpoint was written for a different model or group count");
    }
    model = restore_model(ck);
  } else {
    model = nn::build_resnet(config_.model, seed_mix({config_.seed, kTagModel}));
    nn::assign_layer_groups(model, config_.n_groups);
    if (!config_.pretrained.empty()) {
      const auto copied = load_body_weights(model, load_checkpoint(config_.pretrained));
      if (copied == 0) warn("pretrained checkpoint shares no body tensors with the model");
    }
  }
  return run(model, options);
}

RunState Trainer::run(nn::Model& model, const RunOptions& options) {
  config_.validate();
  if (model.n_groups() != config_.n_groups) {
    throw ConfigError("model has " + std::to_string(model.n_groups()) + " layer groups, config expects " +
                      std::to_string(config_.n_groups));
  }
  Context ctx;
  ctx.model = &model;
  ctx.manifest = data::load_manifest(config_.manifest);
  ctx.cache = std::make_shared<data::ImageCache>();
  ctx.interactive = options.interactive;
  const auto n_classes = static_cast<int>(ctx.manifest.class_names.size());
  if (n_classes != model.n_classes()) {
    throw ConfigError("class-count mismatch: model has " + std::to_string(model.n_classes()) +
                      " classes, manifest has " + std::to_string(n_classes));
  }
  if (ctx.manifest.count(data::Split::train) < 2) throw ConfigError("train split needs at least 2 images");
  if (ctx.manifest.count(data::Split::test) == 0) throw ConfigError("empty test split");

  {
    std::lock_guard lock(mu_);
    state_ = RunState{};
    state_.status = RunStatus::training;
    state_.total_epochs = config_.total_epochs();
    state_.stage_rates.resize(config_.stages.size());
    state_.curves.resize(config_.stages.size());
  }
  stop_ = false;

  if (options.resume) {
    const auto& ck = *options.resume;
    ctx.resume = &ck;
    ctx.pos = ck.position;
    std::lock_guard lock(mu_);
    try {
      for (const auto& r : ck.run.at("history")) state_.history.push_back(epoch_record_from_json(r));
      const auto& rates = ck.run.at("stage_rates");
      for (std::size_t s = 0; s < rates.size() && s < state_.stage_rates.size(); ++s) {
        state_.stage_rates[s] = stage_rates_from_json(rates[s]);
      }
    } catch (const json::exception& e) {
      throw CheckpointError(std::string("checkpoint run record unreadable: ") + e.what());
    }
    if (static_cast<int>(state_.history.size()) != ck.position.epochs_completed ||
        ck.position.stage > static_cast<int>(config_.stages.size())) {
      throw CheckpointError("checkpoint position does not match its history or the protocol");
    }
    state_.epochs_completed = ck.position.epochs_completed;
  }

  auto log_path = options.event_log;
  if (log_path.empty() && !config_.checkpoint_dir.empty()) log_path = config_.checkpoint_dir / "events.jsonl";
  if (!log_path.empty()) {
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    ctx.events.open(log_path, std::ios::trunc);
    if (!ctx.events) throw ConfigError("cannot write event log " + log_path.string());
    for (const auto& r : snapshot().history) ctx.events << to_json(r).dump() << '\n';
    ctx.events.flush();
  }
  publish();

  try {
    for (int s = ctx.pos.stage; s < static_cast<int>(config_.stages.size()); ++s) run_stage(ctx, s);
    ctx.pos.finished = true;
    if (!config_.checkpoint_dir.empty()) checkpoint(ctx, nullptr, config_.checkpoint_dir / "final.swck");
    std::lock_guard lock(mu_);
    state_.status = RunStatus::done;
  } catch (const DivergenceError& e) {
    std::lock_guard lock(mu_);
    state_.status = RunStatus::failed;
    state_.diverged = true;
    state_.error = e.what();
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    state_.status = RunStatus::failed;
    state_.error = e.what();
  }
  channel_.close();
  publish();
  return snapshot();
}

StageRates Trainer::decide_rates(Context& ctx, int stage) {
  const auto& plan = config_.stages[static_cast<std::size_t>(stage)];
  StageRates rates;
  for (const auto& step : plan.steps) rates.steps.push_back(step.lr);
  if (!plan.lr_find) return rates;

  {
    std::lock_guard lock(mu_);
    state_.status = RunStatus::lrfind;
    state_.stage = stage;
    state_.step = 0;
  }
  publish();
  data::LoaderConfig lc{plan.image_size, config_.batch_size, config_.seed, true, config_.augment, config_.stats};
  data::BatchLoader train(ctx.manifest, data::Split::train, lc, ctx.cache);
  const auto curve = lr_find(*ctx.model, train, stage);
  {
    std::lock_guard lock(mu_);
    state_.curves[static_cast<std::size_t>(stage)] = curve;
  }
  if (hooks_.on_lr_curve) hooks_.on_lr_curve(stage, curve);
  rates.suggested = curve.suggested_lr;
  double base = curve.suggested_lr;
  rates.source = "suggested";

  if (ctx.interactive) {
    channel_.open(stage);
    {
      std::lock_guard lock(mu_);
      state_.status = RunStatus::awaiting_lr;
    }
    publish();
    const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(config_.lr_timeout_s * 1000.0));
    const auto choice = channel_.wait(timeout);
    if (stop_) throw Stopped();
    if (choice) {
      base = *choice;
      rates.source = "interactive";
    } else {
      rates.source = "timeout";
      char buf[160];
      std::snprintf(buf, sizeof buf, "stage %d: no learning rate chosen within %gs, using suggested %.6g",
                    stage + 1, config_.lr_timeout_s, base);
      warn(buf);
    }
  }
  rates.chosen = base;
  for (auto& p : rates.steps) p = p.with_base(base);
  return rates;
}

optim::LrCurve Trainer::lr_find(nn::Model& model, const data::BatchLoader& train, int stage) {
  std::vector<Tensor> saved;
  for (const auto& e : model.state()) saved.push_back(e.tensor.clone());
  std::vector<bool> frozen;
  for (std::size_t i = 0; i < model.layer_count(); ++i) frozen.push_back(model.layer(i).frozen());
  auto restore = [&] {
    auto state = model.state();
    for (std::size_t i = 0; i < state.size(); ++i) {
      auto src = saved[i].data();
      auto dst = state[i].tensor.data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
    for (std::size_t i = 0; i < model.layer_count(); ++i) model.layer(i).set_frozen(frozen[i]);
    model.zero_grad();
  };

  nn::set_frozen(model, config_.stages[static_cast<std::size_t>(stage)].steps.front().freeze);
  optim::Adam adam;
  std::mt19937_64 rng(seed_mix({config_.seed, kTagLrFind, static_cast<std::uint64_t>(stage)}));
  int epoch = kLrFindEpochBase + stage * 4096;
  std::size_t index = 0;
  auto next_batch = [&] {
    for (;;) {
      if (index == train.num_batches()) {
        ++epoch;
        index = 0;
      }
      auto b = train.batch(epoch, index++);
      if (b.labels.size() >= 2) return b;
    }
  };
  auto step = [&](double lr) {
    if (stop_) throw Stopped();
    const auto batch = next_batch();
    nn::ForwardContext fctx{true, &rng, false};
    model.zero_grad();
    auto loss = cross_entropy(model.forward(batch.images, fctx), batch.labels);
    const double v = loss.data()[0];
    if (!std::isfinite(v)) return v;
    loss.backward();
    optim::adam_step(model, adam, optim::LrAssignment(static_cast<std::size_t>(model.n_groups()), lr));
    return v;
  };
  try {
    auto curve = optim::lr_range_test(step, config_.lr_finder);
    restore();
    return curve;
  } catch (...) {
    restore();
    throw;
  }
}

void Trainer::run_stage(Context& ctx, int stage) {
  const auto& plan = config_.stages[static_cast<std::size_t>(stage)];
  nn::Model& model = *ctx.model;
  data::LoaderConfig train_cfg{plan.image_size, config_.batch_size, config_.seed, true, config_.augment,
                               config_.stats};
  data::LoaderConfig test_cfg{plan.image_size, config_.eval_batch_size, config_.seed, false, config_.augment,
                              config_.stats};
  data::BatchLoader train(ctx.manifest, data::Split::train, train_cfg, ctx.cache);
  data::BatchLoader test(ctx.manifest, data::Split::test, test_cfg, ctx.cache);

  StageRates rates;
  if (ctx.pos.step == 0 && ctx.pos.epoch_in_step == 0) {
    rates = decide_rates(ctx, stage);
    std::lock_guard lock(mu_);
    state_.stage_rates[static_cast<std::size_t>(stage)] = rates;
  } else {
    rates = snapshot().stage_rates[static_cast<std::size_t>(stage)];
    if (rates.steps.size() != plan.steps.size()) {
      throw CheckpointError("checkpoint lacks the learning rates of stage " + std::to_string(stage + 1));
    }
  }

  for (int i = ctx.pos.step; i < static_cast<int>(plan.steps.size()); ++i) {
    const auto& step = plan.steps[static_cast<std::size_t>(i)];
    const auto lrs = rates.steps[static_cast<std::size_t>(i)].resolve(config_.n_groups);
    nn::set_frozen(model, step.freeze);
    optim::Adam adam;
    if (ctx.resume && ctx.pos.epoch_in_step > 0) restore_optimizer(*ctx.resume, adam);
    ctx.resume = nullptr;
    {
      std::lock_guard lock(mu_);
      state_.status = RunStatus::training;
      state_.stage = stage;
      state_.step = i;
    }
    publish();
    if (hooks_.on_step_begin) hooks_.on_step_begin(stage, i, lrs, model);

    for (int e = ctx.pos.epoch_in_step; e < step.epochs; ++e) {
      const double loss = train_epoch(ctx, train, adam, lrs, stage, i);
      const auto report = metrics::evaluate(model, test);
      EpochRecord rec{stage + 1, i + 1, ctx.pos.epochs_completed + 1, plan.image_size, loss, report.accuracy, lrs};

      ctx.pos.epochs_completed += 1;
      ctx.pos.epoch_in_step = e + 1;
      if (ctx.pos.epoch_in_step == step.epochs) {
        ctx.pos.step += 1;
        ctx.pos.epoch_in_step = 0;
        if (ctx.pos.step == static_cast<int>(plan.steps.size())) {
          ctx.pos.stage += 1;
          ctx.pos.step = 0;
        }
      }
      {
        std::lock_guard lock(mu_);
        state_.history.push_back(rec);
        state_.epochs_completed = ctx.pos.epochs_completed;
        state_.report = report;
      }
      if (ctx.events.is_open()) {
        ctx.events << to_json(rec).dump() << '\n';
        ctx.events.flush();
      }
      if (hooks_.on_epoch) hooks_.on_epoch(rec);
      if (!config_.checkpoint_dir.empty()) checkpoint(ctx, &adam, config_.checkpoint_dir / "latest.swck");
      publish();
    }
    if (hooks_.on_step_end) hooks_.on_step_end(stage, i, model);
  }
  if (!config_.checkpoint_dir.empty()) {
    checkpoint(ctx, nullptr, config_.checkpoint_dir / ("stage" + std::to_string(stage + 1) + ".swck"));
  }
}

double Trainer::train_epoch(Context& ctx, const data::BatchLoader& train, optim::Adam& adam,
                            const optim::LrAssignment& lrs, int stage, int step) {
  nn::Model& model = *ctx.model;
  const int epoch = ctx.pos.epochs_completed;
  std::mt19937_64 rng(seed_mix({config_.seed, kTagDropout, static_cast<std::uint64_t>(epoch)}));
  nn::ForwardContext fctx{true, &rng, false};
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < train.num_batches(); ++b) {
    if (stop_) throw Stopped();
    const auto batch = train.batch(epoch, b);
    // Batch norm needs two samples per batch in training mode.
    if (batch.labels.size() < 2) continue;
    model.zero_grad();
    auto loss = cross_entropy(model.forward(batch.images, fctx), batch.labels);
    const double v = loss.data()[0];
    if (!std::isfinite(v)) {
      throw DivergenceError("non-finite training loss at stage " + std::to_string(stage + 1) + ", step " +
                            std::to_string(step + 1) + ", epoch " + std::to_string(epoch + 1) + " (batch " +
                            std::to_string(b + 1) + ")");
    }
    loss.backward();
    optim::adam_step(model, adam, lrs);
    total += v * static_cast<double>(batch.labels.size());
    count += batch.labels.size();
  }
  return total / static_cast<double>(count);
}

void Trainer::checkpoint(Context& ctx, const optim::Adam* adam, const std::filesystem::path& path) {
  auto ck = make_checkpoint(*ctx.model, adam, ctx.pos);
  ck.class_names = ctx.manifest.class_names;
  ck.seed = config_.seed;
  const auto snap = snapshot();
  json history = json::array();
  for (const auto& r : snap.history) history.push_back(to_json(r));
  json rates = json::array();
  for (const auto& r : snap.stage_rates) rates.push_back(to_json(r));
  ck.run = {{"history", history}, {"stage_rates", rates}};
  save_checkpoint(ck, path);
}

RunState run_protocol(const ProtocolConfig& config, nn::Model& model, bool interactive, TrainerHooks hooks) {
  Trainer trainer(config, std::move(hooks));
  RunOptions opts;
  opts.interactive = interactive;
  return trainer.run(model, opts);
}

}  // namespace stagewise::train
