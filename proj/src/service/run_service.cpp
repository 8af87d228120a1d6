// SPDX-License-Identifier: Apache-2.0
#include "stagewise/service/run_service.hpp"

#include <atomic>

#include "stagewise/data/manifest.hpp"
#include "stagewise/errors.hpp"

namespace stagewise::service {

using nlohmann::json;

struct RunService::Run {
  int id = 0;
  train::ProtocolConfig config;
  bool interactive = false;
  std::unique_ptr<train::Trainer> trainer;
  std::thread thread;
  std::mutex join_mu;
  std::atomic<bool> finished{false};
  mutable std::mutex error_mu;
  std::string launch_error;

  train::RunState state() const {
    auto s = trainer->snapshot();
    std::lock_guard lock(error_mu);
    if (!launch_error.empty()) {
      s.status = train::RunStatus::failed;
      s.error = launch_error;
    }
    return s;
  }

  void join() {
    std::lock_guard lock(join_mu);
    if (thread.joinable()) thread.join();
  }
};

namespace {

ApiResponse error(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, extra};
}

std::optional<json> parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

}  // namespace

RunService::RunService(ServiceOptions options) : options_(std::move(options)) {}

RunService::~RunService() { stop(); }

bool RunService::active() const {
  std::lock_guard lock(mu_);
  return run_ && !run_->finished;
}

std::optional<train::RunState> RunService::state() const {
  std::shared_ptr<Run> run;
  {
    std::lock_guard lock(mu_);
    run = run_;
  }
  if (!run) return std::nullopt;
  return run->state();
}

ApiResponse RunService::get_run() const {
  std::shared_ptr<Run> run;
  {
    std::lock_guard lock(mu_);
    run = run_;
  }
  if (!run) {
    return {200, {{"id", nullptr}, {"state", train::to_json(train::RunState{})}, {"config", nullptr},
                  {"lr_curve", nullptr}, {"report", nullptr}}};
  }
  const auto s = run->state();
  json curve = nullptr;
  for (std::size_t i = s.curves.size(); i-- > 0;) {
    if (s.curves[i]) {
      curve = {{"stage", i + 1}, {"curve", optim::to_json(*s.curves[i])}};
      break;
    }
  }
  return {200,
          {{"id", run->id},
           {"interactive", run->interactive},
           {"state", train::to_json(s)},
           {"config", train::to_json(run->config)},
           {"lr_curve", curve},
           {"report", s.report ? metrics::to_json(*s.report) : json(nullptr)}}};
}

ApiResponse RunService::start(const std::string& body) {
  const auto j = parse_body(body);
  if (!j || !j->is_object()) return error(400, "request body must be a JSON object");
  for (auto it = j->begin(); it != j->end(); ++it) {
    if (it.key() != "config" && it.key() != "interactive") return error(400, it.key() + ": unknown field");
  }
  bool interactive = false;
  if (j->contains("interactive")) {
    if (!(*j)["interactive"].is_boolean()) return error(400, "interactive: expected true or false");
    interactive = (*j)["interactive"].get<bool>();
  }
  train::ProtocolConfig config = options_.default_config;
  if (j->contains("config")) {
    try {
      auto merged = train::to_json(options_.default_config);
      merged.merge_patch((*j)["config"]);
      config = train::protocol_from_json(merged);
    } catch (const std::exception& e) {
      return error(400, std::string("invalid config: ") + e.what());
    }
  }
  return start(config, interactive);
}

ApiResponse RunService::start(const train::ProtocolConfig& config, bool interactive) {
  try {
    config.validate();
    data::load_manifest(config.manifest);
  } catch (const std::exception& e) {
    return error(400, std::string("invalid config: ") + e.what());
  }
  std::lock_guard lock(mu_);
  if (run_ && !run_->finished) {
    return error(409, "a run is already active",
                 {{"id", run_->id}, {"status", train::status_name(run_->state().status)}});
  }
  if (run_) run_->join();
  auto run = std::make_shared<Run>();
  run->id = next_id_++;
  run->config = config;
  run->interactive = interactive;
  run->trainer = std::make_unique<train::Trainer>(config);
  run->thread = std::thread([run] {
    train::RunOptions opts;
    opts.interactive = run->interactive;
    try {
      run->trainer->run(opts);
    } catch (const std::exception& e) {
      std::lock_guard lock(run->error_mu);
      run->launch_error = e.what();
    }
    run->finished = true;
  });
  run_ = run;
  return {202, {{"id", run->id}, {"interactive", interactive}, {"total_epochs", config.total_epochs()}}};
}

ApiResponse RunService::lr_curve() const {
  const auto s = state();
  if (s) {
    for (std::size_t i = s->curves.size(); i-- > 0;) {
      if (s->curves[i]) return {200, {{"stage", i + 1}, {"curve", optim::to_json(*s->curves[i])}}};
    }
  }
  return error(404, "no learning-rate curve yet");
}

ApiResponse RunService::submit_lr(const std::string& body) {
  const auto j = parse_body(body);
  if (!j || !j->is_object() || !j->contains("stage") || !j->contains("lr") || !(*j)["stage"].is_number_integer() ||
      !(*j)["lr"].is_number()) {
    return error(400, "expected {\"stage\": <int>, \"lr\": <number>}");
  }
  const int stage = (*j)["stage"].get<int>();
  const double lr = (*j)["lr"].get<double>();
  std::shared_ptr<Run> run;
  {
    std::lock_guard lock(mu_);
    run = run_;
  }
  if (!run) return error(409, "no run in progress", {{"status", "idle"}});
  const auto result = run->trainer->channel().submit(stage - 1, lr);
  const auto s = run->state();
  switch (result) {
    case train::SubmitResult::accepted:
      return {200, {{"accepted", true}, {"stage", stage}, {"lr", lr}}};
    case train::SubmitResult::invalid_lr:
      return error(400, "lr must be finite and > 0");
    case train::SubmitResult::wrong_stage:
      return error(409, "awaiting a learning rate for stage " + std::to_string(s.stage + 1),
                   {{"status", train::status_name(s.status)}});
    case train::SubmitResult::not_awaiting:
      break;
  }
  return error(409, std::string("not awaiting a learning rate (status ") + train::status_name(s.status) + ")",
               {{"status", train::status_name(s.status)}});
}

ApiResponse RunService::progress() const {
  std::shared_ptr<Run> run;
  {
    std::lock_guard lock(mu_);
    run = run_;
  }
  auto body = train::to_json(run ? run->state() : train::RunState{});
  body["id"] = run ? json(run->id) : json(nullptr);
  return {200, body};
}

ApiResponse RunService::metrics() const {
  const auto s = state();
  if (!s || !s->report) return error(404, "no evaluation report yet");
  return {200, metrics::to_json(*s->report)};
}

void RunService::wait() {
  std::shared_ptr<Run> run;
  {
    std::lock_guard lock(mu_);
    run = run_;
  }
  if (run) run->join();
}

void RunService::stop() {
  std::shared_ptr<Run> run;
  {
    std::lock_guard lock(mu_);
    run = run_;
  }
  if (!run) return;
  if (!run->finished) run->trainer->request_stop();
  run->join();
}

}  // namespace stagewise::service
