// SPDX-License-Identifier: Apache-2.0
//
// Single-run controller behind the HTTP API. Handlers are plain methods
// returning a status code and JSON body so they can be tested without sockets.
#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"
#include "stagewise/train/trainer.hpp"

namespace stagewise::service {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  /// Used when POST /api/run/start carries no config.
  train::ProtocolConfig default_config = train::desk_protocol();
};

class RunService {
 public:
  explicit RunService(ServiceOptions options = {});
  ~RunService();
  RunService(const RunService&) = delete;
  RunService& operator=(const RunService&) = delete;

  /// GET /api/run: {id, state, config, lr_curve, report}.
  ApiResponse get_run() const;
  /// POST /api/run/start {config?, interactive?}. 409 while a run is active.
  ApiResponse start(const std::string& body);
  /// Starts from an already parsed config (CLI use).
  ApiResponse start(const train::ProtocolConfig& config, bool interactive);
  /// GET /api/run/lrcurve: latest curve {stage, curve}; 404 before the first one.
  ApiResponse lr_curve() const;
  /// POST /api/run/lr {stage, lr}; stage is 1-based. 409 unless awaiting_lr.
  ApiResponse submit_lr(const std::string& body);
  /// GET /api/run/progress: compact snapshot for polling.
  ApiResponse progress() const;
  /// GET /api/run/metrics: latest EvalReport; 404 before the first epoch ends.
  ApiResponse metrics() const;

  /// Blocks until the current run (if any) finishes.
  void wait();
  /// Stops the current run and waits for it.
  void stop();
  bool active() const;
  std::optional<train::RunState> state() const;

 private:
  struct Run;
  ServiceOptions options_;
  mutable std::mutex mu_;
  std::shared_ptr<Run> run_;
  int next_id_ = 1;
};

}  // namespace stagewise::service
