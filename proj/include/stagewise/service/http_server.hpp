// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <thread>

#include "stagewise/service/run_service.hpp"

namespace httplib {
class Server;
}

namespace stagewise::service {

struct HttpOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  std::string cors_origin = "*";
  /// Optional directory served at "/" (the built cockpit).
  std::string static_dir;
};

/// Routes the JSON API onto a RunService. listen() blocks; start() runs the
/// accept loop on a background thread.
class HttpServer {
 public:
  HttpServer(RunService& service, HttpOptions options);
  ~HttpServer();

  /// Binds and returns the bound port; throws ConfigError when binding fails.
  int bind();
  void listen();
  void start();
  void stop();
  int port() const { return port_; }

 private:
  RunService& service_;
  HttpOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace stagewise::service
