// SPDX-License-Identifier: Apache-2.0
#include "stagewise/service/http_server.hpp"

#include "httplib.h"
#include "stagewise/errors.hpp"

namespace stagewise::service {

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(RunService& service, HttpOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", options_.cors_origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type"}});
  s.Get("/api/run", [this](const httplib::Request&, httplib::Response& res) { reply(res, service_.get_run()); });
  s.Post("/api/run/start",
         [this](const httplib::Request& req, httplib::Response& res) { reply(res, service_.start(req.body)); });
  s.Get("/api/run/lrcurve",
        [this](const httplib::Request&, httplib::Response& res) { reply(res, service_.lr_curve()); });
  s.Post("/api/run/lr",
         [this](const httplib::Request& req, httplib::Response& res) { reply(res, service_.submit_lr(req.body)); });
  s.Get("/api/run/progress",
        [this](const httplib::Request&, httplib::Response& res) { reply(res, service_.progress()); });
  s.Get("/api/run/metrics",
        [this](const httplib::Request&, httplib::Response& res) { reply(res, service_.metrics()); });
  s.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) res.set_content(nlohmann::json{{"error", "not found"}}.dump(), "application/json");
  });
  if (!options_.static_dir.empty() && !s.set_mount_point("/", options_.static_dir)) {
    throw ConfigError("static directory not found: " + options_.static_dir);
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  if (port_ != 0) return port_;
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else if (server_->bind_to_port(options_.host, options_.port)) {
    port_ = options_.port;
  }
  if (port_ <= 0) {
    port_ = 0;
    throw ConfigError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  return port_;
}

void HttpServer::listen() {
  bind();
  server_->listen_after_bind();
}

void HttpServer::start() {
  bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::stop() {
  if (server_->is_running()) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace stagewise::service
