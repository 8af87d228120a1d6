// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "httplib.h"
#include "stagewise/service/http_server.hpp"
#include "stagewise/service/run_service.hpp"
#include "../support/temp_dir.hpp"
#include "../support/tiny_protocol.hpp"

namespace sw = stagewise;
namespace svc = stagewise::service;
namespace st = stagewise::train;
using nlohmann::json;
using sw::testing::TempDir;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("service");
    sw::testing::tiny_dataset(dir_->path());
  }
  static void TearDownTestSuite() { delete dir_; }
  static st::ProtocolConfig tiny() { return sw::testing::tiny_protocol(dir_->path() / "manifest.csv"); }
  static TempDir* dir_;
};
TempDir* ServiceTest::dir_ = nullptr;

/// Polls until `pred` holds on the progress document or the deadline passes.
template <class Pred>
json poll(svc::RunService& s, Pred pred, int timeout_ms = 60000) {
  const auto end = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  json p;
  while (std::chrono::steady_clock::now() < end) {
    p = s.progress().body;
    if (pred(p)) return p;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ADD_FAILURE() << "condition not reached; last progress " << p.dump();
  return p;
}

}  // namespace

TEST_F(ServiceTest, IdleBeforeAnyRun) {
  svc::RunService s({tiny()});
  const auto run = s.get_run();
  EXPECT_EQ(run.status, 200);
  EXPECT_EQ(run.body["state"]["status"], "idle");
  EXPECT_TRUE(run.body["id"].is_null());
  EXPECT_EQ(s.progress().body["status"], "idle");
  EXPECT_EQ(s.progress().body["epochs_completed"], 0);
  EXPECT_EQ(s.lr_curve().status, 404);
  EXPECT_EQ(s.metrics().status, 404);
  const auto lr = s.submit_lr(R"({"stage": 1, "lr": 0.001})");
  EXPECT_EQ(lr.status, 409);
  EXPECT_EQ(lr.body["status"], "idle");
}

TEST_F(ServiceTest, BadRequests) {
  svc::RunService s({tiny()});
  EXPECT_EQ(s.start("{not json").status, 400);
  EXPECT_EQ(s.start(R"({"bogus": 1})").status, 400);
  EXPECT_EQ(s.start(R"({"interactive": "yes"})").status, 400);
  const auto r = s.start(R"({"config": {"stages": []}})");
  EXPECT_EQ(r.status, 400);
  EXPECT_NE(r.body["error"].get<std::string>().find("at least one stage required"), std::string::npos);
  const auto missing = s.start(R"({"config": {"manifest": "/nonexistent/manifest.csv"}})");
  EXPECT_EQ(missing.status, 400);
  EXPECT_EQ(s.submit_lr("[]").status, 400);
  EXPECT_EQ(s.submit_lr(R"({"stage": 1})").status, 400);
  EXPECT_FALSE(s.active());
}

TEST_F(ServiceTest, InteractiveRunThroughTheApi) {
  auto cfg = tiny();
  cfg.stages[1].lr_find = true;
  svc::RunService s({cfg});
  const auto started = s.start(R"({"interactive": true})");
  ASSERT_EQ(started.status, 202) << started.body.dump();
  EXPECT_EQ(started.body["total_epochs"], 6);
  EXPECT_EQ(s.start("{}").status, 409);

  auto p = poll(s, [](const json& j) { return j["status"] == "awaiting_lr"; });
  EXPECT_EQ(p["awaiting_stage"], 1);
  const auto curve = s.lr_curve();
  ASSERT_EQ(curve.status, 200);
  EXPECT_EQ(curve.body["stage"], 1);
  EXPECT_GE(curve.body["curve"]["samples"].size(), 3U);
  EXPECT_EQ(s.submit_lr(R"({"stage": 2, "lr": 0.001})").status, 409);
  EXPECT_EQ(s.submit_lr(R"({"stage": 1, "lr": -1})").status, 400);
  EXPECT_EQ(s.submit_lr(R"({"stage": 1, "lr": 0.001})").status, 200);
  EXPECT_EQ(s.submit_lr(R"({"stage": 1, "lr": 0.001})").status, 409);

  p = poll(s, [](const json& j) { return j["status"] == "awaiting_lr" && j["awaiting_stage"] == 2; });
  EXPECT_EQ(p["epochs_completed"], 2);
  EXPECT_EQ(s.lr_curve().body["stage"], 2);
  EXPECT_EQ(s.submit_lr(R"({"stage": 2, "lr": 0.0005})").status, 200);

  int last = 0;
  p = poll(s, [&](const json& j) {
    const int done = j["epochs_completed"].get<int>();
    EXPECT_GE(done, last);
    last = done;
    if (j["status"] == "training") {
      EXPECT_EQ(s.submit_lr(R"({"stage": 2, "lr": 0.001})").status, 409);
    }
    return j["status"] == "done";
  });
  EXPECT_EQ(p["epochs_completed"], 6);
  EXPECT_EQ(p["history"].size(), 6U);
  EXPECT_EQ(p["stage_rates"][0]["source"], "interactive");
  EXPECT_EQ(p["stage_rates"][0]["chosen"], 0.001);
  EXPECT_EQ(p["stage_rates"][1]["chosen"], 0.0005);
  EXPECT_EQ(p["history"][0]["lrs"][0], 0.001);

  s.wait();
  EXPECT_FALSE(s.active());
  const auto m = s.metrics();
  ASSERT_EQ(m.status, 200);
  EXPECT_EQ(m.body["n"], 11);
  const auto run = s.get_run().body;
  EXPECT_EQ(run["id"], 1);
  EXPECT_EQ(run["state"]["status"], "done");
  EXPECT_FALSE(run["report"].is_null());
  EXPECT_EQ(run["config"]["stages"].size(), 3U);

  // Finished runs free the slot.
  EXPECT_EQ(s.start(R"({"config": {"stages": [{"image_size": 32, "steps": [{"epochs": 1, "freeze": "all_trainable", "lr": {"policy": "fixed", "value": 0.001}}]}]}})").status, 202);
  s.wait();
  EXPECT_EQ(s.get_run().body["id"], 2);
  EXPECT_EQ(s.progress().body["epochs_completed"], 1);
}

TEST_F(ServiceTest, StopUnblocksAwaitingRun) {
  svc::RunService s({tiny()});
  ASSERT_EQ(s.start(R"({"interactive": true})").status, 202);
  poll(s, [](const json& j) { return j["status"] == "awaiting_lr"; });
  s.stop();
  EXPECT_EQ(s.progress().body["status"], "failed");
  EXPECT_FALSE(s.active());
}

TEST_F(ServiceTest, HttpRoutes) {
  svc::RunService s({tiny()});
  svc::HttpServer http(s, {"127.0.0.1", 0, "http://localhost:5173", ""});
  const int port = http.bind();
  ASSERT_GT(port, 0);
  http.start();
  httplib::Client c("127.0.0.1", port);

  auto r = c.Get("/api/run");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["state"]["status"], "idle");
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  EXPECT_EQ(r->get_header_value("Content-Type"), "application/json");

  r = c.Options("/api/run/lr");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 204);
  EXPECT_NE(r->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

  r = c.Post("/api/run/lr", R"({"stage": 1, "lr": 0.001})", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 409);
  r = c.Post("/api/run/lr", "nope", "application/json");
  EXPECT_EQ(r->status, 400);
  r = c.Get("/api/run/metrics");
  EXPECT_EQ(r->status, 404);
  r = c.Get("/api/nothing");
  EXPECT_EQ(r->status, 404);
  EXPECT_EQ(json::parse(r->body)["error"], "not found");

  r = c.Post("/api/run/start", "{}", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 202);
  EXPECT_EQ(c.Post("/api/run/start", "{}", "application/json")->status, 409);
  json p;
  int last = 0;
  for (int i = 0; i < 6000; ++i) {
    p = json::parse(c.Get("/api/run/progress")->body);
    EXPECT_GE(p["epochs_completed"].get<int>(), last);
    last = p["epochs_completed"].get<int>();
    if (p["status"] == "done" || p["status"] == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  EXPECT_EQ(p["status"], "done");
  EXPECT_EQ(p["epochs_completed"], 6);
  r = c.Get("/api/run/lrcurve");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["curve"]["stop_reason"].is_string(), true);
  r = c.Get("/api/run/metrics");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["classes"].size(), 4U);
  http.stop();
}
