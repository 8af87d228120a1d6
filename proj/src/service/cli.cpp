// SPDX-License-Identifier: Apache-2.0
#include "stagewise/service/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "stagewise/data/synthetic.hpp"
#include "stagewise/errors.hpp"
#include "stagewise/rng.hpp"
#include "stagewise/service/http_server.hpp"
#include "stagewise/service/run_service.hpp"

namespace stagewise::service {

using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string manifest;
  std::string out_dir;
};

/// Config file (or the desk preset) plus command-line overrides.
train::ProtocolConfig load_config(const Globals& g) {
  auto cfg = g.config.empty() ? train::desk_protocol() : train::load_protocol(g.config);
  if (g.seed_set) cfg.seed = g.seed;
  if (!g.manifest.empty()) cfg.manifest = g.manifest;
  if (!g.out_dir.empty()) cfg.checkpoint_dir = g.out_dir;
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::array<int, 4> parse_counts(const std::string& s, const char* flag) {
  std::array<int, 4> out{};
  std::stringstream ss(s);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 4) throw ConfigError(std::string(flag) + ": expected 4 comma-separated counts");
    try {
      out[i++] = std::stoi(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": not an integer: " + item);
    }
    if (out[i - 1] < 0) throw ConfigError(std::string(flag) + ": counts must be >= 0");
  }
  if (i != 4) throw ConfigError(std::string(flag) + ": expected 4 comma-separated counts");
  return out;
}

std::string epoch_line(const train::EpochRecord& r, int total) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %2d/%d  stage %d step %d  size %d  loss %.4f  test acc %.2f%%  lr %.3g..%.3g",
                r.epoch, total, r.stage, r.step, r.image_size, r.train_loss, r.test_accuracy, r.lrs.front(),
                r.lrs.back());
  return buf;
}

int exit_code_for(const train::RunState& s) {
  if (s.status == train::RunStatus::done) return kExitOk;
  return s.diverged ? kExitDiverged : kExitFailed;
}

// ---- synth ----

struct SynthArgs {
  std::string out;
  int image_size = 64;
  std::string train = "200,200,200,20";
  std::string test = "60,60,60,20";
};

int cmd_synth(const Globals& g, const SynthArgs& a, std::ostream& out) {
  data::SyntheticSpec spec;
  spec.train = parse_counts(a.train, "--train");
  spec.test = parse_counts(a.test, "--test");
  spec.image_size = a.image_size;
  spec.seed = g.seed;
  if (a.image_size < 8) throw ConfigError("--image-size must be >= 8");
  const auto m = data::gen_synthetic(a.out, spec);
  out << "wrote " << m.records.size() << " images (" << m.count(data::Split::train) << " train, "
      << m.count(data::Split::test) << " test) to " << a.out << "\nmanifest: "
      << (std::filesystem::path(a.out) / "manifest.csv").string() << "\n";
  return kExitOk;
}

// ---- lr-find ----

struct LrFindArgs {
  std::string selftest;
  double lambda = 1.0;
  std::string checkpoint;
  bool fresh = false;
  int stage = 1;
  std::string plot;
  std::string out;
};

int cmd_lr_find(const Globals& g, const LrFindArgs& a, std::ostream& out, std::ostream& err) {
  optim::LrCurve curve;
  if (!a.selftest.empty()) {
    if (a.selftest != "quadratic") throw ConfigError("--selftest: only \"quadratic\" is available");
    optim::QuadraticProblem p;
    p.lambda = a.lambda;
    p.seed = g.seed;
    const auto finder = g.config.empty() ? optim::LrFinderConfig{} : load_config(g).lr_finder;
    curve = optim::quadratic_range_test(p, finder);
  } else {
    auto cfg = load_config(g);
    if (a.stage < 1 || a.stage > static_cast<int>(cfg.stages.size())) {
      throw ConfigError("--stage must be between 1 and " + std::to_string(cfg.stages.size()));
    }
    nn::Model model;
    if (!a.checkpoint.empty()) {
      model = train::restore_model(train::load_checkpoint(a.checkpoint));
      if (model.n_groups() != cfg.n_groups) nn::assign_layer_groups(model, cfg.n_groups);
    } else if (a.fresh) {
      model = nn::build_resnet(cfg.model, cfg.seed);
      nn::assign_layer_groups(model, cfg.n_groups);
    } else {
      throw ConfigError("lr-find needs --checkpoint, --fresh or --selftest");
    }
    const auto manifest = data::load_manifest(cfg.manifest);
    if (static_cast<int>(manifest.class_names.size()) != model.n_classes()) {
      throw ConfigError("class-count mismatch: model has " + std::to_string(model.n_classes()) +
                        " classes, manifest has " + std::to_string(manifest.class_names.size()));
    }
    const auto& plan = cfg.stages[static_cast<std::size_t>(a.stage - 1)];
    data::LoaderConfig lc{plan.image_size, cfg.batch_size, cfg.seed, true, cfg.augment, cfg.stats};
    data::BatchLoader loader(manifest, data::Split::train, lc);
    train::Trainer trainer(cfg);
    curve = trainer.lr_find(model, loader, a.stage - 1);
  }
  const auto text = optim::to_json(curve).dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
  }
  if (!a.plot.empty()) write_text(a.plot, optim::lr_curve_svg(curve));
  char buf[96];
  std::snprintf(buf, sizeof buf, "suggested lr %.6g (%s after %zu samples)\n", curve.suggested_lr,
                optim::stop_reason_name(curve.stop_reason), curve.samples.size());
  err << buf;
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  bool interactive = false;
  bool automatic = false;
  double lr_timeout = -1.0;
  std::string resume;
  int port = -1;
  std::string host = "127.0.0.1";
};

void write_run_outputs(const train::ProtocolConfig& cfg, const train::RunState& s, std::ostream& out) {
  for (std::size_t i = 0; i < s.curves.size(); ++i) {
    if (s.curves[i]) {
      write_text(cfg.checkpoint_dir / ("lrcurve-stage" + std::to_string(i + 1) + ".json"),
                 optim::to_json(*s.curves[i]).dump(2) + "\n");
    }
  }
  if (s.report) {
    write_text(cfg.checkpoint_dir / "report.json", metrics::to_json(*s.report).dump(2) + "\n");
    out << "\n" << metrics::format_report(*s.report);
  }
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = load_config(g);
  if (a.lr_timeout >= 0.0) cfg.lr_timeout_s = a.lr_timeout;
  if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = "run";
  const int total = cfg.total_epochs();

  train::RunState state;
  if (a.port >= 0) {
    if (!a.resume.empty()) throw ConfigError("--resume cannot be combined with --port");
    RunService svc({cfg});
    HttpServer http(svc, {a.host, a.port, "*", ""});
    const int port = http.bind();
    http.start();
    out << "serving run API on http://" << a.host << ":" << port << "\n" << std::flush;
    const auto started = svc.start(cfg, a.interactive);
    if (started.status != 202) throw ConfigError(started.body.value("error", "cannot start run"));
    std::size_t printed = 0, warned = 0;
    auto drain = [&] {
      const auto s = *svc.state();
      for (; printed < s.history.size(); ++printed) out << epoch_line(s.history[printed], total) << "\n" << std::flush;
      for (; warned < s.warnings.size(); ++warned) err << "warning: " << s.warnings[warned] << "\n";
      return s;
    };
    while (svc.active()) {
      drain();
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
    svc.wait();
    state = drain();
    http.stop();
  } else {
    train::TrainerHooks hooks;
    hooks.on_epoch = [&](const train::EpochRecord& r) { out << epoch_line(r, total) << "\n" << std::flush; };
    hooks.on_warning = [&](const std::string& w) { err << "warning: " << w << "\n"; };
    hooks.on_lr_curve = [&](int stage, const optim::LrCurve& c) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "stage %d: lr range test suggests %.6g\n", stage + 1, c.suggested_lr);
      out << buf << std::flush;
    };
    if (a.interactive) {
      hooks.on_state = [&](const train::RunState& s) {
        if (s.status == train::RunStatus::awaiting_lr) {
          err << "stage " << s.stage + 1 << ": awaiting a learning rate (no API attached; falling back after "
              << cfg.lr_timeout_s << "s)\n";
        }
      };
    }
    train::Trainer trainer(cfg, hooks);
    train::RunOptions opts;
    opts.interactive = a.interactive;
    if (!a.resume.empty()) opts.resume = train::load_checkpoint(a.resume);
    state = trainer.run(opts);
  }
  write_run_outputs(cfg, state, out);
  if (state.status != train::RunStatus::done) err << "run failed: " << state.error << "\n";
  return exit_code_for(state);
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint;
  int image_size = 0;
  int batch_size = 64;
  std::string out;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const auto ck = train::load_checkpoint(a.checkpoint);
  auto model = train::restore_model(ck);
  data::NormalizationStats stats;
  std::string manifest_path = g.manifest;
  int size = a.image_size;
  if (!g.config.empty()) {
    const auto cfg = load_config(g);
    stats = cfg.stats;
    if (manifest_path.empty()) manifest_path = cfg.manifest.string();
    if (size == 0) size = cfg.stages.back().image_size;
  }
  if (manifest_path.empty()) throw ConfigError("eval needs --manifest or a config with one");
  if (size == 0 && ck.run.contains("history") && !ck.run["history"].empty()) {
    size = ck.run["history"].back().value("image_size", 0);
  }
  if (size == 0) size = 224;
  const auto manifest = data::load_manifest(manifest_path);
  if (static_cast<int>(manifest.class_names.size()) != model.n_classes()) {
    throw ConfigError("class-count mismatch: checkpoint head has " + std::to_string(model.n_classes()) +
                      " classes, manifest has " + std::to_string(manifest.class_names.size()));
  }
  if (manifest.count(data::Split::test) == 0) throw ConfigError("empty test split");
  const auto report = metrics::evaluate(model, manifest, size, a.batch_size, stats);
  out << metrics::format_report(report);
  const auto text = metrics::to_json(report).dump(2) + "\n";
  if (a.out.empty()) {
    out << "\n" << text;
  } else {
    write_text(a.out, text);
  }
  return kExitOk;
}

// ---- serve ----

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::string cors_origin = "*";
};

int cmd_serve(const Globals& g, const ServeArgs& a, std::ostream& out) {
  ServiceOptions so;
  so.default_config = train::desk_protocol();
  if (!g.config.empty() || !g.manifest.empty() || !g.out_dir.empty() || g.seed_set) {
    so.default_config = load_config(g);
  }
  RunService svc(so);
  HttpServer http(svc, {a.host, a.port, a.cors_origin, a.static_dir});
  const int port = http.bind();
  out << "listening on http://" << a.host << ":" << port << "\n" << std::flush;
  http.listen();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive-resizing fine-tuning of residual networks", "stagewise"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Protocol config (JSON); defaults to the desk preset");
  auto* seed_opt = app.add_option("--seed", g.seed, "Run seed (overrides the config)");
  app.add_option("--manifest", g.manifest, "Dataset manifest CSV (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "Checkpoint and log directory (overrides the config)");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate the synthetic four-class dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--image-size", synth.image_size, "Image side in pixels");
  c_synth->add_option("--train", synth.train, "Per-class train counts, e.g. 200,200,200,20");
  c_synth->add_option("--test", synth.test, "Per-class test counts");

  LrFindArgs lrf;
  auto* c_lrf = app.add_subcommand("lr-find", "Run the learning-rate range test");
  c_lrf->add_option("--selftest", lrf.selftest, "Built-in problem instead of a model (quadratic)");
  c_lrf->add_option("--lambda", lrf.lambda, "Curvature of the quadratic self-test");
  auto* ck_opt = c_lrf->add_option("--checkpoint", lrf.checkpoint, "Model checkpoint to probe");
  c_lrf->add_flag("--fresh", lrf.fresh, "Probe a freshly initialised model")->excludes(ck_opt);
  c_lrf->add_option("--stage", lrf.stage, "Stage (1-based) whose image size and freeze mode to use");
  c_lrf->add_option("--plot", lrf.plot, "Write an SVG plot of the curve");
  c_lrf->add_option("--out", lrf.out, "Write the curve JSON here instead of stdout");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Run the staged training protocol");
  auto* inter = c_train->add_flag("--interactive", tr.interactive, "Wait for a learning-rate choice per stage");
  c_train->add_flag("--auto", tr.automatic, "Use the range-test suggestion (default)")->excludes(inter);
  c_train->add_option("--lr-timeout", tr.lr_timeout, "Seconds to wait for an interactive choice");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint");
  c_train->add_option("--port", tr.port, "Serve the run API on this port while training (0 = any)");
  c_train->add_option("--host", tr.host, "Address for --port");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate")->required();
  c_eval->add_option("--image-size", ev.image_size, "Input size (default: the checkpoint's last stage)");
  c_eval->add_option("--batch-size", ev.batch_size, "Evaluation batch size");
  c_eval->add_option("--out", ev.out, "Write the report JSON here instead of stdout");

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Serve the run API for the cockpit");
  c_serve->add_option("--host", sv.host, "Bind address");
  c_serve->add_option("--port", sv.port, "Port (0 = any free port)");
  c_serve->add_option("--static", sv.static_dir, "Directory of cockpit assets served at /");
  c_serve->add_option("--cors-origin", sv.cors_origin, "Allowed CORS origin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (c_synth->parsed()) return cmd_synth(g, synth, out);
    if (c_lrf->parsed()) return cmd_lr_find(g, lrf, out, err);
    if (c_train->parsed()) return cmd_train(g, tr, out, err);
    if (c_eval->parsed()) return cmd_eval(g, ev, out);
    if (c_serve->parsed()) return cmd_serve(g, sv, out);
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitConfig;
}

}  // namespace stagewise::service
