// SPDX-License-Identifier: Apache-2.0
#include "stagewise/train/protocol.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "stagewise/errors.hpp"

namespace stagewise::train {

using nlohmann::json;

LrPolicy LrPolicy::fixed(double lr, bool pinned) {
  LrPolicy p;
  p.kind = LrKind::fixed;
  p.lr = lr;
  p.pinned = pinned;
  return p;
}

LrPolicy LrPolicy::discriminative(double first, double last, optim::LrSpacing spacing, bool pinned) {
  LrPolicy p;
  p.kind = LrKind::discriminative;
  p.lr_first = first;
  p.lr_last = last;
  p.spacing = spacing;
  p.pinned = pinned;
  return p;
}

optim::LrAssignment LrPolicy::resolve(int n_groups) const {
  if (kind == LrKind::fixed) return optim::LrAssignment(static_cast<std::size_t>(n_groups), lr);
  return optim::discriminative_lrs(lr_first, lr_last, n_groups, spacing);
}

LrPolicy LrPolicy::with_base(double s) const {
  if (pinned) return *this;
  LrPolicy p = *this;
  if (kind == LrKind::fixed) {
    p.lr = s;
  } else {
    p.lr_first = s / 100.0;
    p.lr_last = s;
  }
  return p;
}

int StagePlan::epochs() const {
  int n = 0;
  for (const auto& s : steps) n += s.epochs;
  return n;
}

int ProtocolConfig::total_epochs() const {
  int n = 0;
  for (const auto& s : stages) n += s.epochs();
  return n;
}

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw ConfigError(field + ": " + msg);
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

void validate_policy(const LrPolicy& p, const std::string& field) {
  if (p.kind == LrKind::fixed) {
    if (!positive_finite(p.lr)) fail(field + ".value", "learning rate must be finite and > 0");
    return;
  }
  if (!positive_finite(p.lr_first)) fail(field + ".first", "learning rate must be finite and > 0");
  if (!positive_finite(p.lr_last)) fail(field + ".last", "learning rate must be finite and > 0");
  if (p.lr_first > p.lr_last) fail(field, "first must not exceed last");
}

}  // namespace

void ProtocolConfig::validate() const {
  if (stages.empty()) throw ConfigError("stages: at least one stage required");
  if (batch_size < 2) fail("batch_size", "must be >= 2");
  if (eval_batch_size < 1) fail("eval_batch_size", "must be >= 1");
  if (n_groups < 2) fail("n_groups", "must be >= 2");
  if (!(lr_timeout_s >= 0.0)) fail("lr_timeout_s", "must be >= 0");
  try {
    model.validate();
  } catch (const ConfigError& e) {
    fail("model", e.what());
  }
  try {
    stats.validate();
    augment.validate();
    lr_finder.validate();
  } catch (const ConfigError& e) {
    fail("config", e.what());
  }
  int prev_size = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string at = "stages[" + std::to_string(s) + "]";
    if (st.image_size < nn::Model::kMinInputSize) {
      fail(at + ".image_size", "must be >= " + std::to_string(nn::Model::kMinInputSize));
    }
    if (st.image_size < prev_size) fail(at + ".image_size", "image sizes must be nondecreasing");
    prev_size = st.image_size;
    if (st.steps.empty()) fail(at + ".steps", "at least one step required");
    bool seen_trainable = false;
    for (std::size_t i = 0; i < st.steps.size(); ++i) {
      const auto& step = st.steps[i];
      const std::string sat = at + ".steps[" + std::to_string(i) + "]";
      if (step.epochs < 1) fail(sat + ".epochs", "must be >= 1");
      if (step.freeze == nn::FreezeMode::all_trainable) {
        seen_trainable = true;
      } else if (seen_trainable) {
        fail(sat + ".freeze", "head_only steps must precede all_trainable steps");
      }
      validate_policy(step.lr, sat + ".lr");
    }
  }
}

ProtocolConfig default_protocol() {
  using optim::LrSpacing;
  ProtocolConfig c;
  c.model = nn::ResNetConfig::resnet50(4);
  c.stages = {
      {128,
       {{3, nn::FreezeMode::head_only, LrPolicy::fixed(1e-3)},
        {5, nn::FreezeMode::all_trainable, LrPolicy::discriminative(1e-6, 1e-4)}},
       true},
      {224,
       {{3, nn::FreezeMode::head_only, LrPolicy::fixed(1e-4)},
        {5, nn::FreezeMode::all_trainable, LrPolicy::discriminative(1e-7, 1e-5)}},
       true},
      {229,
       {{25, nn::FreezeMode::all_trainable,
         LrPolicy::discriminative(1e-6, 1e-4, LrSpacing::linear, true)}},
       false},
  };
  return c;
}

ProtocolConfig desk_protocol() {
  using optim::LrSpacing;
  ProtocolConfig c = default_protocol();
  c.model = nn::ResNetConfig::mini(4);
  c.stages[0].image_size = 32;
  c.stages[1].image_size = 48;
  c.stages[2].image_size = 64;
  // Randomly initialised body: rates one decade above the full-scale ones.
  c.stages[2].steps[0].lr = LrPolicy::discriminative(1e-5, 1e-3, LrSpacing::linear, true);
  // Right after the resize the first Stage II batches are too noisy for a
  // useful range test; keep the configured rates there.
  c.stages[1].lr_find = false;
  return c;
}

const char* freeze_name(nn::FreezeMode m) {
  return m == nn::FreezeMode::head_only ? "head_only" : "all_trainable";
}

const char* lr_kind_name(LrKind k) { return k == LrKind::fixed ? "fixed" : "discriminative"; }

// ---- JSON ----

namespace {

/// The shortest decimal that reads back as the same float, so 0.1F prints as 0.1.
double shortest(float f) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, f);
  double d = 0.0;
  std::from_chars(buf, r.ptr, d);
  return d;
}

json shortest(const std::array<float, 3>& v) { return {shortest(v[0]), shortest(v[1]), shortest(v[2])}; }

const char* spacing_name(optim::LrSpacing s) {
  return s == optim::LrSpacing::linear ? "linear" : "geometric";
}

/// Reads one JSON object, remembering which keys were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, float& out) {
    double d = out;
    get(key, d);
    out = static_cast<float>(d);
  }
  void get(const std::string& key, int& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer()) fail(at(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        fail(at(key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  void get(const std::string& key, std::array<float, 3>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array() || v->size() != 3) fail(at(key), "expected an array of 3 numbers");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(*v)[i].is_number()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a number");
        out[i] = (*v)[i].get<float>();
      }
    }
  }

  /// Enumerated string value.
  template <class E, std::size_t N>
  void get_enum(const std::string& key, E& out, const std::array<std::pair<const char*, E>, N>& names) {
    std::string s;
    if (!raw(key)) return;
    get(key, s);
    for (const auto& [name, value] : names) {
      if (s == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += std::string(allowed.empty() ? "" : ", ") + name;
    fail(at(key), "unknown value \"" + s + "\" (expected " + allowed + ")");
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) fail(at(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

constexpr std::array<std::pair<const char*, nn::FreezeMode>, 2> kFreezeNames{
    {{"head_only", nn::FreezeMode::head_only}, {"all_trainable", nn::FreezeMode::all_trainable}}};
constexpr std::array<std::pair<const char*, LrKind>, 2> kKindNames{
    {{"fixed", LrKind::fixed}, {"discriminative", LrKind::discriminative}}};
constexpr std::array<std::pair<const char*, optim::LrSpacing>, 2> kSpacingNames{
    {{"linear", optim::LrSpacing::linear}, {"geometric", optim::LrSpacing::geometric}}};
constexpr std::array<std::pair<const char*, data::FlipAxis>, 2> kAxisNames{
    {{"vertical", data::FlipAxis::vertical}, {"horizontal", data::FlipAxis::horizontal}}};

LrPolicy policy_from_json(const json& j, const std::string& path) {
  Fields f(j, path);
  LrPolicy p;
  if (!f.has("policy")) fail(f.at("policy"), "required (fixed or discriminative)");
  f.get_enum("policy", p.kind, kKindNames);
  if (p.kind == LrKind::fixed) {
    if (!f.has("value")) fail(f.at("value"), "required for a fixed policy");
    f.get("value", p.lr);
  } else {
    if (!f.has("first") || !f.has("last")) fail(path, "discriminative policy needs first and last");
    f.get("first", p.lr_first);
    f.get("last", p.lr_last);
    f.get_enum("spacing", p.spacing, kSpacingNames);
  }
  f.get("pinned", p.pinned);
  f.finish();
  return p;
}

StagePlan stage_from_json(const json& j, const std::string& path) {
  Fields f(j, path);
  StagePlan st;
  f.get("image_size", st.image_size);
  f.get("lr_find", st.lr_find);
  const json* steps = f.raw("steps");
  if (!steps || !steps->is_array()) fail(f.at("steps"), "expected an array of steps");
  for (std::size_t i = 0; i < steps->size(); ++i) {
    const std::string at = f.at("steps") + "[" + std::to_string(i) + "]";
    Fields sf((*steps)[i], at);
    StepPlan step;
    if (!sf.has("epochs")) fail(sf.at("epochs"), "required");
    sf.get("epochs", step.epochs);
    sf.get_enum("freeze", step.freeze, kFreezeNames);
    const json* lr = sf.raw("lr");
    if (!lr) fail(sf.at("lr"), "required");
    step.lr = policy_from_json(*lr, sf.at("lr"));
    sf.finish();
    st.steps.push_back(step);
  }
  f.finish();
  return st;
}

nn::ResNetConfig resnet_from_fields(const json& j, const std::string& path) {
  Fields f(j, path);
  std::string preset = "resnet50";
  f.get("preset", preset);
  nn::ResNetConfig c;
  if (preset == "resnet50") {
    c = nn::ResNetConfig::resnet50(4);
  } else if (preset == "mini") {
    c = nn::ResNetConfig::mini(4);
  } else {
    fail(f.at("preset"), "unknown value \"" + preset + "\" (expected resnet50, mini)");
  }
  if (const json* b = f.raw("blocks")) {
    if (!b->is_array()) fail(f.at("blocks"), "expected an array of integers");
    c.blocks.clear();
    for (const auto& v : *b) {
      if (!v.is_number_integer()) fail(f.at("blocks"), "expected an array of integers");
      c.blocks.push_back(v.get<int>());
    }
  }
  f.get("base_width", c.base_width);
  f.get("bottleneck", c.bottleneck);
  f.get("n_classes", c.n_classes);
  if (const json* h = f.raw("head")) {
    Fields hf(*h, f.at("head"));
    hf.get("hidden", c.head.hidden);
    hf.get("p1", c.head.p1);
    hf.get("p2", c.head.p2);
    hf.finish();
  }
  f.finish();
  return c;
}

}  // namespace

json to_json(const LrPolicy& p) {
  json j;
  j["policy"] = lr_kind_name(p.kind);
  if (p.kind == LrKind::fixed) {
    j["value"] = p.lr;
  } else {
    j["first"] = p.lr_first;
    j["last"] = p.lr_last;
    j["spacing"] = spacing_name(p.spacing);
  }
  j["pinned"] = p.pinned;
  return j;
}

json to_json(const nn::ResNetConfig& c) {
  return json{{"blocks", c.blocks},
              {"base_width", c.base_width},
              {"bottleneck", c.bottleneck},
              {"n_classes", c.n_classes},
              {"head", {{"hidden", c.head.hidden}, {"p1", shortest(c.head.p1)}, {"p2", shortest(c.head.p2)}}}};
}

LrPolicy lr_policy_from_json(const json& j) {
  auto p = policy_from_json(j, "lr");
  validate_policy(p, "lr");
  return p;
}

nn::ResNetConfig resnet_config_from_json(const json& j) {
  auto c = resnet_from_fields(j, "model");
  c.validate();
  return c;
}

json to_json(const ProtocolConfig& c) {
  json stages = json::array();
  for (const auto& st : c.stages) {
    json steps = json::array();
    for (const auto& s : st.steps) {
      steps.push_back({{"epochs", s.epochs}, {"freeze", freeze_name(s.freeze)}, {"lr", to_json(s.lr)}});
    }
    stages.push_back({{"image_size", st.image_size}, {"lr_find", st.lr_find}, {"steps", steps}});
  }
  const auto& a = c.augment;
  const auto& f = c.lr_finder;
  return json{
      {"stages", stages},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"manifest", c.manifest.string()},
      {"checkpoint_dir", c.checkpoint_dir.string()},
      {"pretrained", c.pretrained.string()},
      {"model", to_json(c.model)},
      {"n_groups", c.n_groups},
      {"normalization", {{"mean", shortest(c.stats.mean)}, {"std", shortest(c.stats.std)}}},
      {"augment",
       {{"flip_prob", shortest(a.flip_prob)},
        {"flip_axis", a.flip_axis == data::FlipAxis::vertical ? "vertical" : "horizontal"},
        {"max_rotation_deg", shortest(a.max_rotation_deg)},
        {"lighting", shortest(a.lighting)}}},
      {"lr_finder",
       {{"lr_min", f.lr_min},
        {"lr_max", f.lr_max},
        {"n_iters", f.n_iters},
        {"beta", f.beta},
        {"divergence_factor", f.divergence_factor},
        {"skip_start", f.skip_start},
        {"skip_end", f.skip_end}}},
      {"lr_timeout_s", c.lr_timeout_s},
      {"eval_batch_size", c.eval_batch_size},
  };
}

ProtocolConfig protocol_from_json(const json& j) {
  ProtocolConfig c = default_protocol();
  Fields f(j, "");
  if (const json* st = f.raw("stages")) {
    if (!st->is_array()) fail("stages", "expected an array");
    c.stages.clear();
    for (std::size_t i = 0; i < st->size(); ++i) {
      c.stages.push_back(stage_from_json((*st)[i], "stages[" + std::to_string(i) + "]"));
    }
  }
  f.get("batch_size", c.batch_size);
  f.get("seed", c.seed);
  f.get("manifest", c.manifest);
  f.get("checkpoint_dir", c.checkpoint_dir);
  f.get("pretrained", c.pretrained);
  if (const json* m = f.raw("model")) c.model = resnet_from_fields(*m, "model");
  f.get("n_groups", c.n_groups);
  if (const json* n = f.raw("normalization")) {
    Fields nf(*n, "normalization");
    nf.get("mean", c.stats.mean);
    nf.get("std", c.stats.std);
    nf.finish();
  }
  if (const json* a = f.raw("augment")) {
    Fields af(*a, "augment");
    af.get("flip_prob", c.augment.flip_prob);
    af.get_enum("flip_axis", c.augment.flip_axis, kAxisNames);
    af.get("max_rotation_deg", c.augment.max_rotation_deg);
    af.get("lighting", c.augment.lighting);
    af.finish();
  }
  if (const json* l = f.raw("lr_finder")) {
    Fields lf(*l, "lr_finder");
    lf.get("lr_min", c.lr_finder.lr_min);
    lf.get("lr_max", c.lr_finder.lr_max);
    lf.get("n_iters", c.lr_finder.n_iters);
    lf.get("beta", c.lr_finder.beta);
    lf.get("divergence_factor", c.lr_finder.divergence_factor);
    lf.get("skip_start", c.lr_finder.skip_start);
    lf.get("skip_end", c.lr_finder.skip_end);
    lf.finish();
  }
  f.get("lr_timeout_s", c.lr_timeout_s);
  f.get("eval_batch_size", c.eval_batch_size);
  f.finish();
  c.validate();
  return c;
}

ProtocolConfig parse_protocol(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  return protocol_from_json(j);
}

ProtocolConfig load_protocol(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_protocol(ss.str());
}

}  // namespace stagewise::train
