// SPDX-License-Identifier: Apache-2.0
#include "stagewise/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "stagewise/errors.hpp"
#include "stagewise/train/protocol.hpp"

namespace stagewise::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'W', 'C', 'K'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > b_.size() - pos_) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }
    const auto* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const nn::NamedTensor& t) {
  w.put(static_cast<std::uint32_t>(t.name.size()));
  w.bytes(t.name.data(), t.name.size());
  w.put(kDtypeF32);
  const auto& shape = t.tensor.shape();
  w.put(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.put(static_cast<std::int64_t>(d));
  const auto data = t.tensor.data();
  w.put(static_cast<std::uint64_t>(data.size_bytes()));
  w.bytes(data.data(), data.size_bytes());
}

nn::NamedTensor read_tensor(Reader& r) {
  nn::NamedTensor t;
  const auto name_len = r.get<std::uint32_t>("tensor name length");
  const auto* name = r.take(name_len, "tensor name");
  t.name.assign(reinterpret_cast<const char*>(name), name_len);
  const auto dtype = r.get<std::uint8_t>("dtype");
  if (dtype != kDtypeF32) {
    throw CheckpointError("tensor " + t.name + ": unsupported dtype " + std::to_string(dtype));
  }
  const auto ndim = r.get<std::uint32_t>("ndim");
  if (ndim > 8) throw CheckpointError("tensor " + t.name + ": implausible rank " + std::to_string(ndim));
  Shape shape;
  std::uint64_t numel = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = r.get<std::int64_t>("dims");
    if (d < 0) throw CheckpointError("tensor " + t.name + ": negative dimension");
    shape.push_back(d);
    numel *= static_cast<std::uint64_t>(d);
  }
  const auto payload = r.get<std::uint64_t>("payload size");
  if (payload != numel * sizeof(float)) {
    throw CheckpointError("tensor " + t.name + ": payload size does not match shape " + shape_str(shape));
  }
  const auto* p = r.take(payload, "tensor payload");
  std::vector<float> values(numel);
  std::memcpy(values.data(), p, payload);
  t.tensor = Tensor(std::move(shape), std::move(values));
  return t;
}

json position_json(const Position& p) {
  return {{"stage", p.stage},
          {"step", p.step},
          {"epoch_in_step", p.epoch_in_step},
          {"epochs_completed", p.epochs_completed},
          {"finished", p.finished}};
}

}  // namespace

Checkpoint make_checkpoint(const nn::Model& model, const optim::Adam* adam, const Position& position) {
  Checkpoint ck;
  ck.model = model.config();
  ck.n_groups = model.n_groups();
  ck.position = position;
  for (const auto& e : model.state()) ck.model_state.push_back({e.name, e.tensor.clone()});
  if (adam) {
    ck.adam_t = adam->t();
    for (const auto& e : adam->state_tensors()) ck.optim_state.push_back({e.name, e.tensor.clone()});
  }
  return ck;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  const json meta{{"model", to_json(ck.model)},
                  {"n_groups", ck.n_groups},
                  {"class_names", ck.class_names},
                  {"position", position_json(ck.position)},
                  {"seed", ck.seed},
                  {"adam_t", ck.adam_t},
                  {"n_model_tensors", ck.model_state.size()},
                  {"run", ck.run}};
  const std::string text = meta.dump();
  Writer w;
  w.bytes(kMagic, 4);
  w.put(Checkpoint::kVersion);
  w.put(static_cast<std::uint64_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.put(static_cast<std::uint64_t>(ck.model_state.size() + ck.optim_state.size()));
  for (const auto& t : ck.model_state) write_tensor(w, t);
  for (const auto& t : ck.optim_state) write_tensor(w, t);
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("bad magic: not a checkpoint file");
  }
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
  }
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  const auto* meta_bytes = r.take(meta_len, "metadata");
  Checkpoint ck;
  std::size_t n_model = 0;
  try {
    const auto meta = json::parse(std::string(reinterpret_cast<const char*>(meta_bytes), meta_len));
    ck.model = resnet_config_from_json(meta.at("model"));
    ck.n_groups = meta.at("n_groups").get<int>();
    ck.class_names = meta.at("class_names").get<std::vector<std::string>>();
    const auto& p = meta.at("position");
    ck.position = {p.at("stage").get<int>(), p.at("step").get<int>(), p.at("epoch_in_step").get<int>(),
                   p.at("epochs_completed").get<int>(), p.at("finished").get<bool>()};
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.adam_t = meta.at("adam_t").get<std::int64_t>();
    n_model = meta.at("n_model_tensors").get<std::size_t>();
    ck.run = meta.at("run");
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>("tensor count");
  if (n_model > count) throw CheckpointError("malformed checkpoint: tensor count below model tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    auto t = read_tensor(r);
    (i < n_model ? ck.model_state : ck.optim_state).push_back(std::move(t));
  }
  if (r.remaining() != 0) throw CheckpointError("malformed checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const nn::Model& model, const optim::Adam* adam, const Position& position,
                     const std::filesystem::path& path) {
  save_checkpoint(make_checkpoint(model, adam, position), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

nn::Model restore_model(const Checkpoint& ck) {
  auto model = nn::build_resnet(ck.model, 0);
  nn::assign_layer_groups(model, ck.n_groups);
  model.load_state(ck.model_state);
  return model;
}

void restore_optimizer(const Checkpoint& ck, optim::Adam& adam) { adam.load_state(ck.adam_t, ck.optim_state); }

std::size_t load_body_weights(nn::Model& model, const Checkpoint& ck) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : ck.model_state) by_name[e.name] = &e.tensor;
  std::size_t copied = 0;
  for (const auto& e : model.state()) {
    if (e.name.rfind("head.", 0) == 0) continue;
    auto it = by_name.find(e.name);
    if (it == by_name.end() || it->second->shape() != e.tensor.shape()) continue;
    auto src = it->second->data();
    auto dst = Tensor(e.tensor).data();
    std::copy(src.begin(), src.end(), dst.begin());
    ++copied;
  }
  return copied;
}

}  // namespace stagewise::train
