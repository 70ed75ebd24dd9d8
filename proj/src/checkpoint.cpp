#include "cardiomt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'M', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated checkpoint: " + path.string());
  return v;
}

std::uint8_t dtype_code(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kFloat32: return 0;
    case torch::kInt64: return 1;
    case torch::kFloat64: return 2;
    default: throw DataError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_of(std::uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kInt64;
    case 2: return torch::kFloat64;
    default: throw DataError("unknown tensor dtype code in checkpoint");
  }
}

void write_tensor(std::ostream& out, const std::string& name, const torch::Tensor& tensor) {
  const auto t = tensor.detach().contiguous().cpu();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(out, dtype_code(t));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dim()));
  for (auto d : t.sizes()) put<std::int64_t>(out, d);
  out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"growth_rate", c.growth_rate},
          {"init_features", c.init_features},
          {"block_layers", c.block_layers},
          {"num_seg_labels", c.num_seg_labels},
          {"num_diag_classes", c.num_diag_classes},
          {"num_seg_phases", c.num_seg_phases},
          {"dropout_input", c.dropout_input},
          {"dropout_conv", c.dropout_conv},
          {"stem_kernel", c.stem_kernel},
          {"stem_stride", c.stem_stride},
          {"input_shape", {c.input_shape.slices, c.input_shape.rows, c.input_shape.cols}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.growth_rate = j.at("growth_rate").get<std::int64_t>();
  c.init_features = j.at("init_features").get<std::int64_t>();
  c.block_layers = j.at("block_layers").get<std::vector<std::int64_t>>();
  c.num_seg_labels = j.at("num_seg_labels").get<std::int64_t>();
  c.num_diag_classes = j.at("num_diag_classes").get<std::int64_t>();
  c.num_seg_phases = j.at("num_seg_phases").get<std::int64_t>();
  c.dropout_input = j.at("dropout_input").get<double>();
  c.dropout_conv = j.at("dropout_conv").get<double>();
  c.stem_kernel = j.at("stem_kernel").get<std::array<std::int64_t, 3>>();
  c.stem_stride = j.at("stem_stride").get<std::array<std::int64_t, 3>>();
  const auto s = j.at("input_shape").get<std::array<std::int64_t, 3>>();
  c.input_shape = {s[0], s[1], s[2]};
  return c;
}

void capture_optimizer(Checkpoint& ckpt, MultiTaskNet& model, torch::optim::Adam& optimizer) {
  ckpt.optimizer_state.clear();
  ckpt.optimizer_steps = nlohmann::json::object();
  auto& state = optimizer.state();
  for (const auto& item : model->named_parameters()) {
    const auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ckpt.optimizer_state.emplace_back("adam/" + item.key() + "/exp_avg", s.exp_avg().clone());
    ckpt.optimizer_state.emplace_back("adam/" + item.key() + "/exp_avg_sq", s.exp_avg_sq().clone());
    ckpt.optimizer_steps[item.key()] = s.step();
  }
}

void restore_optimizer(const Checkpoint& ckpt, MultiTaskNet& model, torch::optim::Adam& optimizer) {
  std::map<std::string, torch::Tensor> lookup(ckpt.optimizer_state.begin(), ckpt.optimizer_state.end());
  auto& state = optimizer.state();
  for (const auto& item : model->named_parameters()) {
    if (!ckpt.optimizer_steps.contains(item.key())) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(ckpt.optimizer_steps.at(item.key()).get<std::int64_t>());
    s->exp_avg(lookup.at("adam/" + item.key() + "/exp_avg").clone());
    s->exp_avg_sq(lookup.at("adam/" + item.key() + "/exp_avg_sq").clone());
    state[item.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const nlohmann::json header{
        {"model", to_json(ckpt.config)}, {"meta", ckpt.meta}, {"optimizer", {{"steps", ckpt.optimizer_steps}}}};
    const auto text = header.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, ckpt.model_state.size() + ckpt.optimizer_state.size());
    for (const auto& [name, t] : ckpt.model_state) write_tensor(out, name, t);
    for (const auto& [name, t] : ckpt.optimizer_state) write_tensor(out, name, t);
    if (!out) throw DataError("checkpoint write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto header_len = get<std::uint64_t>(in, path);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw DataError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.config = model_config_from_json(header.at("model"));
  ckpt.meta = header.value("meta", nlohmann::json::object());
  ckpt.optimizer_steps = header.at("optimizer").value("steps", nlohmann::json::object());

  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("truncated checkpoint tensor name");
    const auto dtype = dtype_of(get<std::uint8_t>(in, path));
    const auto rank = get<std::uint8_t>(in, path);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = get<std::int64_t>(in, path);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (!in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()))) {
      throw DataError("truncated checkpoint tensor '" + name + "'");
    }
    auto& dst = name.rfind("adam/", 0) == 0 ? ckpt.optimizer_state : ckpt.model_state;
    dst.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

MultiTaskNet instantiate(const Checkpoint& ckpt) {
  auto model = build_model(ckpt.config);
  restore_state(model, ckpt.model_state);
  return model;
}

}  // namespace cardiomt
