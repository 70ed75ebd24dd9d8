#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cardiomt/model.hpp"

namespace cardiomt {

/// Binary checkpoint layout (little-endian):
///   magic "CMTCKPT\0", u32 format version,
///   u64 length + UTF-8 JSON header {"model": ModelConfig, "meta": {...},
///   "optimizer": {"steps": {param: n}}},
///   u64 tensor count, then per tensor: u32 name length, name, u8 dtype
///   (0 f32, 1 i64, 2 f64), u8 rank, i64 dims[rank], raw data.
/// Optimizer moments are stored as "adam/<param>/exp_avg[_sq]".
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

struct Checkpoint {
  ModelConfig config;
  NamedTensors model_state;
  NamedTensors optimizer_state;
  nlohmann::json optimizer_steps = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Captures Adam moments keyed by parameter name.
void capture_optimizer(Checkpoint& ckpt, MultiTaskNet& model, torch::optim::Adam& optimizer);
void restore_optimizer(const Checkpoint& ckpt, MultiTaskNet& model, torch::optim::Adam& optimizer);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Builds a model from the checkpoint config and loads its weights.
MultiTaskNet instantiate(const Checkpoint& ckpt);

}  // namespace cardiomt
