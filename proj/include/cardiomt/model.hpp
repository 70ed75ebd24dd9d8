#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cardiomt/volume.hpp"

namespace cardiomt {

struct ModelConfig {
  std::int64_t growth_rate = 12;
  std::int64_t init_features = 64;
  std::vector<std::int64_t> block_layers{2, 4, 8};
  std::int64_t num_seg_labels = 4;
  std::int64_t num_diag_classes = 5;
  /// 2 when both ED and ES are segmented, 1 for ED only.
  std::int64_t num_seg_phases = 2;
  double dropout_input = 0.2;
  double dropout_conv = 0.5;
  std::array<std::int64_t, 3> stem_kernel{7, 7, 7};
  std::array<std::int64_t, 3> stem_stride{1, 2, 2};
  /// Slab shape the model is built for: (slab depth, rows, cols).
  Shape3 input_shape{6, 128, 128};

  /// Total in-plane reduction between the input and the deepest main-branch
  /// features; input rows/cols must be multiples of it.
  std::int64_t spatial_multiple() const;
  /// Throws ConfigError on invalid values or when the input shape cannot be
  /// downsampled as required.
  void validate() const;
};

/// Segmentation logits (batch, labels, slices, rows, cols) for ED and,
/// when two phases are supervised, ES; diagnosis logits (batch, classes).
struct NetworkOutput {
  torch::Tensor seg_logits;
  torch::Tensor es_seg_logits;
  torch::Tensor diag_logits;

  const torch::Tensor& phase_logits(int phase) const { return phase == 0 ? seg_logits : es_seg_logits; }
};

/// Shape of the activations after a named stage, recorded on request.
struct StageShape {
  std::string stage;
  std::vector<std::int64_t> sizes;
};
using ForwardTrace = std::vector<StageShape>;

/// Convolution (or transpose convolution) followed by BN, ReLU and dropout.
class ConvUnitImpl : public torch::nn::Module {
 public:
  ConvUnitImpl(std::int64_t in, std::int64_t out, std::array<std::int64_t, 3> kernel,
               std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> padding, double dropout,
               bool transpose = false);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv_{nullptr};
  torch::nn::ConvTranspose3d up_{nullptr};
  torch::nn::BatchNorm3d bn_{nullptr};
  torch::nn::Dropout dropout_{nullptr};
};
TORCH_MODULE(ConvUnit);

/// Each layer appends growth_rate feature maps computed from the
/// concatenation of everything before it.
class DenseBlockImpl : public torch::nn::Module {
 public:
  DenseBlockImpl(std::int64_t in, std::int64_t layers, std::int64_t growth_rate, double dropout);
  torch::Tensor forward(torch::Tensor x);
  std::int64_t out_channels() const { return out_channels_; }

 private:
  std::vector<ConvUnit> layers_;
  std::int64_t out_channels_;
};
TORCH_MODULE(DenseBlock);

/// Main (shared) branch: stem, then DenseBlock-bottleneck-average pooling.
class MainBranchImpl : public torch::nn::Module {
 public:
  MainBranchImpl(const ModelConfig& config);
  /// Returns the pooled output followed by the pre-pool skip tensors.
  std::vector<torch::Tensor> forward(const torch::Tensor& x, ForwardTrace* trace);
  std::int64_t out_channels() const { return channels_.back(); }
  const std::vector<std::int64_t>& skip_channels() const { return channels_; }

 private:
  ConvUnit stem_{nullptr};
  std::vector<DenseBlock> blocks_;
  std::vector<ConvUnit> bottlenecks_;
  std::vector<std::int64_t> channels_;
};
TORCH_MODULE(MainBranch);

/// Diagnosis branch: DenseBlock-bottleneck-max pooling over all three axes,
/// global average pooling and a linear classifier.
class DiagnosisBranchImpl : public torch::nn::Module {
 public:
  DiagnosisBranchImpl(const ModelConfig& config, std::int64_t in_channels);
  torch::Tensor forward(const torch::Tensor& x, ForwardTrace* trace);

 private:
  DenseBlock block_{nullptr};
  ConvUnit bottleneck_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(DiagnosisBranch);

/// Segmentation branch: DenseBlock-bottleneck-transpose convolution per
/// stage, merging the matching main-branch skip by concatenation.
class SegmentationBranchImpl : public torch::nn::Module {
 public:
  SegmentationBranchImpl(const ModelConfig& config, const std::vector<std::int64_t>& skip_channels);
  torch::Tensor forward(const std::vector<torch::Tensor>& main_outputs, ForwardTrace* trace);

 private:
  std::vector<DenseBlock> blocks_;
  std::vector<ConvUnit> bottlenecks_;
  std::vector<ConvUnit> ups_;
  std::vector<ConvUnit> merges_;
  ConvUnit final_up_{nullptr};
  torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(SegmentationBranch);

class MultiTaskNetImpl : public torch::nn::Module {
 public:
  explicit MultiTaskNetImpl(const ModelConfig& config);
  /// Input (batch, 3, slices, rows, cols) in (ED, ED-ES, ES) channel order.
  NetworkOutput forward(const torch::Tensor& input, ForwardTrace* trace = nullptr);
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  torch::nn::Dropout input_dropout_{nullptr};
  MainBranch mb_{nullptr};
  SegmentationBranch sb_{nullptr};
  DiagnosisBranch db_{nullptr};
};
TORCH_MODULE(MultiTaskNet);

/// Builds and initialises the network (fan-in variance scaling for
/// convolutions; BN scale 1 and shift 0). Uses torch's global generator.
MultiTaskNet build_model(const ModelConfig& config);

std::int64_t parameter_count(MultiTaskNet& model);

/// Parameter-name prefixes of the three branches.
inline constexpr const char* kMainPrefix = "mb.";
inline constexpr const char* kSegPrefix = "sb.";
inline constexpr const char* kDiagPrefix = "db.";

/// Copies of all parameters and buffers, keyed by name.
std::vector<std::pair<std::string, torch::Tensor>> snapshot_state(MultiTaskNet& model);
void restore_state(MultiTaskNet& model, const std::vector<std::pair<std::string, torch::Tensor>>& state);

}  // namespace cardiomt
