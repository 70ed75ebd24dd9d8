#include "cardiomt/model.hpp"

#include <algorithm>
#include <cmath>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace {

using A3 = std::array<std::int64_t, 3>;

torch::ExpandingArray<3> ea(const std::array<std::int64_t, 3>& a) { return torch::ExpandingArray<3>({a[0], a[1], a[2]}); }

void record(ForwardTrace* trace, std::string stage, const torch::Tensor& t) {
  if (trace != nullptr) trace->push_back({std::move(stage), t.sizes().vec()});
}

void init_weight(torch::Tensor& w, double fan_in, double gain) {
  torch::NoGradGuard guard;
  w.normal_(0.0, gain / std::sqrt(fan_in));
}

}  // namespace

std::int64_t ModelConfig::spatial_multiple() const {
  return stem_stride[1] * (std::int64_t{1} << static_cast<int>(block_layers.size()));
}

void ModelConfig::validate() const {
  if (growth_rate <= 0) throw ConfigError("model.growth_rate must be positive");
  if (init_features <= 0) throw ConfigError("model.init_features must be positive");
  if (block_layers.empty()) throw ConfigError("model.block_layers must not be empty");
  if (block_layers.size() > 16) throw ConfigError("model.block_layers has too many stages");
  for (std::size_t i = 0; i < block_layers.size(); ++i) {
    if (block_layers[i] < 1) throw ConfigError("model.block_layers entries must be >= 1");
    if (i > 0 && block_layers[i] < block_layers[i - 1]) throw ConfigError("model.block_layers must be nondecreasing");
  }
  if (num_seg_labels < 2 || num_diag_classes < 2) throw ConfigError("model needs >= 2 labels and classes");
  if (num_seg_phases != 1 && num_seg_phases != 2) throw ConfigError("model.num_seg_phases must be 1 or 2");
  if (!(dropout_input >= 0 && dropout_input < 1) || !(dropout_conv >= 0 && dropout_conv < 1)) {
    throw ConfigError("model dropout rates must lie in [0, 1)");
  }
  for (auto k : stem_kernel) {
    if (k < 1 || k % 2 == 0) throw ConfigError("model.stem_kernel entries must be odd and positive");
  }
  if (stem_stride[0] != 1 || stem_stride[1] < 1 || stem_stride[1] != stem_stride[2]) {
    throw ConfigError("model.stem_stride must be (1, s, s): the slice axis is never resized by the main branch");
  }
  const auto m = spatial_multiple();
  if (input_shape.rows < m || input_shape.cols < m || input_shape.rows % m != 0 || input_shape.cols % m != 0) {
    throw ConfigError("input " + std::to_string(input_shape.rows) + "x" + std::to_string(input_shape.cols) +
                      " cannot be downsampled by " + std::to_string(block_layers.size()) +
                      " stages: rows and cols must be positive multiples of " + std::to_string(m));
  }
  if (input_shape.slices < 2) throw ConfigError("the diagnosis branch pools the slice axis: slab depth must be >= 2");
}

ConvUnitImpl::ConvUnitImpl(std::int64_t in, std::int64_t out, std::array<std::int64_t, 3> kernel,
                           std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> padding, double dropout,
                           bool transpose) {
  const double receptive = static_cast<double>(kernel[0] * kernel[1] * kernel[2]);
  if (transpose) {
    up_ = register_module("conv", torch::nn::ConvTranspose3d(
                                      torch::nn::ConvTranspose3dOptions(in, out, ea(kernel)).stride(ea(stride)).bias(false)));
    const double overlap = receptive / static_cast<double>(stride[0] * stride[1] * stride[2]);
    init_weight(up_->weight, static_cast<double>(in) * overlap, std::sqrt(2.0));
  } else {
    conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, ea(kernel))
                                                          .stride(ea(stride))
                                                          .padding(ea(padding))
                                                          .bias(false)));
    init_weight(conv_->weight, static_cast<double>(in) * receptive, std::sqrt(2.0));
  }
  bn_ = register_module("bn", torch::nn::BatchNorm3d(torch::nn::BatchNorm3dOptions(out).momentum(0.1)));
  if (dropout > 0) dropout_ = register_module("dropout", torch::nn::Dropout(dropout));
}

torch::Tensor ConvUnitImpl::forward(const torch::Tensor& x) {
  auto y = conv_ ? conv_->forward(x) : up_->forward(x);
  y = torch::relu(bn_->forward(y));
  return dropout_ ? dropout_->forward(y) : y;
}

DenseBlockImpl::DenseBlockImpl(std::int64_t in, std::int64_t layers, std::int64_t growth_rate, double dropout)
    : out_channels_(in + layers * growth_rate) {
  for (std::int64_t i = 0; i < layers; ++i) {
    layers_.push_back(register_module("layer" + std::to_string(i),
                                      ConvUnit(in + i * growth_rate, growth_rate, A3{3, 3, 3}, A3{1, 1, 1}, A3{1, 1, 1}, dropout)));
  }
}

torch::Tensor DenseBlockImpl::forward(torch::Tensor x) {
  for (auto& layer : layers_) x = torch::cat({x, layer->forward(x)}, 1);
  return x;
}

namespace {

ConvUnit bottleneck(std::int64_t in, double dropout) {
  return ConvUnit(in, in / 2, A3{1, 1, 1}, A3{1, 1, 1}, A3{0, 0, 0}, dropout);
}

}  // namespace

MainBranchImpl::MainBranchImpl(const ModelConfig& config) {
  const auto& k = config.stem_kernel;
  stem_ = register_module("stem", ConvUnit(3, config.init_features, k, config.stem_stride,
                                           A3{k[0] / 2, k[1] / 2, k[2] / 2}, config.dropout_conv));
  std::int64_t c = config.init_features;
  for (std::size_t i = 0; i < config.block_layers.size(); ++i) {
    const auto idx = std::to_string(i);
    blocks_.push_back(register_module("block" + idx, DenseBlock(c, config.block_layers[i], config.growth_rate,
                                                                 config.dropout_conv)));
    c = blocks_.back()->out_channels();
    bottlenecks_.push_back(register_module("bottleneck" + idx, bottleneck(c, config.dropout_conv)));
    c /= 2;
    channels_.push_back(c);
  }
}

std::vector<torch::Tensor> MainBranchImpl::forward(const torch::Tensor& x, ForwardTrace* trace) {
  std::vector<torch::Tensor> out{torch::Tensor()};
  auto y = stem_->forward(x);
  record(trace, "mb.stem", y);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto idx = std::to_string(i);
    y = blocks_[i]->forward(y);
    record(trace, "mb.block" + idx, y);
    y = bottlenecks_[i]->forward(y);
    record(trace, "mb.bottleneck" + idx, y);
    out.push_back(y);
    y = torch::avg_pool3d(y, {1, 2, 2});
    record(trace, "mb.pool" + idx, y);
  }
  out[0] = y;
  return out;
}

DiagnosisBranchImpl::DiagnosisBranchImpl(const ModelConfig& config, std::int64_t in_channels) {
  block_ = register_module("block", DenseBlock(in_channels, config.block_layers.back(), config.growth_rate,
                                                 config.dropout_conv));
  const auto c = block_->out_channels();
  bottleneck_ = register_module("bottleneck", bottleneck(c, config.dropout_conv));
  head_ = register_module("head", torch::nn::Linear(c / 2, config.num_diag_classes));
  init_weight(head_->weight, static_cast<double>(c / 2), 1.0);
  torch::NoGradGuard guard;
  head_->bias.zero_();
}

torch::Tensor DiagnosisBranchImpl::forward(const torch::Tensor& x, ForwardTrace* trace) {
  auto y = block_->forward(x);
  record(trace, "db.block", y);
  y = bottleneck_->forward(y);
  record(trace, "db.bottleneck", y);
  y = torch::max_pool3d(y, {2, 2, 2});
  record(trace, "db.pool", y);
  y = torch::adaptive_avg_pool3d(y, {1, 1, 1}).flatten(1);
  y = head_->forward(y);
  record(trace, "db.head", y);
  return y;
}

SegmentationBranchImpl::SegmentationBranchImpl(const ModelConfig& config,
                                               const std::vector<std::int64_t>& skip_channels) {
  const auto stages = config.block_layers.size();
  blocks_.resize(stages, nullptr);
  bottlenecks_.resize(stages, nullptr);
  ups_.resize(stages, nullptr);
  merges_.resize(stages, nullptr);
  std::int64_t c = skip_channels.back();
  for (std::size_t s = stages; s-- > 0;) {
    const auto idx = std::to_string(s);
    blocks_[s] = register_module("block" + idx, DenseBlock(c, config.block_layers[s], config.growth_rate,
                                                           config.dropout_conv));
    c = blocks_[s]->out_channels();
    bottlenecks_[s] = register_module("bottleneck" + idx, bottleneck(c, config.dropout_conv));
    c /= 2;
    ups_[s] = register_module("up" + idx, ConvUnit(c, c, A3{1, 2, 2}, A3{1, 2, 2}, A3{0, 0, 0}, config.dropout_conv, true));
    c += skip_channels[s];
    merges_[s] = register_module("merge" + idx, bottleneck(c, config.dropout_conv));
    c /= 2;
  }
  const auto st = config.stem_stride[1];
  final_up_ = register_module("final_up", ConvUnit(c, c, A3{1, st, st}, A3{1, st, st}, A3{0, 0, 0}, config.dropout_conv, true));
  head_ = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(
                                      c, config.num_seg_labels * config.num_seg_phases, 1)));
  init_weight(head_->weight, static_cast<double>(c), 1.0);
  torch::NoGradGuard guard;
  head_->bias.zero_();
}

torch::Tensor SegmentationBranchImpl::forward(const std::vector<torch::Tensor>& main_outputs, ForwardTrace* trace) {
  auto y = main_outputs[0];
  for (std::size_t s = blocks_.size(); s-- > 0;) {
    const auto idx = std::to_string(s);
    y = blocks_[s]->forward(y);
    record(trace, "sb.block" + idx, y);
    y = bottlenecks_[s]->forward(y);
    record(trace, "sb.bottleneck" + idx, y);
    y = ups_[s]->forward(y);
    record(trace, "sb.up" + idx, y);
    y = torch::cat({y, main_outputs[s + 1]}, 1);
    y = merges_[s]->forward(y);
    record(trace, "sb.merge" + idx, y);
  }
  y = final_up_->forward(y);
  record(trace, "sb.final_up", y);
  y = head_->forward(y);
  record(trace, "sb.head", y);
  return y;
}

MultiTaskNetImpl::MultiTaskNetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  if (config_.dropout_input > 0) input_dropout_ = register_module("input_dropout", torch::nn::Dropout(config_.dropout_input));
  mb_ = register_module("mb", MainBranch(config_));
  sb_ = register_module("sb", SegmentationBranch(config_, mb_->skip_channels()));
  db_ = register_module("db", DiagnosisBranch(config_, mb_->out_channels()));
}

NetworkOutput MultiTaskNetImpl::forward(const torch::Tensor& input, ForwardTrace* trace) {
  if (input.dim() != 5 || input.size(1) != 3) {
    throw std::invalid_argument("network input must be (batch, 3, slices, rows, cols)");
  }
  const auto m = config_.spatial_multiple();
  if (input.size(3) % m != 0 || input.size(4) % m != 0) {
    throw std::invalid_argument("input rows/cols (" + std::to_string(input.size(3)) + "x" +
                                std::to_string(input.size(4)) + ") must be multiples of " + std::to_string(m));
  }
  if (input.size(2) < 2) throw std::invalid_argument("input needs at least 2 slices");
  auto x = input_dropout_ ? input_dropout_->forward(input) : input;
  const auto main = mb_->forward(x, trace);
  NetworkOutput out;
  out.diag_logits = db_->forward(main[0], trace);
  const auto seg = sb_->forward(main, trace);
  const auto labels = config_.num_seg_labels;
  out.seg_logits = seg.narrow(1, 0, labels);
  if (config_.num_seg_phases == 2) out.es_seg_logits = seg.narrow(1, labels, labels);
  return out;
}

MultiTaskNet build_model(const ModelConfig& config) { return MultiTaskNet(config); }

std::int64_t parameter_count(MultiTaskNet& model) {
  std::int64_t n = 0;
  for (const auto& p : model->parameters()) n += p.numel();
  return n;
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot_state(MultiTaskNet& model) {
  torch::NoGradGuard guard;
  std::vector<std::pair<std::string, torch::Tensor>> state;
  for (const auto& item : model->named_parameters()) state.emplace_back(item.key(), item.value().detach().clone());
  for (const auto& item : model->named_buffers()) state.emplace_back(item.key(), item.value().detach().clone());
  return state;
}

void restore_state(MultiTaskNet& model, const std::vector<std::pair<std::string, torch::Tensor>>& state) {
  torch::NoGradGuard guard;
  auto params = model->named_parameters();
  auto buffers = model->named_buffers();
  for (const auto& [name, value] : state) {
    torch::Tensor* target = params.find(name);
    if (target == nullptr) target = buffers.find(name);
    if (target == nullptr) throw DataError("model has no tensor named '" + name + "'");
    if (target->sizes() != value.sizes()) throw DataError("shape mismatch restoring '" + name + "'");
    target->copy_(value);
  }
}

}  // namespace cardiomt
