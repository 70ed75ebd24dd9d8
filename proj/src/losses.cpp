#include "cardiomt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace {

std::vector<std::int64_t> reduction_dims(const torch::Tensor& t) {
  std::vector<std::int64_t> dims;
  for (std::int64_t d = 0; d < t.dim(); ++d) {
    if (d != 1) dims.push_back(d);
  }
  return dims;
}

void check_pair(const torch::Tensor& probs, const torch::Tensor& target) {
  if (probs.sizes() != target.sizes()) {
    throw std::invalid_argument("soft Dice shape mismatch: prediction and target differ");
  }
  if (probs.dim() < 2) throw std::invalid_argument("soft Dice expects (batch, labels, ...) tensors");
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("loss.alpha must lie in [0, 1]");
  if (!(p > 0)) throw ConfigError("loss.p must be > 0");
  if (!(dice_smooth > 0)) throw ConfigError("loss.dice_smooth must be > 0");
  if (!(dice_clamp > 0 && dice_clamp < 1)) throw ConfigError("loss.dice_clamp must lie in (0, 1)");
}

torch::Tensor soft_dice_per_label(const torch::Tensor& probs, const torch::Tensor& target, double smooth,
                                  DiceDenominator denominator) {
  check_pair(probs, target);
  const auto dims = reduction_dims(probs);
  const auto intersection = (probs * target).sum(dims);
  const auto denom = denominator == DiceDenominator::Linear ? probs.sum(dims) + target.sum(dims)
                                                            : (probs * probs).sum(dims) + (target * target).sum(dims);
  return (2 * intersection + smooth) / (denom + smooth);
}

torch::Tensor soft_dice(const torch::Tensor& probs, const torch::Tensor& target, std::int64_t label, double smooth,
                        DiceDenominator denominator) {
  check_pair(probs, target);
  if (label < 0 || label >= probs.size(1)) throw std::out_of_range("soft Dice label index out of range");
  return soft_dice_per_label(probs.narrow(1, label, 1), target.narrow(1, label, 1), smooth, denominator).squeeze(0);
}

torch::Tensor segmentation_loss(const torch::Tensor& probs, const torch::Tensor& target, const LossConfig& config) {
  if (!(config.p > 0)) throw ConfigError("loss.p must be > 0");
  auto dice = soft_dice_per_label(probs, target, config.dice_smooth, config.dice_denominator);
  // (1 - d)^p has an unbounded derivative at d = 1 when p < 1.
  if (config.p < 1) dice = torch::clamp_max(dice, config.dice_clamp);
  return torch::pow(1 - dice, config.p).mean();
}

torch::Tensor diagnosis_loss(const torch::Tensor& logits, const torch::Tensor& targets) {
  if (logits.dim() != 2) throw std::invalid_argument("diagnosis logits must be (batch, classes)");
  const auto n_classes = logits.size(1);
  if (targets.numel() > 0 && (targets.min().item<std::int64_t>() < 0 || targets.max().item<std::int64_t>() >= n_classes)) {
    throw std::out_of_range("diagnosis target class out of range");
  }
  return torch::nll_loss(torch::log_softmax(logits, 1), targets);
}

torch::Tensor combined_loss(const torch::Tensor& diagnosis, const torch::Tensor& segmentation, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("alpha must lie in [0, 1]");
  return alpha * diagnosis + (1 - alpha) * segmentation;
}

double segmentation_loss_from_dice(std::span<const double> dice, double p, double dice_clamp) {
  if (!(p > 0)) throw ConfigError("loss.p must be > 0");
  if (dice.empty()) throw std::invalid_argument("no Dice values");
  double sum = 0;
  for (double d : dice) {
    const double dc = p < 1 ? std::min(d, dice_clamp) : d;
    sum += std::pow(1 - dc, p);
  }
  return sum / static_cast<double>(dice.size());
}

double diagnosis_loss(std::span<const double> logits, int target_class) {
  if (target_class < 0 || target_class >= static_cast<int>(logits.size())) {
    throw std::out_of_range("diagnosis target class out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double z : logits) sum += std::exp(z - m);
  return m + std::log(sum) - logits[static_cast<std::size_t>(target_class)];
}

double combined_loss(double diagnosis, double segmentation, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("alpha must lie in [0, 1]");
  return alpha * diagnosis + (1 - alpha) * segmentation;
}

double dice_term_derivative(double dice, double p, double dice_clamp) {
  if (p < 1 && dice > dice_clamp) return 0.0;
  return -p * std::pow(1 - dice, p - 1);
}

GradientCheckReport loss_gradient_check(const LossConfig& config, const GradientCheckOptions& options) {
  config.validate();
  torch::NoGradGuard outer_guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(options.seed);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const std::int64_t b = options.batch, s = options.spatial;

  const auto labels = torch::randint(0, kNumLabels, {b, s, s, s}, gen, torch::TensorOptions().dtype(torch::kLong));
  const auto onehot = torch::one_hot(labels, kNumLabels).permute({0, 4, 1, 2, 3}).to(torch::kFloat64).contiguous();
  auto seg_logits = 2.0 * torch::randn({b, kNumLabels, s, s, s}, gen, opts);
  if (options.saturate_background) {
    const auto bg = (labels == 0).to(torch::kFloat64);
    seg_logits.select(1, 0).copy_(24.0 * bg - 12.0 + 0.1 * torch::randn({b, s, s, s}, gen, opts));
  }
  auto diag_logits = torch::randn({b, kNumDiagnoses}, gen, opts);
  const auto diag_targets = torch::randint(0, kNumDiagnoses, {b}, gen, torch::TensorOptions().dtype(torch::kLong));

  struct Eval {
    double loss;
    torch::Tensor dice;
  };
  auto evaluate = [&](const torch::Tensor& seg, const torch::Tensor& diag) {
    const auto probs = torch::softmax(seg, 1);
    const auto dice = soft_dice_per_label(probs, onehot, config.dice_smooth, config.dice_denominator);
    const auto total = combined_loss(diagnosis_loss(diag, diag_targets), segmentation_loss(probs, onehot, config),
                                     config.alpha);
    return Eval{total.item<double>(), dice};
  };

  // Analytic route.
  torch::Tensor seg_grad, diag_grad;
  torch::Tensor base_dice;
  {
    torch::AutoGradMode enable(true);
    auto seg = seg_logits.clone().requires_grad_(true);
    auto diag = diag_logits.clone().requires_grad_(true);
    const auto probs = torch::softmax(seg, 1);
    base_dice = soft_dice_per_label(probs, onehot, config.dice_smooth, config.dice_denominator).detach();
    const auto total = combined_loss(diagnosis_loss(diag, diag_targets), segmentation_loss(probs, onehot, config),
                                     config.alpha);
    total.backward();
    seg_grad = seg.grad().contiguous();
    diag_grad = diag.grad().contiguous();
  }

  GradientCheckReport report;
  report.all_finite = torch::isfinite(seg_grad).all().item<bool>() && torch::isfinite(diag_grad).all().item<bool>();
  const bool clamping = config.p < 1;
  const auto base_clamped = base_dice > config.dice_clamp;
  if (clamping) report.clamped_labels = static_cast<int>(base_clamped.sum().item<std::int64_t>());

  auto relative = [](double a, double n) {
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    return std::abs(a - n) / denom;
  };

  auto sweep = [&](torch::Tensor& x, const torch::Tensor& analytic, double& head_max) {
    auto flat = x.view({-1});
    const auto g = analytic.view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + options.step;
      const auto plus = evaluate(seg_logits, diag_logits);
      flat[i] = orig - options.step;
      const auto minus = evaluate(seg_logits, diag_logits);
      flat[i] = orig;
      if (clamping && (!torch::equal(plus.dice > config.dice_clamp, base_clamped) ||
                       !torch::equal(minus.dice > config.dice_clamp, base_clamped))) {
        ++report.coordinates_excluded;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2 * options.step);
      const double err = relative(g[i].item<double>(), numeric);
      if (!std::isfinite(err)) report.all_finite = false;
      head_max = std::max(head_max, err);
      ++report.coordinates_checked;
    }
  };
  sweep(seg_logits, seg_grad, report.max_relative_error_segmentation);
  sweep(diag_logits, diag_grad, report.max_relative_error_diagnosis);
  report.max_relative_error = std::max(report.max_relative_error_segmentation, report.max_relative_error_diagnosis);
  return report;
}

}  // namespace cardiomt
