#pragma once

#include <array>
#include <cstdint>
#include <span>

#include <torch/torch.h>

#include "cardiomt/study.hpp"

namespace cardiomt {

enum class DiceDenominator { Linear, Squared };

struct LossConfig {
  /// Weight of the diagnosis term; 1 - alpha weights segmentation.
  double alpha = 0.05;
  /// Exponent applied to (1 - Dice).
  double p = 0.3;
  double dice_smooth = 1e-5;
  /// Upper bound on Dice before exponentiation when p < 1.
  double dice_clamp = 1.0 - 1e-4;
  DiceDenominator dice_denominator = DiceDenominator::Linear;

  void validate() const;
};

struct LossBreakdown {
  double total = 0;
  double diagnosis = 0;
  double segmentation = 0;
  std::array<double, kNumLabels> per_class_dice{};
};

// Tensor routes. Probability and one-hot tensors are laid out
// (batch, labels, spatial...); sums run over batch and spatial axes.

/// (2 sum(p t) + smooth) / (sum p + sum t + smooth) for one label, or the
/// squared-term denominator variant.
torch::Tensor soft_dice(const torch::Tensor& probs, const torch::Tensor& target, std::int64_t label, double smooth,
                        DiceDenominator denominator = DiceDenominator::Linear);
/// Soft Dice for every label, shape (labels).
torch::Tensor soft_dice_per_label(const torch::Tensor& probs, const torch::Tensor& target, double smooth,
                                  DiceDenominator denominator = DiceDenominator::Linear);
/// mean_n (1 - Dice_n)^p, with Dice clamped to config.dice_clamp when p < 1.
torch::Tensor segmentation_loss(const torch::Tensor& probs, const torch::Tensor& target, const LossConfig& config);
/// Batch-mean cross-entropy over class logits (batch, classes).
torch::Tensor diagnosis_loss(const torch::Tensor& logits, const torch::Tensor& targets);
torch::Tensor combined_loss(const torch::Tensor& diagnosis, const torch::Tensor& segmentation, double alpha);

// Scalar routes.

double segmentation_loss_from_dice(std::span<const double> dice, double p, double dice_clamp);
/// Cross-entropy of one logit vector with log-sum-exp stabilisation.
double diagnosis_loss(std::span<const double> logits, int target_class);
double combined_loss(double diagnosis, double segmentation, double alpha);
/// d/dDice of (1 - Dice)^p, i.e. -p (1 - Dice)^(p - 1), honouring the clamp.
double dice_term_derivative(double dice, double p, double dice_clamp);

struct GradientCheckOptions {
  std::int64_t batch = 2;
  std::int64_t spatial = 4;  // cube edge of the segmentation volume
  double step = 1e-3;
  /// Forces the background Dice above the clamp so the clamped branch is
  /// exercised (only meaningful for p < 1).
  bool saturate_background = false;
  std::uint64_t seed = 0;
};

struct GradientCheckReport {
  double max_relative_error = 0;
  double max_relative_error_segmentation = 0;
  double max_relative_error_diagnosis = 0;
  std::int64_t coordinates_checked = 0;
  /// Coordinates where a +/- step flips a label across the Dice clamp.
  std::int64_t coordinates_excluded = 0;
  int clamped_labels = 0;
  bool all_finite = true;
};

/// Compares autograd gradients of the combined loss with respect to both
/// heads' raw logits against central finite differences, in double precision.
GradientCheckReport loss_gradient_check(const LossConfig& config, const GradientCheckOptions& options = {});

}  // namespace cardiomt
