#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cardiomt/metrics.hpp"
#include "cardiomt/model.hpp"
#include "cardiomt/preprocess.hpp"

namespace cardiomt {

/// (batch, 3, slices, rows, cols) float input.
torch::Tensor input_tensor(std::span<const Sample> samples);
/// (batch, labels, slices, rows, cols) one-hot target for one phase.
torch::Tensor onehot_tensor(std::span<const Sample> samples, int phase);
torch::Tensor diagnosis_tensor(std::span<const Sample> samples);

/// Maps a network input batch to its outputs.
using Predictor = std::function<NetworkOutput(const torch::Tensor&)>;

/// Evaluation-mode, gradient-free predictor over `model`.
Predictor model_predictor(MultiTaskNet model);

struct StudyEvaluation {
  CaseDiagnosis diagnosis;
  std::array<double, kNumDiagnoses> probabilities{};
  /// Absent when the study has no ground-truth masks.
  std::optional<SegEvalResult> segmentation;
  std::int64_t slab_start = 0;
};

/// Runs one forward pass on the central slab and scores it against the
/// ground truth restricted to that slab.
StudyEvaluation evaluate_study(const Predictor& predictor, const PreparedStudy& study, std::int64_t slab_depth,
                               int num_phases);
StudyEvaluation evaluate_study(const Predictor& predictor, const CineStudy& study, const PreprocConfig& config);

struct StructureAggregate {
  double mean_dsc = 0;
  Aggregate hausdorff;
};

struct EvaluationReport {
  DiagEvalResult diagnosis;
  std::vector<StudyEvaluation> cases;
  /// aggregates[phase][structure]; empty when no case had masks.
  std::vector<std::array<StructureAggregate, 3>> aggregates;
  int cases_with_segmentation = 0;

  /// Mean DSC over all scored structures and phases.
  double macro_dsc() const;
};

EvaluationReport evaluate_all(const Predictor& predictor, std::span<const PreparedStudy> studies,
                              std::int64_t slab_depth, int num_phases);

nlohmann::json to_json(const EvaluationReport& report);
/// One row per (case, structure, phase).
void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path);

}  // namespace cardiomt
