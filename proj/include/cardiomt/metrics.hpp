#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cardiomt/study.hpp"
#include "cardiomt/volume.hpp"

namespace cardiomt {

/// Scored structures, in report order.
inline constexpr std::array<Label, 3> kStructures{Label::LV, Label::RV, Label::Myo};
inline constexpr std::array<const char*, 3> kStructureNames{"LV", "RV", "Myo"};
inline constexpr std::array<const char*, 2> kPhaseNames{"ED", "ES"};

/// 2|P n G| / (|P| + |G|) over voxels equal to `label`; 1 when both are
/// empty, 0 when exactly one is.
double dsc_hard(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t label);

/// Voxels of `label` with at least one 6-neighbour outside the structure
/// (voxels on the volume border count as boundary).
LabelVolume boundary_of(const LabelVolume& labels, std::uint8_t label);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// nonzero voxel of `seeds`, via separable lower-envelope passes. Voxels are
/// +inf when `seeds` is empty.
Volume<double> squared_distance_transform(const LabelVolume& seeds, const Spacing& spacing);

/// Symmetric Hausdorff distance in mm between the boundaries of `label` in
/// the two maps; nullopt when either structure is empty.
std::optional<double> hausdorff_mm(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t label,
                                   const Spacing& spacing);

struct StructureScore {
  double dsc = 0;
  std::optional<double> hausdorff_mm;
};

/// scores[phase][structure] with phases (ED, ES) and structures kStructures.
/// Phases without a prediction stay empty.
struct SegEvalResult {
  std::vector<std::array<StructureScore, 3>> phases;
};

SegEvalResult score_segmentation(std::span<const LabelVolume> predictions, std::span<const LabelVolume> truths,
                                 const Spacing& spacing);

struct CaseDiagnosis {
  std::string patient_id;
  int truth = 0;
  int predicted = 0;
  double confidence = 0;
};

struct DiagEvalResult {
  double accuracy = 0;
  double error = 0;
  std::array<std::array<int, kNumDiagnoses>, kNumDiagnoses> confusion{};  // [truth][predicted]
  std::vector<CaseDiagnosis> per_case;
};

DiagEvalResult diagnostic_error(std::span<const int> predictions, std::span<const int> truths);
/// Same, keeping the per-case rows.
DiagEvalResult diagnostic_error(std::vector<CaseDiagnosis> cases);

/// Mean over defined values plus how many were undefined.
struct Aggregate {
  double mean = 0;
  int defined = 0;
  int undefined = 0;
};
Aggregate aggregate(std::span<const std::optional<double>> values);

}  // namespace cardiomt
