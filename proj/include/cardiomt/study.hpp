#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cardiomt/volume.hpp"

namespace cardiomt {

/// Segmentation label coding (ACDC convention).
enum class Label : std::uint8_t { Background = 0, RV = 1, Myo = 2, LV = 3 };
inline constexpr int kNumLabels = 4;

enum class Diagnosis : int { NOR = 0, DCM = 1, HCM = 2, MINF = 3, ARV = 4 };
inline constexpr int kNumDiagnoses = 5;
inline constexpr std::array<Diagnosis, kNumDiagnoses> kAllDiagnoses{
    Diagnosis::NOR, Diagnosis::DCM, Diagnosis::HCM, Diagnosis::MINF, Diagnosis::ARV};

std::string_view diagnosis_name(Diagnosis d);
/// Parses an ACDC group string ("NOR", "DCM", ...). Throws DataError if unknown.
Diagnosis parse_diagnosis(std::string_view name);

/// In-plane bounding box, inclusive on both ends, in voxel indices.
struct BBox {
  std::int64_t row_min = 0;
  std::int64_t row_max = 0;
  std::int64_t col_min = 0;
  std::int64_t col_max = 0;

  std::int64_t height() const { return row_max - row_min + 1; }
  std::int64_t width() const { return col_max - col_min + 1; }
  bool operator==(const BBox&) const = default;
};

/// One patient's ED/ES acquisition with optional ground-truth masks.
struct CineStudy {
  std::string patient_id;
  ImageVolume ed_volume;
  ImageVolume es_volume;
  std::optional<LabelVolume> ed_mask;
  std::optional<LabelVolume> es_mask;
  Spacing spacing;
  Diagnosis diagnosis = Diagnosis::NOR;
  std::optional<BBox> bbox;

  bool has_masks() const { return ed_mask.has_value() && es_mask.has_value(); }
  Shape3 shape() const { return ed_volume.shape(); }
};

/// Checks the CineStudy invariants; throws DataError naming the patient.
void validate(const CineStudy& study);

/// Loads `patientXXX/` in ACDC layout: `Info.cfg` plus per-frame
/// `patientXXX_frameYY.nii[.gz]` volumes (or a `patientXXX_4d.nii[.gz]`)
/// and optional `_gt` masks. An optional `BBox: r0 r1 c0 c1` line in
/// `Info.cfg` supplies the heart box for studies without masks.
CineStudy load_acdc_study(const std::filesystem::path& study_dir);

/// Writes `study` into `parent/<patient_id>/` using the same layout.
std::filesystem::path export_study(const CineStudy& study, const std::filesystem::path& parent);

/// Subdirectories of `dataset_dir` that contain an `Info.cfg`, sorted by name.
std::vector<std::filesystem::path> list_study_dirs(const std::filesystem::path& dataset_dir);

}  // namespace cardiomt
