#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "cardiomt/study.hpp"

namespace cardiomt {

struct Range {
  double lo = 0;
  double hi = 0;
};

/// Geometry ranges for one diagnosis class. Radii and thickness are
/// in-plane millimetres at the mid-ventricular slice; contractions are the
/// fractional radial shrink of the cavity from ED to ES.
struct ClassGeometry {
  Range lv_radius_mm;
  Range myo_thickness_mm;
  Range rv_radius_mm;
  Range lv_contraction;
  Range rv_contraction;
};

/// Synthetic short-axis phantom settings. Each class differs from NOR in the
/// clinical discriminator it is named after (DCM: LV size, HCM: wall
/// thickness, MINF: LV contraction, ARV: RV size and contraction).
struct PhantomConfig {
  Shape3 grid{8, 32, 32};
  Spacing spacing{10.0, 1.25, 1.25};
  std::array<ClassGeometry, kNumDiagnoses> classes = default_classes();
  /// Region means for BG, RV, Myo, LV.
  std::array<double, kNumLabels> intensity{0.4, 0.8, 0.15, 1.0};
  double noise_std = 0.05;
  double center_jitter_mm = 1.5;
  std::uint64_t seed = 7;

  static std::array<ClassGeometry, kNumDiagnoses> default_classes();
  /// Throws ConfigError if the grid cannot contain the largest geometry.
  void validate() const;
};

/// One synthetic study of class `label`. Masks are exact by construction;
/// intensities are region means plus Gaussian noise.
CineStudy generate_phantom(Diagnosis label, const PhantomConfig& config, std::mt19937_64& rng);

/// `count` studies with classes assigned round-robin (balanced when count is
/// a multiple of five), named patient001, patient002, ...
std::vector<CineStudy> generate_phantom_dataset(int count, const PhantomConfig& config);

}  // namespace cardiomt
