#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cardiomt/study.hpp"
#include "cardiomt/volume.hpp"

namespace cardiomt {

/// Which cardiac phases supervise the segmentation branch.
enum class SegSupervision { EdOnly, EdAndEs };

struct PreprocConfig {
  double target_in_plane_spacing_mm = 1.0;
  std::int64_t crop_rows = 128;
  std::int64_t crop_cols = 128;
  double crop_margin_mm = 5.0;
  std::int64_t slab_depth = 6;
  double normalization_epsilon = 1e-6;
  bool normalize = true;
  SegSupervision supervision = SegSupervision::EdAndEs;

  int num_phases() const { return supervision == SegSupervision::EdAndEs ? 2 : 1; }
  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Network input channels in (ED, S = ED - ES, ES) order.
using Channels = std::array<ImageVolume, 3>;

/// A study after resampling, cropping and channel composition.
struct PreparedStudy {
  std::string patient_id;
  Diagnosis diagnosis = Diagnosis::NOR;
  Channels channels;
  /// Ground-truth masks at the prepared resolution, ordered (ED, ES); empty
  /// when the source study has no masks.
  std::vector<LabelVolume> masks;
  Spacing spacing;

  std::int64_t slices() const { return channels[0].shape().slices; }
};

/// A slab of consecutive slices ready for the network.
struct Sample {
  Channels input;
  /// One label map per supervised phase (ED first); empty without ground truth.
  std::vector<LabelVolume> seg_labels;
  int diag_target = 0;
  std::string patient_id;
  std::int64_t slab_start = 0;
};

std::int64_t resampled_extent(std::int64_t n, double spacing_mm, double target_mm);

/// Bilinear in-plane resampling; the slice axis is left untouched. Voxel
/// centres are aligned so that both grids cover the same physical extent.
std::pair<ImageVolume, Spacing> resample_in_plane(const ImageVolume& volume, const Spacing& spacing, double target_mm);
/// Nearest-neighbour variant for label maps.
std::pair<LabelVolume, Spacing> resample_labels_in_plane(const LabelVolume& labels, const Spacing& spacing,
                                                         double target_mm);

/// Tightest in-plane box around all nonzero voxels. Throws DataError on an
/// all-zero mask.
BBox bbox_from_mask(const LabelVolume& mask);
/// Union box over several masks (e.g. ED and ES).
BBox bbox_from_masks(std::span<const LabelVolume> masks);

/// Crops a config.crop_rows x config.crop_cols window centred on the bbox
/// centre, zero-padding outside the volume.
ImageVolume crop_around_bbox(const ImageVolume& volume, const std::optional<BBox>& bbox, const PreprocConfig& config);
LabelVolume crop_labels_around_bbox(const LabelVolume& labels, const std::optional<BBox>& bbox,
                                    const PreprocConfig& config);

/// Standardizes every slice independently. Slices whose standard deviation
/// is below `epsilon` are only shifted to zero mean.
ImageVolume normalize_slices(const ImageVolume& volume, double epsilon);

/// Builds (ED, ED - ES, ES). The subtraction uses raw intensities; channels
/// are normalized afterwards when config.normalize is set.
Channels compose_channels(const ImageVolume& ed, const ImageVolume& es, const PreprocConfig& config);

/// Full pipeline for one study: resample, crop around the heart, compose.
PreparedStudy prepare_study(const CineStudy& study, const PreprocConfig& config);

/// Draws `slab_depth` consecutive slices with a uniformly random start.
Sample sample_slab(const PreparedStudy& study, std::int64_t slab_depth, std::mt19937_64& rng,
                   int num_phases = 2);
/// The central slab; for an odd leftover the lower start index wins.
Sample center_slab(const PreparedStudy& study, std::int64_t slab_depth, int num_phases = 2);
std::int64_t center_slab_start(std::int64_t slices, std::int64_t slab_depth);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per-class shuffled split with round(n * train_fraction) training items per
/// class. Returns indices into `labels`, each list sorted ascending.
Split stratified_split(std::span<const Diagnosis> labels, double train_fraction, std::uint64_t seed);

void save_prepared(const PreparedStudy& study, const std::filesystem::path& dir);
PreparedStudy load_prepared(const std::filesystem::path& dir);

}  // namespace cardiomt
