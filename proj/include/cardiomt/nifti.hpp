#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cardiomt/volume.hpp"

namespace cardiomt::nifti {

/// A NIfTI-1 image converted to float samples. Data is stored x-fastest,
/// i.e. index = ((t * nz + z) * ny + y) * nx + x.
struct Image {
  std::array<std::int64_t, 4> dims{1, 1, 1, 1};  // nx, ny, nz, nt
  std::array<double, 3> pixdim{1.0, 1.0, 1.0};    // x, y, z in mm
  std::vector<float> data;

  std::int64_t frame_voxels() const { return dims[0] * dims[1] * dims[2]; }
};

/// Reads a single-file NIfTI-1 image (.nii or .nii.gz). Applies scl_slope /
/// scl_inter when the slope is nonzero. Throws DataError on malformed input.
Image read(const std::filesystem::path& path);

/// Writes a float32 (or uint8 when `as_labels`) single-file NIfTI-1 image.
/// Gzip compression is used when the path ends in ".gz".
void write(const std::filesystem::path& path, const Image& image, bool as_labels = false);

/// Extracts frame `t` as a (slices = nz, rows = ny, cols = nx) volume.
ImageVolume frame_volume(const Image& image, std::int64_t t = 0);
LabelVolume frame_labels(const Image& image, std::int64_t t = 0);
Spacing spacing_of(const Image& image);

Image from_volume(const ImageVolume& volume, const Spacing& spacing);
Image from_labels(const LabelVolume& labels, const Spacing& spacing);

}  // namespace cardiomt::nifti
