#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cardiomt {

/// Extent of a short-axis stack, slice-major: (slices, rows, cols).
struct Shape3 {
  std::int64_t slices = 0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  std::int64_t voxels() const { return slices * rows * cols; }
  std::int64_t slice_voxels() const { return rows * cols; }
  bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& shape);

/// Physical voxel size in millimetres along (slice, row, col).
struct Spacing {
  double slice_mm = 1.0;
  double row_mm = 1.0;
  double col_mm = 1.0;

  bool positive() const { return slice_mm > 0 && row_mm > 0 && col_mm > 0; }
  bool operator==(const Spacing&) const = default;
};

/// Dense 3D array with column index varying fastest (same memory order as
/// a NIfTI x/y/z volume read with x = col, y = row, z = slice).
template <typename T>
class Volume {
 public:
  Volume() = default;
  explicit Volume(Shape3 shape, T fill = T{})
      : shape_(shape), data_(static_cast<std::size_t>(shape.voxels()), fill) {
    if (shape.slices < 0 || shape.rows < 0 || shape.cols < 0) {
      throw std::invalid_argument("negative volume extent");
    }
  }
  Volume(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape.voxels()) {
      throw std::invalid_argument("volume data size does not match shape " + to_string(shape));
    }
  }

  const Shape3& shape() const { return shape_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::int64_t z, std::int64_t r, std::int64_t c) const {
    return static_cast<std::size_t>((z * shape_.rows + r) * shape_.cols + c);
  }
  T& operator()(std::int64_t z, std::int64_t r, std::int64_t c) { return data_[index(z, r, c)]; }
  const T& operator()(std::int64_t z, std::int64_t r, std::int64_t c) const {
    return data_[index(z, r, c)];
  }

  std::span<T> slice(std::int64_t z) {
    return {data_.data() + z * shape_.slice_voxels(), static_cast<std::size_t>(shape_.slice_voxels())};
  }
  std::span<const T> slice(std::int64_t z) const {
    return {data_.data() + z * shape_.slice_voxels(), static_cast<std::size_t>(shape_.slice_voxels())};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Volume&) const = default;

 private:
  Shape3 shape_{};
  std::vector<T> data_;
};

using ImageVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

/// Copies slices [first, first + count) into a new volume.
template <typename T>
Volume<T> slice_range(const Volume<T>& v, std::int64_t first, std::int64_t count) {
  if (first < 0 || count < 0 || first + count > v.shape().slices) {
    throw std::out_of_range("slice range outside volume");
  }
  Shape3 out_shape{count, v.shape().rows, v.shape().cols};
  const auto begin = v.data().begin() + first * v.shape().slice_voxels();
  std::vector<T> data(begin, begin + out_shape.voxels());
  return Volume<T>(out_shape, std::move(data));
}

}  // namespace cardiomt
