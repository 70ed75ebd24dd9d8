#include "cardiomt/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "cardiomt/errors.hpp"

namespace cardiomt::nifti {
namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f != nullptr) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

template <typename T>
T load(const unsigned char* p, bool swap) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

template <typename T>
void store(unsigned char* p, T value) {
  std::memcpy(p, &value, sizeof(T));
}

void read_exact(gzFile_s* f, void* dst, std::size_t bytes, const std::filesystem::path& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (bytes > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw DataError("truncated NIfTI file: " + path.string());
    out += got;
    bytes -= static_cast<std::size_t>(got);
  }
}

template <typename T>
void convert(const std::vector<unsigned char>& raw, bool swap, std::vector<float>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(load<T>(raw.data() + i * sizeof(T), swap));
  }
}

bool ends_with_gz(const std::filesystem::path& path) {
  const auto s = path.string();
  return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

}  // namespace

Image read(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open NIfTI file: " + path.string());

  std::array<unsigned char, kHeaderSize> hdr{};
  read_exact(f.get(), hdr.data(), hdr.size(), path);

  bool swap = false;
  std::int32_t sizeof_hdr = load<std::int32_t>(hdr.data(), false);
  if (sizeof_hdr != kHeaderSize) {
    swap = true;
    sizeof_hdr = load<std::int32_t>(hdr.data(), true);
    if (sizeof_hdr != kHeaderSize) throw DataError("not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(hdr.data() + 344, "n+1", 3) != 0 && std::memcmp(hdr.data() + 344, "ni1", 3) != 0) {
    throw DataError("missing NIfTI-1 magic: " + path.string());
  }
  if (std::memcmp(hdr.data() + 344, "ni1", 3) == 0) {
    throw DataError("two-file NIfTI (.hdr/.img) is not supported: " + path.string());
  }

  Image image;
  const auto ndim = load<std::int16_t>(hdr.data() + 40, swap);
  if (ndim < 1 || ndim > 7) throw DataError("bad NIfTI dimension count in " + path.string());
  for (int i = 0; i < 4; ++i) {
    const auto d = i < ndim ? load<std::int16_t>(hdr.data() + 42 + 2 * i, swap) : std::int16_t{1};
    image.dims[i] = std::max<std::int64_t>(1, d);
  }
  for (int i = 4; i < ndim; ++i) {
    if (load<std::int16_t>(hdr.data() + 42 + 2 * i, swap) > 1) {
      throw DataError("NIfTI images beyond 4 dimensions are not supported: " + path.string());
    }
  }
  for (int i = 0; i < 3; ++i) {
    const float pd = load<float>(hdr.data() + 80 + 4 * i, swap);
    image.pixdim[i] = pd > 0 ? pd : 1.0;
  }
  const auto datatype = load<std::int16_t>(hdr.data() + 70, swap);
  const float vox_offset = load<float>(hdr.data() + 108, swap);
  const float slope = load<float>(hdr.data() + 112, swap);
  const float inter = load<float>(hdr.data() + 116, swap);

  std::size_t elem = 0;
  switch (datatype) {
    case kUInt8:
    case kInt8: elem = 1; break;
    case kInt16:
    case kUInt16: elem = 2; break;
    case kInt32:
    case kUInt32:
    case kFloat32: elem = 4; break;
    case kFloat64: elem = 8; break;
    default: throw DataError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
  }

  const auto skip = static_cast<std::int64_t>(vox_offset) - kHeaderSize;
  if (skip > 0) {
    std::vector<unsigned char> ext(static_cast<std::size_t>(skip));
    read_exact(f.get(), ext.data(), ext.size(), path);
  }

  const std::int64_t count = image.dims[0] * image.dims[1] * image.dims[2] * image.dims[3];
  std::vector<unsigned char> raw(static_cast<std::size_t>(count) * elem);
  read_exact(f.get(), raw.data(), raw.size(), path);

  switch (datatype) {
    case kUInt8: convert<std::uint8_t>(raw, swap, image.data); break;
    case kInt8: convert<std::int8_t>(raw, swap, image.data); break;
    case kInt16: convert<std::int16_t>(raw, swap, image.data); break;
    case kUInt16: convert<std::uint16_t>(raw, swap, image.data); break;
    case kInt32: convert<std::int32_t>(raw, swap, image.data); break;
    case kUInt32: convert<std::uint32_t>(raw, swap, image.data); break;
    case kFloat32: convert<float>(raw, swap, image.data); break;
    case kFloat64: convert<double>(raw, swap, image.data); break;
  }
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& v : image.data) v = v * slope + inter;
  }
  return image;
}

void write(const std::filesystem::path& path, const Image& image, bool as_labels) {
  std::array<unsigned char, kVoxOffset> hdr{};
  store<std::int32_t>(hdr.data(), kHeaderSize);
  const std::int16_t ndim = image.dims[3] > 1 ? 4 : 3;
  store<std::int16_t>(hdr.data() + 40, ndim);
  for (int i = 0; i < 7; ++i) {
    const std::int64_t d = i < 4 ? image.dims[i] : 1;
    if (d > 32767) throw DataError("image extent too large for NIfTI-1");
    store<std::int16_t>(hdr.data() + 42 + 2 * i, static_cast<std::int16_t>(d));
  }
  const std::int16_t datatype = as_labels ? kUInt8 : kFloat32;
  store<std::int16_t>(hdr.data() + 70, datatype);
  store<std::int16_t>(hdr.data() + 72, as_labels ? 8 : 32);
  store<float>(hdr.data() + 76, 1.0f);  // qfac
  for (int i = 0; i < 3; ++i) store<float>(hdr.data() + 80 + 4 * i, static_cast<float>(image.pixdim[i]));
  store<float>(hdr.data() + 80 + 12, 1.0f);
  store<float>(hdr.data() + 108, static_cast<float>(kVoxOffset));
  store<float>(hdr.data() + 112, 1.0f);
  hdr[123] = 2 | 8;  // xyzt_units: mm, s
  std::memcpy(hdr.data() + 344, "n+1\0", 4);

  std::vector<unsigned char> payload;
  if (as_labels) {
    payload.resize(image.data.size());
    for (std::size_t i = 0; i < image.data.size(); ++i) {
      payload[i] = static_cast<unsigned char>(std::lround(image.data[i]));
    }
  } else {
    payload.resize(image.data.size() * sizeof(float));
    std::memcpy(payload.data(), image.data.data(), payload.size());
  }

  if (ends_with_gz(path)) {
    GzHandle f(gzopen(path.c_str(), "wb6"));
    if (!f) throw DataError("cannot write " + path.string());
    if (gzwrite(f.get(), hdr.data(), hdr.size()) != static_cast<int>(hdr.size()) ||
        (!payload.empty() && gzwrite(f.get(), payload.data(), static_cast<unsigned>(payload.size())) <= 0)) {
      throw DataError("write failed: " + path.string());
    }
  } else {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("write failed: " + path.string());
  }
}

ImageVolume frame_volume(const Image& image, std::int64_t t) {
  if (t < 0 || t >= image.dims[3]) {
    throw DataError("frame " + std::to_string(t) + " outside image with " + std::to_string(image.dims[3]) + " frames");
  }
  const auto n = image.frame_voxels();
  const auto begin = image.data.begin() + t * n;
  return ImageVolume({image.dims[2], image.dims[1], image.dims[0]}, std::vector<float>(begin, begin + n));
}

LabelVolume frame_labels(const Image& image, std::int64_t t) {
  const auto intensities = frame_volume(image, t);
  LabelVolume labels(intensities.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const long v = std::lround(intensities.data()[i]);
    if (v < 0 || v > 255) throw DataError("label value out of range in mask");
    labels.data()[i] = static_cast<std::uint8_t>(v);
  }
  return labels;
}

Spacing spacing_of(const Image& image) {
  return {image.pixdim[2], image.pixdim[1], image.pixdim[0]};
}

Image from_volume(const ImageVolume& volume, const Spacing& spacing) {
  Image image;
  image.dims = {volume.shape().cols, volume.shape().rows, volume.shape().slices, 1};
  image.pixdim = {spacing.col_mm, spacing.row_mm, spacing.slice_mm};
  image.data = volume.data();
  return image;
}

Image from_labels(const LabelVolume& labels, const Spacing& spacing) {
  Image image;
  image.dims = {labels.shape().cols, labels.shape().rows, labels.shape().slices, 1};
  image.pixdim = {spacing.col_mm, spacing.row_mm, spacing.slice_mm};
  image.data.assign(labels.data().begin(), labels.data().end());
  return image;
}

}  // namespace cardiomt::nifti
