#include "cardiomt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "cardiomt/errors.hpp"
#include "cardiomt/nifti.hpp"

namespace cardiomt {
namespace fs = std::filesystem;

namespace {

double source_coordinate(std::int64_t j, double spacing_mm, double target_mm) {
  return (static_cast<double>(j) + 0.5) * target_mm / spacing_mm - 0.5;
}

void check_resample_args(const Spacing& spacing, double target_mm) {
  if (!(target_mm > 0)) throw ConfigError("resampling target spacing must be positive");
  if (!spacing.positive()) throw DataError("volume spacing must be positive");
}

template <typename T>
Volume<T> crop_impl(const Volume<T>& volume, const std::optional<BBox>& bbox, const PreprocConfig& config) {
  if (!bbox) {
    throw DataError("a heart bounding box is required for cropping; derive it with bbox_from_mask or "
                    "supply 'BBox: r0 r1 c0 c1' in Info.cfg");
  }
  const auto margin = static_cast<std::int64_t>(std::ceil(config.crop_margin_mm / config.target_in_plane_spacing_mm));
  if (bbox->height() + 2 * margin > config.crop_rows || bbox->width() + 2 * margin > config.crop_cols) {
    throw ConfigError("crop " + std::to_string(config.crop_rows) + "x" + std::to_string(config.crop_cols) +
                      " cannot hold a " + std::to_string(bbox->height()) + "x" + std::to_string(bbox->width()) +
                      " heart box plus margin");
  }
  const std::int64_t r0 = (bbox->row_min + bbox->row_max + 1) / 2 - config.crop_rows / 2;
  const std::int64_t c0 = (bbox->col_min + bbox->col_max + 1) / 2 - config.crop_cols / 2;
  const auto& in = volume.shape();
  Volume<T> out({in.slices, config.crop_rows, config.crop_cols});
  for (std::int64_t z = 0; z < in.slices; ++z) {
    for (std::int64_t r = 0; r < config.crop_rows; ++r) {
      const auto sr = r0 + r;
      if (sr < 0 || sr >= in.rows) continue;
      for (std::int64_t c = 0; c < config.crop_cols; ++c) {
        const auto sc = c0 + c;
        if (sc < 0 || sc >= in.cols) continue;
        out(z, r, c) = volume(z, sr, sc);
      }
    }
  }
  return out;
}

Sample make_sample(const PreparedStudy& study, std::int64_t start, std::int64_t depth, int num_phases) {
  Sample s;
  for (std::size_t ch = 0; ch < 3; ++ch) s.input[ch] = slice_range(study.channels[ch], start, depth);
  for (int ph = 0; ph < num_phases && ph < static_cast<int>(study.masks.size()); ++ph) {
    s.seg_labels.push_back(slice_range(study.masks[ph], start, depth));
  }
  s.diag_target = static_cast<int>(study.diagnosis);
  s.patient_id = study.patient_id;
  s.slab_start = start;
  return s;
}

void check_depth(const PreparedStudy& study, std::int64_t depth) {
  if (depth < 1) throw ConfigError("slab depth must be positive");
  if (study.slices() < depth) {
    throw DataError(study.patient_id + ": " + std::to_string(study.slices()) + " slices, fewer than slab depth " +
                    std::to_string(depth));
  }
}

}  // namespace

void PreprocConfig::validate() const {
  if (!(target_in_plane_spacing_mm > 0)) throw ConfigError("preproc.target_in_plane_spacing_mm must be > 0");
  if (crop_rows <= 0 || crop_cols <= 0 || crop_rows % 2 != 0 || crop_cols % 2 != 0) {
    throw ConfigError("preproc.crop_rows/crop_cols must be even positive integers");
  }
  if (crop_margin_mm < 0) throw ConfigError("preproc.crop_margin_mm must be >= 0");
  if (slab_depth <= 0) throw ConfigError("preproc.slab_depth must be positive");
  if (!(normalization_epsilon > 0)) throw ConfigError("preproc.normalization_epsilon must be > 0");
}

std::int64_t resampled_extent(std::int64_t n, double spacing_mm, double target_mm) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(n) * spacing_mm / target_mm));
}

std::pair<ImageVolume, Spacing> resample_in_plane(const ImageVolume& volume, const Spacing& spacing,
                                                  double target_mm) {
  check_resample_args(spacing, target_mm);
  const auto& in = volume.shape();
  const Spacing out_spacing{spacing.slice_mm, target_mm, target_mm};
  if (spacing.row_mm == target_mm && spacing.col_mm == target_mm) return {volume, out_spacing};

  const Shape3 out_shape{in.slices, resampled_extent(in.rows, spacing.row_mm, target_mm),
                         resampled_extent(in.cols, spacing.col_mm, target_mm)};
  // Precompute the two source taps and weights along each axis.
  struct Tap {
    std::int64_t lo, hi;
    double w;
  };
  auto taps = [target_mm](std::int64_t n_out, std::int64_t n_in, double s) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (std::int64_t j = 0; j < n_out; ++j) {
      const double x = std::clamp(source_coordinate(j, s, target_mm), 0.0, static_cast<double>(n_in - 1));
      const auto lo = static_cast<std::int64_t>(std::floor(x));
      const auto hi = std::min(lo + 1, n_in - 1);
      t[static_cast<std::size_t>(j)] = {lo, hi, x - static_cast<double>(lo)};
    }
    return t;
  };
  const auto rt = taps(out_shape.rows, in.rows, spacing.row_mm);
  const auto ct = taps(out_shape.cols, in.cols, spacing.col_mm);

  ImageVolume out(out_shape);
  for (std::int64_t z = 0; z < in.slices; ++z) {
    for (std::int64_t r = 0; r < out_shape.rows; ++r) {
      const auto& a = rt[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < out_shape.cols; ++c) {
        const auto& b = ct[static_cast<std::size_t>(c)];
        const double top = (1 - b.w) * volume(z, a.lo, b.lo) + b.w * volume(z, a.lo, b.hi);
        const double bottom = (1 - b.w) * volume(z, a.hi, b.lo) + b.w * volume(z, a.hi, b.hi);
        out(z, r, c) = static_cast<float>((1 - a.w) * top + a.w * bottom);
      }
    }
  }
  return {std::move(out), out_spacing};
}

std::pair<LabelVolume, Spacing> resample_labels_in_plane(const LabelVolume& labels, const Spacing& spacing,
                                                         double target_mm) {
  check_resample_args(spacing, target_mm);
  const auto& in = labels.shape();
  const Spacing out_spacing{spacing.slice_mm, target_mm, target_mm};
  const Shape3 out_shape{in.slices, resampled_extent(in.rows, spacing.row_mm, target_mm),
                         resampled_extent(in.cols, spacing.col_mm, target_mm)};
  auto nearest = [target_mm](std::int64_t n_out, std::int64_t n_in, double s) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n_out));
    for (std::int64_t j = 0; j < n_out; ++j) {
      const double x = source_coordinate(j, s, target_mm);
      idx[static_cast<std::size_t>(j)] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(x + 0.5)), 0, n_in - 1);
    }
    return idx;
  };
  const auto ri = nearest(out_shape.rows, in.rows, spacing.row_mm);
  const auto ci = nearest(out_shape.cols, in.cols, spacing.col_mm);
  LabelVolume out(out_shape);
  for (std::int64_t z = 0; z < in.slices; ++z) {
    for (std::int64_t r = 0; r < out_shape.rows; ++r) {
      for (std::int64_t c = 0; c < out_shape.cols; ++c) {
        out(z, r, c) = labels(z, ri[static_cast<std::size_t>(r)], ci[static_cast<std::size_t>(c)]);
      }
    }
  }
  return {std::move(out), out_spacing};
}

BBox bbox_from_masks(std::span<const LabelVolume> masks) {
  std::int64_t rmin = INT64_MAX, rmax = -1, cmin = INT64_MAX, cmax = -1;
  for (const auto& mask : masks) {
    const auto& s = mask.shape();
    for (std::int64_t z = 0; z < s.slices; ++z) {
      for (std::int64_t r = 0; r < s.rows; ++r) {
        for (std::int64_t c = 0; c < s.cols; ++c) {
          if (mask(z, r, c) == 0) continue;
          rmin = std::min(rmin, r);
          rmax = std::max(rmax, r);
          cmin = std::min(cmin, c);
          cmax = std::max(cmax, c);
        }
      }
    }
  }
  if (rmax < 0) throw DataError("cannot derive a bounding box from an all-background mask");
  return {rmin, rmax, cmin, cmax};
}

BBox bbox_from_mask(const LabelVolume& mask) { return bbox_from_masks(std::span(&mask, 1)); }

ImageVolume crop_around_bbox(const ImageVolume& volume, const std::optional<BBox>& bbox,
                             const PreprocConfig& config) {
  return crop_impl(volume, bbox, config);
}

LabelVolume crop_labels_around_bbox(const LabelVolume& labels, const std::optional<BBox>& bbox,
                                    const PreprocConfig& config) {
  return crop_impl(labels, bbox, config);
}

ImageVolume normalize_slices(const ImageVolume& volume, double epsilon) {
  ImageVolume out = volume;
  for (std::int64_t z = 0; z < volume.shape().slices; ++z) {
    auto s = out.slice(z);
    if (s.empty()) continue;
    double mean = 0;
    for (float v : s) mean += v;
    mean /= static_cast<double>(s.size());
    double var = 0;
    for (float v : s) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(s.size()));
    const double scale = sd < epsilon ? 1.0 : 1.0 / sd;
    for (float& v : s) v = static_cast<float>((v - mean) * scale);
  }
  return out;
}

Channels compose_channels(const ImageVolume& ed, const ImageVolume& es, const PreprocConfig& config) {
  if (!(ed.shape() == es.shape())) {
    throw DataError("ED/ES shape mismatch " + to_string(ed.shape()) + " vs " + to_string(es.shape()));
  }
  ImageVolume sub(ed.shape());
  for (std::size_t i = 0; i < sub.size(); ++i) sub.data()[i] = ed.data()[i] - es.data()[i];
  if (!config.normalize) return {ed, std::move(sub), es};
  const double eps = config.normalization_epsilon;
  return {normalize_slices(ed, eps), normalize_slices(sub, eps), normalize_slices(es, eps)};
}

PreparedStudy prepare_study(const CineStudy& study, const PreprocConfig& config) {
  config.validate();
  validate(study);
  const double t = config.target_in_plane_spacing_mm;
  auto [ed, spacing] = resample_in_plane(study.ed_volume, study.spacing, t);
  auto es = resample_in_plane(study.es_volume, study.spacing, t).first;

  std::vector<LabelVolume> masks;
  std::optional<BBox> box;
  if (study.has_masks()) {
    masks.push_back(resample_labels_in_plane(*study.ed_mask, study.spacing, t).first);
    masks.push_back(resample_labels_in_plane(*study.es_mask, study.spacing, t).first);
    box = bbox_from_masks(masks);
  } else if (study.bbox) {
    // Map a box given on the acquisition grid onto the resampled grid.
    const auto& b = *study.bbox;
    auto lo = [t](std::int64_t i, double s) { return static_cast<std::int64_t>(std::floor((i + 0.5) * s / t - 0.5)); };
    auto hi = [t](std::int64_t i, double s) { return static_cast<std::int64_t>(std::ceil((i + 0.5) * s / t - 0.5)); };
    box = BBox{lo(b.row_min, study.spacing.row_mm), hi(b.row_max, study.spacing.row_mm),
               lo(b.col_min, study.spacing.col_mm), hi(b.col_max, study.spacing.col_mm)};
  }

  PreparedStudy out;
  out.patient_id = study.patient_id;
  out.diagnosis = study.diagnosis;
  out.spacing = spacing;
  try {
    ed = crop_around_bbox(ed, box, config);
    es = crop_around_bbox(es, box, config);
    for (auto& m : masks) m = crop_labels_around_bbox(m, box, config);
  } catch (const std::exception& e) {
    throw DataError(study.patient_id + ": " + e.what());
  }
  out.channels = compose_channels(ed, es, config);
  out.masks = std::move(masks);
  return out;
}

std::int64_t center_slab_start(std::int64_t slices, std::int64_t slab_depth) { return (slices - slab_depth) / 2; }

Sample sample_slab(const PreparedStudy& study, std::int64_t slab_depth, std::mt19937_64& rng, int num_phases) {
  check_depth(study, slab_depth);
  std::uniform_int_distribution<std::int64_t> start(0, study.slices() - slab_depth);
  return make_sample(study, start(rng), slab_depth, num_phases);
}

Sample center_slab(const PreparedStudy& study, std::int64_t slab_depth, int num_phases) {
  check_depth(study, slab_depth);
  return make_sample(study, center_slab_start(study.slices(), slab_depth), slab_depth, num_phases);
}

Split stratified_split(std::span<const Diagnosis> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("split train fraction must be in (0,1)");
  std::map<Diagnosis, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  const double minority = std::min(train_fraction, 1 - train_fraction);
  const auto min_members = static_cast<std::size_t>(std::ceil(1.0 / minority - 1e-9));
  std::mt19937_64 rng(seed);
  Split split;
  for (auto& [diagnosis, members] : by_class) {
    if (members.size() < min_members) {
      throw DataError("class " + std::string(diagnosis_name(diagnosis)) + " has " + std::to_string(members.size()) +
                      " studies; at least " + std::to_string(min_members) + " are needed for the split");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * train_fraction));
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.insert(split.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

void save_prepared(const PreparedStudy& study, const fs::path& dir) {
  fs::create_directories(dir);
  nifti::Image input;
  const auto& s = study.channels[0].shape();
  input.dims = {s.cols, s.rows, s.slices, 3};
  input.pixdim = {study.spacing.col_mm, study.spacing.row_mm, study.spacing.slice_mm};
  for (const auto& ch : study.channels) input.data.insert(input.data.end(), ch.data().begin(), ch.data().end());
  nifti::write(dir / "input.nii.gz", input);
  const char* names[] = {"ed_gt.nii.gz", "es_gt.nii.gz"};
  for (std::size_t i = 0; i < study.masks.size() && i < 2; ++i) {
    nifti::write(dir / names[i], nifti::from_labels(study.masks[i], study.spacing), true);
  }
  nlohmann::json meta{{"patient_id", study.patient_id},
                      {"group", diagnosis_name(study.diagnosis)},
                      {"spacing_mm", {study.spacing.slice_mm, study.spacing.row_mm, study.spacing.col_mm}},
                      {"has_masks", !study.masks.empty()}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

PreparedStudy load_prepared(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw DataError("prepared study metadata missing: " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(in);
  PreparedStudy study;
  study.patient_id = meta.at("patient_id").get<std::string>();
  study.diagnosis = parse_diagnosis(meta.at("group").get<std::string>());
  const auto sp = meta.at("spacing_mm");
  study.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
  const auto input = nifti::read(dir / "input.nii.gz");
  if (input.dims[3] != 3) throw DataError(dir.string() + ": prepared input must have 3 channels");
  for (std::int64_t ch = 0; ch < 3; ++ch) study.channels[static_cast<std::size_t>(ch)] = nifti::frame_volume(input, ch);
  if (meta.value("has_masks", false)) {
    study.masks.push_back(nifti::frame_labels(nifti::read(dir / "ed_gt.nii.gz")));
    study.masks.push_back(nifti::frame_labels(nifti::read(dir / "es_gt.nii.gz")));
  }
  return study;
}

}  // namespace cardiomt
