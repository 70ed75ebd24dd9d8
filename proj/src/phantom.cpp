#include "cardiomt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace {

struct Geometry {
  double lv_radius;
  double myo_thickness;
  double rv_radius;
  double lv_contraction;
  double rv_contraction;
};

constexpr double kRvOverlap = 0.3;   // RV centre sits this fraction of its radius past the epicardium
constexpr double kRvElongation = 1.3;  // RV vertical semi-axis relative to its radius

double draw(const Range& r, std::mt19937_64& rng) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

/// Half extents (left of centre, right of centre, vertical) in mm.
struct Extent {
  double left, right, vertical;
};

Extent extent_of(double lv, double myo, double rv) {
  const double outer = lv + myo;
  return {outer + kRvOverlap * rv + rv, outer, std::max(outer, kRvElongation * rv)};
}

/// Paints one phase; radii taper along the long (slice) axis as an ellipsoid.
void paint_phase(LabelVolume& mask, const Spacing& sp, double cy, double cx, double lv, double outer, double rv) {
  const auto& s = mask.shape();
  const double zc = 0.5 * static_cast<double>(s.slices - 1);
  const double semi = 0.5 * static_cast<double>(s.slices) + 0.5;
  for (std::int64_t z = 0; z < s.slices; ++z) {
    const double u = (static_cast<double>(z) - zc) / semi;
    const double taper = std::sqrt(std::max(0.0, 1.0 - u * u));
    const double r_lv = lv * taper;
    const double r_out = outer * taper;
    const double r_rv = rv * taper;
    const double rv_cx = cx - (r_out + kRvOverlap * r_rv);
    for (std::int64_t r = 0; r < s.rows; ++r) {
      const double y = (static_cast<double>(r) + 0.5) * sp.row_mm - cy;
      for (std::int64_t c = 0; c < s.cols; ++c) {
        const double x = (static_cast<double>(c) + 0.5) * sp.col_mm - cx;
        const double d2 = x * x + y * y;
        std::uint8_t label = 0;
        if (d2 <= r_lv * r_lv) {
          label = static_cast<std::uint8_t>(Label::LV);
        } else if (d2 <= r_out * r_out) {
          label = static_cast<std::uint8_t>(Label::Myo);
        } else if (r_rv > 0) {
          const double xr = (static_cast<double>(c) + 0.5) * sp.col_mm - rv_cx;
          const double yr = y / kRvElongation;
          if (xr * xr + yr * yr <= r_rv * r_rv) label = static_cast<std::uint8_t>(Label::RV);
        }
        mask(z, r, c) = label;
      }
    }
  }
}

ImageVolume render(const LabelVolume& mask, const PhantomConfig& config, std::mt19937_64& rng) {
  ImageVolume out(mask.shape());
  std::normal_distribution<double> noise(0.0, config.noise_std > 0 ? config.noise_std : 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = config.intensity[mask.data()[i]];
    if (config.noise_std > 0) v += noise(rng);
    out.data()[i] = static_cast<float>(v);
  }
  return out;
}

}  // namespace

std::array<ClassGeometry, kNumDiagnoses> PhantomConfig::default_classes() {
  const ClassGeometry nor{{5.0, 6.0}, {2.5, 3.0}, {3.5, 4.5}, {0.28, 0.34}, {0.25, 0.32}};
  ClassGeometry dcm = nor;
  dcm.lv_radius_mm = {7.0, 8.0};
  ClassGeometry hcm = nor;
  hcm.myo_thickness_mm = {4.0, 4.8};
  ClassGeometry minf = nor;
  minf.lv_contraction = {0.08, 0.14};
  ClassGeometry arv = nor;
  arv.rv_radius_mm = {6.5, 7.5};
  arv.rv_contraction = {0.05, 0.12};
  return {nor, dcm, hcm, minf, arv};
}

void PhantomConfig::validate() const {
  if (grid.slices < 1 || grid.rows < 1 || grid.cols < 1) throw ConfigError("phantom grid must be positive");
  if (!spacing.positive()) throw ConfigError("phantom spacing must be positive");
  if (noise_std < 0) throw ConfigError("phantom noise_std must be >= 0");
  if (center_jitter_mm < 0) throw ConfigError("phantom center_jitter_mm must be >= 0");
  double width = 0, height = 0;
  for (const auto& g : classes) {
    for (const auto* r : {&g.lv_radius_mm, &g.myo_thickness_mm, &g.rv_radius_mm, &g.lv_contraction, &g.rv_contraction}) {
      if (r->lo < 0 || r->hi < r->lo) throw ConfigError("phantom geometry range must satisfy 0 <= lo <= hi");
    }
    if (g.lv_contraction.hi >= 1 || g.rv_contraction.hi >= 1) throw ConfigError("phantom contraction must be < 1");
    const auto e = extent_of(g.lv_radius_mm.hi, g.myo_thickness_mm.hi, g.rv_radius_mm.hi);
    width = std::max(width, e.left + e.right);
    height = std::max(height, 2 * e.vertical);
  }
  const double avail_w = static_cast<double>(grid.cols - 2) * spacing.col_mm - 2 * center_jitter_mm;
  const double avail_h = static_cast<double>(grid.rows - 2) * spacing.row_mm - 2 * center_jitter_mm;
  if (width > avail_w || height > avail_h) {
    throw ConfigError("phantom grid " + to_string(grid) + " is too small for the largest class geometry (" +
                      std::to_string(width) + " x " + std::to_string(height) + " mm)");
  }
}

CineStudy generate_phantom(Diagnosis label, const PhantomConfig& config, std::mt19937_64& rng) {
  config.validate();
  const auto& ranges = config.classes.at(static_cast<std::size_t>(label));
  const Geometry g{draw(ranges.lv_radius_mm, rng), draw(ranges.myo_thickness_mm, rng), draw(ranges.rv_radius_mm, rng),
                   draw(ranges.lv_contraction, rng), draw(ranges.rv_contraction, rng)};

  // Centre the ED heart box in the grid, then jitter.
  const auto e = extent_of(g.lv_radius, g.myo_thickness, g.rv_radius);
  std::uniform_real_distribution<double> jitter(-config.center_jitter_mm, config.center_jitter_mm);
  const double cx = 0.5 * static_cast<double>(config.grid.cols) * config.spacing.col_mm + 0.5 * (e.left - e.right) +
                    jitter(rng);
  const double cy = 0.5 * static_cast<double>(config.grid.rows) * config.spacing.row_mm + jitter(rng);

  const double outer_ed = g.lv_radius + g.myo_thickness;
  const double lv_es = g.lv_radius * (1 - g.lv_contraction);
  // Wall area is conserved, so the myocardium thickens as the cavity shrinks.
  const double outer_es = std::sqrt(lv_es * lv_es + outer_ed * outer_ed - g.lv_radius * g.lv_radius);
  const double rv_es = g.rv_radius * (1 - g.rv_contraction);

  CineStudy study;
  study.diagnosis = label;
  study.spacing = config.spacing;
  LabelVolume ed(config.grid), es(config.grid);
  paint_phase(ed, config.spacing, cy, cx, g.lv_radius, outer_ed, g.rv_radius);
  paint_phase(es, config.spacing, cy, cx, lv_es, outer_es, rv_es);
  study.ed_volume = render(ed, config, rng);
  study.es_volume = render(es, config, rng);
  study.ed_mask = std::move(ed);
  study.es_mask = std::move(es);
  return study;
}

std::vector<CineStudy> generate_phantom_dataset(int count, const PhantomConfig& config) {
  if (count < 1) throw ConfigError("phantom count must be positive");
  std::vector<CineStudy> studies;
  studies.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    // Each study gets its own stream so that study i is independent of count.
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    auto study = generate_phantom(kAllDiagnoses[static_cast<std::size_t>(i % kNumDiagnoses)], config, rng);
    char id[32];
    std::snprintf(id, sizeof id, "patient%03d", i + 1);
    study.patient_id = id;
    studies.push_back(std::move(study));
  }
  return studies;
}

}  // namespace cardiomt
