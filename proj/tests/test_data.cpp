#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cardiomt/errors.hpp"
#include "cardiomt/nifti.hpp"
#include "cardiomt/phantom.hpp"
#include "cardiomt/preprocess.hpp"
#include "cardiomt/study.hpp"
#include "test_util.hpp"

using namespace cardiomt;
namespace fs = std::filesystem;

namespace {

PhantomConfig quiet_phantom() {
  PhantomConfig c;
  c.noise_std = 0;
  return c;
}

std::int64_t count_label(const LabelVolume& v, std::int64_t z, Label label) {
  std::int64_t n = 0;
  for (auto x : v.slice(z)) n += x == static_cast<std::uint8_t>(label);
  return n;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("volume indexing is column fastest and slice_range copies slices") {
  ImageVolume v({3, 2, 4});
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(i);
  CHECK(v(1, 1, 2) == doctest::Approx(1 * 8 + 1 * 4 + 2));
  const auto s = slice_range(v, 1, 2);
  CHECK(s.shape() == Shape3{2, 2, 4});
  CHECK(s(0, 0, 0) == 8.0f);
  CHECK_THROWS_AS(slice_range(v, 2, 2), std::out_of_range);
}

TEST_CASE("nifti write/read round trip, plain and gzip") {
  testutil::TempDir tmp;
  ImageVolume v({3, 5, 7});
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0, 1);
  for (auto& x : v.data()) x = n(rng);
  const Spacing sp{8.0, 1.5, 1.25};
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    const auto path = tmp.path() / name;
    nifti::write(path, nifti::from_volume(v, sp));
    const auto back = nifti::read(path);
    CHECK(nifti::frame_volume(back) == v);
    CHECK(nifti::spacing_of(back) == sp);
  }
  LabelVolume m({2, 3, 4});
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<std::uint8_t>(i % 4);
  nifti::write(tmp.path() / "m.nii.gz", nifti::from_labels(m, sp), true);
  CHECK(nifti::frame_labels(nifti::read(tmp.path() / "m.nii.gz")) == m);
}

TEST_CASE("nifti rejects garbage") {
  testutil::TempDir tmp;
  std::ofstream(tmp.path() / "bad.nii") << "not a nifti file";
  CHECK_THROWS_AS(nifti::read(tmp.path() / "bad.nii"), DataError);
  CHECK_THROWS_AS(nifti::read(tmp.path() / "missing.nii"), DataError);
}

TEST_CASE("diagnosis names parse and unknown groups fail") {
  for (auto d : kAllDiagnoses) CHECK(parse_diagnosis(diagnosis_name(d)) == d);
  CHECK(parse_diagnosis("DCM") == Diagnosis::DCM);
  CHECK_THROWS_AS(parse_diagnosis("XYZ"), DataError);
}

TEST_CASE("phantom export then load round-trips field for field") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(11);
  auto study = generate_phantom(Diagnosis::HCM, PhantomConfig{}, rng);
  study.patient_id = "patient042";
  study.bbox = BBox{3, 20, 4, 25};
  const auto dir = export_study(study, tmp.path());
  const auto back = load_acdc_study(dir);
  CHECK(back.patient_id == study.patient_id);
  CHECK(back.diagnosis == study.diagnosis);
  CHECK(back.spacing == study.spacing);
  CHECK(back.ed_volume == study.ed_volume);
  CHECK(back.es_volume == study.es_volume);
  REQUIRE(back.has_masks());
  CHECK(*back.ed_mask == *study.ed_mask);
  CHECK(*back.es_mask == *study.es_mask);
  REQUIRE(back.bbox.has_value());
  CHECK(*back.bbox == *study.bbox);
}

TEST_CASE("ACDC loader errors") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(1);
  auto study = generate_phantom(Diagnosis::NOR, PhantomConfig{}, rng);
  study.patient_id = "patient001";
  const auto dir = export_study(study, tmp.path());

  SUBCASE("missing metadata") {
    fs::remove(dir / "Info.cfg");
    CHECK_THROWS_AS(load_acdc_study(dir), DataError);
  }
  SUBCASE("unknown group") {
    std::ofstream(dir / "Info.cfg") << "ED: 1\nES: 2\nGroup: FOO\n";
    CHECK_THROWS_AS(load_acdc_study(dir), DataError);
  }
  SUBCASE("mask shape mismatch names the patient") {
    LabelVolume wrong({2, 2, 2});
    nifti::write(dir / "patient001_frame01_gt.nii.gz", nifti::from_labels(wrong, study.spacing), true);
    try {
      load_acdc_study(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("patient001") != std::string::npos);
    }
  }
  SUBCASE("masks absent is test-set mode") {
    fs::remove(dir / "patient001_frame01_gt.nii.gz");
    fs::remove(dir / "patient001_frame02_gt.nii.gz");
    CHECK_FALSE(load_acdc_study(dir).has_masks());
  }
}

TEST_CASE("bilinear resampling of a ramp matches the centre-aligned mapping") {
  // f(r, c) = 2r + 3c is reproduced exactly by bilinear interpolation
  // wherever the source coordinate is inside the grid.
  ImageVolume v({2, 10, 12});
  for (std::int64_t z = 0; z < 2; ++z)
    for (std::int64_t r = 0; r < 10; ++r)
      for (std::int64_t c = 0; c < 12; ++c) v(z, r, c) = static_cast<float>(2 * r + 3 * c);
  const Spacing sp{5.0, 1.25, 1.5};
  const double t = 1.0;
  const auto [out, osp] = resample_in_plane(v, sp, t);
  CHECK(osp == Spacing{5.0, 1.0, 1.0});
  CHECK(out.shape() == Shape3{2, 13, 18});
  for (std::int64_t r = 0; r < out.shape().rows; ++r) {
    for (std::int64_t c = 0; c < out.shape().cols; ++c) {
      const double y = std::clamp((r + 0.5) * t / sp.row_mm - 0.5, 0.0, 9.0);
      const double x = std::clamp((c + 0.5) * t / sp.col_mm - 0.5, 0.0, 11.0);
      CHECK(out(1, r, c) == doctest::Approx(2 * y + 3 * x).epsilon(1e-6));
    }
  }
}

TEST_CASE("resampling to the same spacing is the identity") {
  ImageVolume v({1, 4, 4});
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(i * i);
  CHECK(resample_in_plane(v, {2.0, 1.0, 1.0}, 1.0).first == v);
}

TEST_CASE("nearest-neighbour label resampling never invents labels") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> dim(2, 9);
    LabelVolume m({2, dim(rng), dim(rng)});
    const std::vector<std::uint8_t> allowed = trial % 2 ? std::vector<std::uint8_t>{0, 3}
                                                        : std::vector<std::uint8_t>{1, 2};
    std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
    for (auto& x : m.data()) x = allowed[pick(rng)];
    std::uniform_real_distribution<double> sp(0.6, 2.0), tgt(0.5, 2.5);
    const auto out = resample_labels_in_plane(m, {3.0, sp(rng), sp(rng)}, tgt(rng)).first;
    for (auto x : out.data()) CHECK(std::find(allowed.begin(), allowed.end(), x) != allowed.end());
  }
}

TEST_CASE("bounding box equals a brute-force scan") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    LabelVolume m({3, 9, 11});
    std::bernoulli_distribution on(0.03);
    for (auto& x : m.data()) x = on(rng) ? 2 : 0;
    m(trial % 3, trial % 9, trial % 11) = 1;  // never empty
    std::int64_t rmin = 100, rmax = -1, cmin = 100, cmax = -1;
    for (std::int64_t z = 0; z < 3; ++z)
      for (std::int64_t r = 0; r < 9; ++r)
        for (std::int64_t c = 0; c < 11; ++c)
          if (m(z, r, c)) {
            rmin = std::min(rmin, r), rmax = std::max(rmax, r);
            cmin = std::min(cmin, c), cmax = std::max(cmax, c);
          }
    CHECK(bbox_from_mask(m) == BBox{rmin, rmax, cmin, cmax});
  }
  CHECK_THROWS_AS(bbox_from_mask(LabelVolume({1, 3, 3})), DataError);
}

TEST_CASE("crop centres on the box and zero-pads outside the volume") {
  ImageVolume v({1, 6, 6});
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(i + 1);
  PreprocConfig c;
  c.crop_rows = 4;
  c.crop_cols = 4;
  c.crop_margin_mm = 0;
  // Box rows 0..1, cols 4..5: centre (1, 5); window rows -1..2, cols 3..6.
  const auto out = crop_around_bbox(v, BBox{0, 1, 4, 5}, c);
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t col = 0; col < 4; ++col) {
      const auto sr = r - 1, sc = col + 3;
      const float expect = (sr < 0 || sc > 5) ? 0.0f : v(0, sr, sc);
      CHECK(out(0, r, col) == expect);
    }
  }
  c.crop_margin_mm = 2;  // box 2 wide + 2*2 margin > 4
  CHECK_THROWS_AS(crop_around_bbox(v, BBox{0, 1, 4, 5}, c), ConfigError);
  CHECK_THROWS_AS(crop_around_bbox(v, std::nullopt, c), DataError);
}

TEST_CASE("per-slice normalization: zero mean, unit std, constant slices only shifted") {
  ImageVolume v({3, 5, 5});
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-3, 7);
  for (std::int64_t z = 0; z < 2; ++z)
    for (auto& x : v.slice(z)) x = u(rng);
  for (auto& x : v.slice(2)) x = 4.5f;
  const auto n = normalize_slices(v, 1e-6);
  for (std::int64_t z = 0; z < 2; ++z) {
    double m = 0, s = 0;
    for (float x : n.slice(z)) m += x;
    m /= 25;
    for (float x : n.slice(z)) s += (x - m) * (x - m);
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(std::sqrt(s / 25) - 1) < 1e-6);
  }
  for (float x : n.slice(2)) CHECK(x == 0.0f);
}

TEST_CASE("channel composition: S = ED - ES before normalization") {
  std::mt19937_64 rng(4);
  const auto study = generate_phantom(Diagnosis::NOR, PhantomConfig{}, rng);
  PreprocConfig c;
  c.normalize = false;
  const auto ch = compose_channels(study.ed_volume, study.es_volume, c);
  for (std::size_t i = 0; i < ch[0].size(); ++i) CHECK(ch[0].data()[i] - ch[2].data()[i] == ch[1].data()[i]);
}

TEST_CASE("subtraction channel is nonzero exactly where the anatomy moves") {
  for (auto d : kAllDiagnoses) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(d) + 20);
    const auto study = generate_phantom(d, quiet_phantom(), rng);
    PreprocConfig c;
    c.normalize = false;
    const auto ch = compose_channels(study.ed_volume, study.es_volume, c);
    std::int64_t moving = 0;
    for (std::size_t i = 0; i < ch[1].size(); ++i) {
      const bool moved = study.ed_mask->data()[i] != study.es_mask->data()[i];
      moving += moved;
      CHECK((ch[1].data()[i] != 0.0f) == moved);
    }
    CHECK(moving > 0);
  }
}

TEST_CASE("noiseless phantom is segmented exactly by nearest region mean") {
  const auto cfg = quiet_phantom();
  std::mt19937_64 rng(8);
  const auto study = generate_phantom(Diagnosis::NOR, cfg, rng);
  for (std::size_t i = 0; i < study.ed_volume.size(); ++i) {
    const float v = study.ed_volume.data()[i];
    std::size_t best = 0;
    for (std::size_t l = 1; l < kNumLabels; ++l) {
      if (std::abs(v - cfg.intensity[l]) < std::abs(v - cfg.intensity[best])) best = l;
    }
    CHECK(best == study.ed_mask->data()[i]);
  }
}

TEST_CASE("phantom classes: HCM walls thicker, MINF ejects less, across 100 seeds") {
  // Equivalent-circle radii of the mid-slice LV and LV+Myo areas.
  auto thickness = [](const CineStudy& s, double px_mm2) {
    const auto z = s.shape().slices / 2;
    const double lv = count_label(*s.ed_mask, z, Label::LV) * px_mm2;
    const double myo = count_label(*s.ed_mask, z, Label::Myo) * px_mm2;
    return std::sqrt((lv + myo) / M_PI) - std::sqrt(lv / M_PI);
  };
  auto lv_ejection = [](const CineStudy& s) {
    double ed = 0, es = 0;
    for (auto x : s.ed_mask->data()) ed += x == static_cast<std::uint8_t>(Label::LV);
    for (auto x : s.es_mask->data()) es += x == static_cast<std::uint8_t>(Label::LV);
    return (ed - es) / ed;
  };
  const PhantomConfig cfg;
  const double px = cfg.spacing.row_mm * cfg.spacing.col_mm;
  double nor_thick_max = 0, hcm_thick_min = 1e9, nor_ef_min = 1, minf_ef_max = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 a(seed), b(seed + 1000), c(seed + 2000);
    const auto nor = generate_phantom(Diagnosis::NOR, cfg, a);
    const auto hcm = generate_phantom(Diagnosis::HCM, cfg, b);
    const auto minf = generate_phantom(Diagnosis::MINF, cfg, c);
    nor_thick_max = std::max(nor_thick_max, thickness(nor, px));
    hcm_thick_min = std::min(hcm_thick_min, thickness(hcm, px));
    nor_ef_min = std::min(nor_ef_min, lv_ejection(nor));
    minf_ef_max = std::max(minf_ef_max, lv_ejection(minf));
  }
  CHECK(hcm_thick_min > nor_thick_max);
  CHECK(minf_ef_max < nor_ef_min);
}

TEST_CASE("phantom grid too small is rejected") {
  PhantomConfig c;
  c.grid = {8, 12, 12};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("phantom dataset is balanced, named and independent of count") {
  const auto a = generate_phantom_dataset(10, PhantomConfig{});
  const auto b = generate_phantom_dataset(15, PhantomConfig{});
  CHECK(a[0].patient_id == "patient001");
  CHECK(a[9].patient_id == "patient010");
  for (int i = 0; i < 10; ++i) {
    CHECK(a[i].diagnosis == kAllDiagnoses[i % 5]);
    CHECK(a[i].ed_volume == b[i].ed_volume);
  }
}

TEST_CASE("prepare_study is deterministic and yields the configured crop") {
  std::mt19937_64 rng(6);
  const auto study = generate_phantom(Diagnosis::DCM, PhantomConfig{}, rng);
  PreprocConfig c;
  c.crop_rows = c.crop_cols = 32;
  c.crop_margin_mm = 1;
  const auto a = prepare_study(study, c);
  const auto b = prepare_study(study, c);
  CHECK(a.channels[0] == b.channels[0]);
  CHECK(a.channels[1] == b.channels[1]);
  CHECK(a.masks[1] == b.masks[1]);
  CHECK(a.channels[0].shape() == Shape3{8, 32, 32});
  CHECK(a.masks.size() == 2);
  // The heart must survive cropping: every label still present.
  std::set<int> labels(a.masks[0].data().begin(), a.masks[0].data().end());
  CHECK(labels == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("prepared study save/load round trip") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(6);
  PreprocConfig c;
  c.crop_rows = c.crop_cols = 32;
  c.crop_margin_mm = 1;
  const auto a = prepare_study(generate_phantom(Diagnosis::ARV, PhantomConfig{}, rng), c);
  save_prepared(a, tmp.path() / "p");
  const auto b = load_prepared(tmp.path() / "p");
  CHECK(b.patient_id == a.patient_id);
  CHECK(b.diagnosis == a.diagnosis);
  CHECK(b.spacing == a.spacing);
  for (int i = 0; i < 3; ++i) CHECK(b.channels[i] == a.channels[i]);
  CHECK((b.masks == a.masks));
}

TEST_CASE("slab starts are uniform (chi-square, 10000 draws)") {
  PreparedStudy s;
  s.patient_id = "x";
  for (auto& ch : s.channels) ch = ImageVolume({12, 2, 2});
  const std::int64_t depth = 6, starts = 7;
  std::vector<int> counts(starts, 0);
  std::mt19937_64 rng(123);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto sample = sample_slab(s, depth, rng, 0);
    REQUIRE(sample.slab_start >= 0);
    REQUIRE(sample.slab_start < starts);
    ++counts[sample.slab_start];
    CHECK(sample.input[0].shape().slices == depth);
  }
  double chi2 = 0;
  const double expected = static_cast<double>(draws) / starts;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 16.812);  // chi-square 0.99 quantile, 6 degrees of freedom
}

TEST_CASE("centre slab takes the lower start on odd leftovers") {
  CHECK(center_slab_start(8, 6) == 1);
  CHECK(center_slab_start(9, 6) == 1);
  CHECK(center_slab_start(10, 6) == 2);
  CHECK(center_slab_start(6, 6) == 0);
  PreparedStudy s;
  for (auto& ch : s.channels) ch = ImageVolume({4, 2, 2});
  CHECK_THROWS_AS(center_slab(s, 6), DataError);
}

TEST_CASE("stratified split: 20 per class gives 15/5, partition, seeded") {
  std::vector<Diagnosis> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(kAllDiagnoses[i % 5]);
  const auto a = stratified_split(labels, 0.75, 7);
  const auto b = stratified_split(labels, 0.75, 7);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.train.size() == 75);
  CHECK(a.val.size() == 25);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (auto i : a.val) CHECK(all.insert(i).second);
  CHECK(all.size() == 100);
  for (auto d : kAllDiagnoses) {
    CHECK(std::count_if(a.train.begin(), a.train.end(), [&](auto i) { return labels[i] == d; }) == 15);
  }
  CHECK(stratified_split(labels, 0.75, 8).train != a.train);
}

TEST_CASE("stratified split keeps per-class ratios within one study") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Diagnosis> labels;
    std::uniform_int_distribution<int> size(4, 17);
    std::array<int, 5> n{};
    for (int c = 0; c < 5; ++c) {
      n[c] = size(rng);
      for (int i = 0; i < n[c]; ++i) labels.push_back(kAllDiagnoses[c]);
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto s = stratified_split(labels, 0.75, trial);
    for (int c = 0; c < 5; ++c) {
      const auto t = std::count_if(s.train.begin(), s.train.end(), [&](auto i) { return labels[i] == kAllDiagnoses[c]; });
      CHECK(std::abs(static_cast<double>(t) - 0.75 * n[c]) <= 1.0);
    }
  }
}

TEST_CASE("stratified split rejects classes too small to split") {
  std::vector<Diagnosis> labels{Diagnosis::NOR, Diagnosis::NOR, Diagnosis::NOR};
  CHECK_THROWS_AS(stratified_split(labels, 0.75, 0), DataError);
}

}  // TEST_SUITE
