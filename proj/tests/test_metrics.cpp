#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include "cardiomt/metrics.hpp"
#include "oracles.hpp"

using namespace cardiomt;

namespace {

LabelVolume random_blob(std::mt19937_64& rng, Shape3 shape, double density) {
  LabelVolume v(shape);
  std::bernoulli_distribution on(density);
  std::uniform_int_distribution<int> lab(1, 3);
  for (auto& x : v.data()) x = on(rng) ? static_cast<std::uint8_t>(lab(rng)) : 0;
  return v;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("DSC matches brute force exactly") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_blob(rng, {3, 5, 7}, 0.5), b = random_blob(rng, {3, 5, 7}, 0.5);
    for (std::uint8_t l = 0; l < 4; ++l) CHECK(dsc_hard(a, b, l) == oracle::dsc(a, b, l));
  }
}

TEST_CASE("DSC edge cases") {
  LabelVolume empty({1, 2, 2}), full({1, 2, 2}, 3);
  CHECK(dsc_hard(empty, empty, 3) == 1.0);
  CHECK(dsc_hard(empty, full, 3) == 0.0);
  CHECK(dsc_hard(full, full, 3) == 1.0);
}

TEST_CASE("boundary matches 6-neighbour brute force") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto v = random_blob(rng, {4, 6, 6}, 0.7);
    const auto b = boundary_of(v, 2);
    LabelVolume expect(v.shape());
    for (const auto& p : oracle::boundary(v, 2)) expect(p.z, p.r, p.c) = 1;
    for (std::size_t k = 0; k < v.size(); ++k) CHECK((b.data()[k] != 0) == (expect.data()[k] != 0));
  }
}

TEST_CASE("distance transform equals brute-force nearest seed") {
  std::mt19937_64 rng(3);
  const Spacing sp{2.5, 1.0, 1.5};
  for (int i = 0; i < 20; ++i) {
    LabelVolume seeds({4, 5, 6});
    std::bernoulli_distribution on(0.08);
    for (auto& x : seeds.data()) x = on(rng);
    seeds(i % 4, i % 5, i % 6) = 1;
    const auto d2 = squared_distance_transform(seeds, sp);
    for (std::int64_t z = 0; z < 4; ++z)
      for (std::int64_t r = 0; r < 5; ++r)
        for (std::int64_t c = 0; c < 6; ++c) {
          double best = 1e300;
          for (std::int64_t zz = 0; zz < 4; ++zz)
            for (std::int64_t rr = 0; rr < 5; ++rr)
              for (std::int64_t cc = 0; cc < 6; ++cc)
                if (seeds(zz, rr, cc)) {
                  const double a = (z - zz) * sp.slice_mm, b = (r - rr) * sp.row_mm, e = (c - cc) * sp.col_mm;
                  best = std::min(best, a * a + b * b + e * e);
                }
          CHECK(d2(z, r, c) == doctest::Approx(best).epsilon(1e-12));
        }
  }
  CHECK(std::isinf(squared_distance_transform(LabelVolume({1, 2, 2}), sp)(0, 0, 0)));
}

TEST_CASE("Hausdorff matches brute force on anisotropic grids") {
  std::mt19937_64 rng(4);
  const Spacing sp{10.0, 1.25, 1.4};
  for (int i = 0; i < 60; ++i) {
    const auto a = random_blob(rng, {3, 7, 8}, 0.3), b = random_blob(rng, {3, 7, 8}, 0.3);
    for (std::uint8_t l = 1; l < 4; ++l) {
      const auto got = hausdorff_mm(a, b, l, sp);
      const auto want = oracle::hausdorff(a, b, l, sp);
      REQUIRE(got.has_value() == want.has_value());
      if (got) CHECK(std::abs(*got - *want) < 1e-9);
    }
  }
}

TEST_CASE("Hausdorff is symmetric, zero on identity and undefined on empty") {
  std::mt19937_64 rng(5);
  const auto a = random_blob(rng, {2, 6, 6}, 0.5), b = random_blob(rng, {2, 6, 6}, 0.5);
  const Spacing sp{3, 1, 1};
  CHECK(*hausdorff_mm(a, b, 1, sp) == doctest::Approx(*hausdorff_mm(b, a, 1, sp)));
  CHECK(*hausdorff_mm(a, a, 1, sp) == 0.0);
  CHECK_FALSE(hausdorff_mm(a, LabelVolume(a.shape()), 1, sp).has_value());
}

TEST_CASE("two single voxels: Hausdorff is their distance") {
  LabelVolume a({3, 10, 10}), b({3, 10, 10});
  a(0, 1, 1) = 3;
  b(2, 4, 5) = 3;
  const Spacing sp{5.0, 1.0, 2.0};
  CHECK(*hausdorff_mm(a, b, 3, sp) == doctest::Approx(std::sqrt(100.0 + 9.0 + 64.0)));
}

TEST_CASE("diagnostic error bookkeeping") {
  std::vector<int> truth(25), pred(25);
  for (int i = 0; i < 25; ++i) truth[i] = pred[i] = i % 5;
  pred[0] = 1;
  pred[7] = 3;
  pred[19] = 0;
  const auto r = diagnostic_error(pred, truth);
  CHECK(r.error == doctest::Approx(0.12));
  CHECK(r.accuracy == doctest::Approx(0.88));
  int total = 0;
  for (const auto& row : r.confusion)
    for (int x : row) total += x;
  CHECK(total == 25);
  CHECK(r.confusion[0][1] == 1);
  CHECK(r.confusion[4][0] == 1);
  CHECK_THROWS(diagnostic_error(std::vector<int>{1}, std::vector<int>{1, 2}));
}

TEST_CASE("segmentation scoring covers phases and structures") {
  std::mt19937_64 rng(6);
  std::vector<LabelVolume> pred{random_blob(rng, {2, 5, 5}, 0.6), random_blob(rng, {2, 5, 5}, 0.6)};
  std::vector<LabelVolume> gt{random_blob(rng, {2, 5, 5}, 0.6), random_blob(rng, {2, 5, 5}, 0.6)};
  const Spacing sp{4, 1, 1};
  const auto r = score_segmentation(pred, gt, sp);
  REQUIRE(r.phases.size() == 2);
  for (int ph = 0; ph < 2; ++ph)
    for (int s = 0; s < 3; ++s) {
      const auto l = static_cast<std::uint8_t>(kStructures[s]);
      CHECK(r.phases[ph][s].dsc == oracle::dsc(pred[ph], gt[ph], l));
    }
}

TEST_CASE("aggregate counts undefined values separately") {
  const std::vector<std::optional<double>> v{1.0, std::nullopt, 3.0, std::nullopt};
  const auto a = aggregate(v);
  CHECK(a.mean == 2.0);
  CHECK(a.defined == 2);
  CHECK(a.undefined == 2);
}

}  // TEST_SUITE
