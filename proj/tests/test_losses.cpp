#include "doctest_torch.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "cardiomt/errors.hpp"
#include "cardiomt/losses.hpp"
#include "cardiomt/metrics.hpp"

using namespace cardiomt;

namespace {

torch::Tensor random_probs(std::int64_t batch, std::int64_t labels, std::int64_t edge, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::softmax(torch::randn({batch, labels, edge, edge, edge}, gen, torch::kDouble), 1);
}

torch::Tensor random_onehot(std::int64_t batch, std::int64_t labels, std::int64_t edge, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto idx = torch::randint(labels, {batch, edge, edge, edge}, gen, torch::kLong);
  return torch::one_hot(idx, labels).permute({0, 4, 1, 2, 3}).to(torch::kDouble);
}

// Direct loop over voxels, independent of the tensor reductions.
double loop_dice(const torch::Tensor& probs, const torch::Tensor& target, std::int64_t label, double smooth) {
  const auto p = probs.select(1, label).contiguous().flatten();
  const auto t = target.select(1, label).contiguous().flatten();
  const auto* pp = p.data_ptr<double>();
  const auto* tp = t.data_ptr<double>();
  double inter = 0, sp = 0, st = 0;
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    inter += pp[i] * tp[i];
    sp += pp[i];
    st += tp[i];
  }
  return (2 * inter + smooth) / (sp + st + smooth);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("uniform logits give cross-entropy ln 5") {
  const std::vector<double> z(5, 0.37);
  for (int t = 0; t < 5; ++t) CHECK(diagnosis_loss(z, t) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  const auto logits = torch::full({3, 5}, 0.37, torch::kDouble);
  const auto targets = torch::tensor({0, 2, 4}, torch::kLong);
  CHECK(diagnosis_loss(logits, targets).item<double>() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("one-hot logit gives -ln(e / (e + 4))") {
  const std::vector<double> z{1, 0, 0, 0, 0};
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 4));
  CHECK(diagnosis_loss(z, 0) == doctest::Approx(expect).epsilon(1e-12));
  const auto t = torch::tensor({1.0, 0.0, 0.0, 0.0, 0.0}, torch::kDouble).unsqueeze(0);
  CHECK(diagnosis_loss(t, torch::tensor({0}, torch::kLong)).item<double>() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("scalar cross-entropy survives huge logits") {
  const std::vector<double> z{1000, 0, 0, 0, -1000};
  CHECK(diagnosis_loss(z, 0) == doctest::Approx(0.0));
  CHECK(std::isfinite(diagnosis_loss(z, 4)));
  CHECK(diagnosis_loss(z, 4) == doctest::Approx(2000.0));
}

TEST_CASE("soft Dice matches an explicit voxel loop") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto probs = random_probs(2, 4, 5, seed);
    const auto target = random_onehot(2, 4, 5, seed + 100);
    const auto per = soft_dice_per_label(probs, target, 1e-5);
    for (std::int64_t l = 0; l < 4; ++l) {
      const double loop = loop_dice(probs, target, l, 1e-5);
      CHECK(per[l].item<double>() == doctest::Approx(loop).epsilon(1e-12));
      CHECK(soft_dice(probs, target, l, 1e-5).item<double>() == doctest::Approx(loop).epsilon(1e-12));
    }
  }
}

TEST_CASE("soft Dice on one-hot predictions equals hard DSC") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    LabelVolume a({3, 6, 6}), b({3, 6, 6});
    for (auto& x : a.data()) x = static_cast<std::uint8_t>(lab(rng));
    for (auto& x : b.data()) x = static_cast<std::uint8_t>(lab(rng));
    auto to_onehot = [](const LabelVolume& v) {
      std::vector<std::int64_t> idx(v.data().begin(), v.data().end());
      return torch::one_hot(torch::tensor(idx).reshape({1, 3, 6, 6}), 4).permute({0, 4, 1, 2, 3}).to(torch::kDouble);
    };
    const auto per = soft_dice_per_label(to_onehot(a), to_onehot(b), 1e-12);
    for (std::uint8_t l = 0; l < 4; ++l) {
      CHECK(per[l].item<double>() == doctest::Approx(dsc_hard(a, b, l)).epsilon(1e-9));
    }
  }
}

TEST_CASE("scalar and tensor segmentation losses agree") {
  for (double p : {0.3, 1.0, 2.0}) {
    LossConfig cfg;
    cfg.p = p;
    const auto probs = random_probs(2, 4, 4, 7);
    const auto target = random_onehot(2, 4, 4, 8);
    const auto dice = soft_dice_per_label(probs, target, cfg.dice_smooth);
    std::vector<double> d(dice.data_ptr<double>(), dice.data_ptr<double>() + 4);
    CHECK(segmentation_loss(probs, target, cfg).item<double>() ==
          doctest::Approx(segmentation_loss_from_dice(d, p, cfg.dice_clamp)).epsilon(1e-12));
  }
}

TEST_CASE("perfect predictions: loss is zero for p >= 1 and (1 - clamp)^p for p < 1") {
  const auto target = random_onehot(1, 4, 4, 2);
  LossConfig cfg;
  cfg.dice_smooth = 1e-9;
  cfg.p = 2;
  CHECK(segmentation_loss(target, target, cfg).item<double>() == doctest::Approx(0.0));
  cfg.p = 0.3;
  CHECK(segmentation_loss(target, target, cfg).item<double>() ==
        doctest::Approx(std::pow(1 - cfg.dice_clamp, 0.3)).epsilon(1e-9));
}

TEST_CASE("combined loss endpoints") {
  CHECK(combined_loss(2.0, 5.0, 1.0) == 2.0);
  CHECK(combined_loss(2.0, 5.0, 0.0) == 5.0);
  CHECK(combined_loss(2.0, 5.0, 0.25) == doctest::Approx(0.5 + 3.75));
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, 1.5), ConfigError);
}

TEST_CASE("analytic gradients match finite differences") {
  for (double p : {1.0, 2.0, 0.3}) {
    CAPTURE(p);
    LossConfig cfg;
    cfg.p = p;
    cfg.alpha = 0.3;
    const auto r = loss_gradient_check(cfg);
    CHECK(r.all_finite);
    CHECK(r.coordinates_checked > 0);
    CHECK(r.max_relative_error < (p < 1 ? 1e-3 : 1e-4));
  }
}

TEST_CASE("clamped branch keeps gradients finite") {
  LossConfig cfg;
  cfg.p = 0.3;
  GradientCheckOptions opt;
  opt.saturate_background = true;
  const auto r = loss_gradient_check(cfg, opt);
  CHECK(r.all_finite);
  CHECK(r.clamped_labels >= 1);
  CHECK(r.max_relative_error < 1e-3);
}

TEST_CASE("Dice-term derivative magnitude grows with Dice only when p < 1") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 200; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 1e-6) continue;
    const double lo_p = 0.3, hi_p = 2.0;
    CHECK(std::abs(dice_term_derivative(b, lo_p, 0.9999)) > std::abs(dice_term_derivative(a, lo_p, 0.9999)));
    CHECK(std::abs(dice_term_derivative(b, hi_p, 0.9999)) < std::abs(dice_term_derivative(a, hi_p, 0.9999)));
    CHECK(dice_term_derivative(a, 1.0, 0.9999) == doctest::Approx(-1.0));
  }
  CHECK(dice_term_derivative(0.99995, 0.3, 0.9999) == 0.0);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.validate();
  c.p = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.alpha = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.dice_clamp = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("shape mismatch is rejected") {
  CHECK_THROWS(soft_dice_per_label(torch::zeros({1, 4, 2, 2, 2}), torch::zeros({1, 4, 2, 2, 3}), 1e-5));
  CHECK_THROWS(diagnosis_loss(torch::zeros({2, 5}), torch::tensor({0, 5}, torch::kLong)));
}

}  // TEST_SUITE
