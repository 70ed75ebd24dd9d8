#include "cardiomt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cardiomt {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_shapes(const LabelVolume& a, const LabelVolume& b) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("label map shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

/// In-place 1D squared distance transform of f sampled every `step` mm.
void edt_1d(std::vector<double>& f, double step, std::vector<double>& out, std::vector<std::int64_t>& v,
            std::vector<double>& z) {
  const auto n = static_cast<std::int64_t>(f.size());
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n + 1), 0);
  std::int64_t k = -1;
  auto pos = [step](std::int64_t i) { return static_cast<double>(i) * step; };
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const auto p = v[k];
      s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2 * pos(q) - 2 * pos(p));
      // z[0] is -inf, so this stops at k == 0.
      if (s <= z[k]) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  out.assign(static_cast<std::size_t>(n), kInf);
  if (k < 0) return;
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < pos(q)) ++j;
    const double d = pos(q) - pos(v[j]);
    out[q] = d * d + f[v[j]];
  }
}

double directed_max(const LabelVolume& from_boundary, const Volume<double>& sq_dist_to_other) {
  double worst = 0;
  for (std::size_t i = 0; i < from_boundary.size(); ++i) {
    if (from_boundary.data()[i] != 0) worst = std::max(worst, sq_dist_to_other.data()[i]);
  }
  return std::sqrt(worst);
}

}  // namespace

double dsc_hard(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t label) {
  check_shapes(pred, gt);
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.data()[i] == label;
    const bool b = gt.data()[i] == label;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

LabelVolume boundary_of(const LabelVolume& labels, std::uint8_t label) {
  const auto& s = labels.shape();
  LabelVolume out(s);
  auto inside = [&](std::int64_t z, std::int64_t r, std::int64_t c) {
    return z >= 0 && z < s.slices && r >= 0 && r < s.rows && c >= 0 && c < s.cols && labels(z, r, c) == label;
  };
  for (std::int64_t z = 0; z < s.slices; ++z) {
    for (std::int64_t r = 0; r < s.rows; ++r) {
      for (std::int64_t c = 0; c < s.cols; ++c) {
        if (labels(z, r, c) != label) continue;
        const bool interior = inside(z - 1, r, c) && inside(z + 1, r, c) && inside(z, r - 1, c) &&
                              inside(z, r + 1, c) && inside(z, r, c - 1) && inside(z, r, c + 1);
        out(z, r, c) = interior ? 0 : 1;
      }
    }
  }
  return out;
}

Volume<double> squared_distance_transform(const LabelVolume& seeds, const Spacing& spacing) {
  const auto& s = seeds.shape();
  Volume<double> d(s, kInf);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (seeds.data()[i] != 0) d.data()[i] = 0;
  }
  std::vector<double> line, out, z;
  std::vector<std::int64_t> v;
  // Columns, rows, then slices.
  for (std::int64_t sl = 0; sl < s.slices; ++sl) {
    for (std::int64_t r = 0; r < s.rows; ++r) {
      line.assign(s.cols, 0);
      for (std::int64_t c = 0; c < s.cols; ++c) line[c] = d(sl, r, c);
      edt_1d(line, spacing.col_mm, out, v, z);
      for (std::int64_t c = 0; c < s.cols; ++c) d(sl, r, c) = out[c];
    }
  }
  for (std::int64_t sl = 0; sl < s.slices; ++sl) {
    for (std::int64_t c = 0; c < s.cols; ++c) {
      line.assign(s.rows, 0);
      for (std::int64_t r = 0; r < s.rows; ++r) line[r] = d(sl, r, c);
      edt_1d(line, spacing.row_mm, out, v, z);
      for (std::int64_t r = 0; r < s.rows; ++r) d(sl, r, c) = out[r];
    }
  }
  for (std::int64_t r = 0; r < s.rows; ++r) {
    for (std::int64_t c = 0; c < s.cols; ++c) {
      line.assign(s.slices, 0);
      for (std::int64_t sl = 0; sl < s.slices; ++sl) line[sl] = d(sl, r, c);
      edt_1d(line, spacing.slice_mm, out, v, z);
      for (std::int64_t sl = 0; sl < s.slices; ++sl) d(sl, r, c) = out[sl];
    }
  }
  return d;
}

std::optional<double> hausdorff_mm(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t label,
                                   const Spacing& spacing) {
  check_shapes(pred, gt);
  if (!spacing.positive()) throw std::invalid_argument("spacing must be positive");
  const auto bp = boundary_of(pred, label);
  const auto bg = boundary_of(gt, label);
  auto any = [](const LabelVolume& v) { return std::any_of(v.data().begin(), v.data().end(), [](auto x) { return x != 0; }); };
  if (!any(bp) || !any(bg)) return std::nullopt;
  const double forward = directed_max(bp, squared_distance_transform(bg, spacing));
  const double backward = directed_max(bg, squared_distance_transform(bp, spacing));
  return std::max(forward, backward);
}

SegEvalResult score_segmentation(std::span<const LabelVolume> predictions, std::span<const LabelVolume> truths,
                                 const Spacing& spacing) {
  SegEvalResult result;
  const auto phases = std::min(predictions.size(), truths.size());
  for (std::size_t ph = 0; ph < phases; ++ph) {
    std::array<StructureScore, 3> scores;
    for (std::size_t s = 0; s < kStructures.size(); ++s) {
      const auto label = static_cast<std::uint8_t>(kStructures[s]);
      scores[s].dsc = dsc_hard(predictions[ph], truths[ph], label);
      scores[s].hausdorff_mm = hausdorff_mm(predictions[ph], truths[ph], label, spacing);
    }
    result.phases.push_back(scores);
  }
  return result;
}

DiagEvalResult diagnostic_error(std::vector<CaseDiagnosis> cases) {
  if (cases.empty()) throw std::invalid_argument("diagnostic error needs at least one case");
  DiagEvalResult r;
  int correct = 0;
  for (const auto& c : cases) {
    if (c.truth < 0 || c.truth >= kNumDiagnoses || c.predicted < 0 || c.predicted >= kNumDiagnoses) {
      throw std::out_of_range("diagnosis class index out of range");
    }
    ++r.confusion[static_cast<std::size_t>(c.truth)][static_cast<std::size_t>(c.predicted)];
    correct += c.truth == c.predicted;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(cases.size());
  r.error = 1.0 - r.accuracy;
  r.per_case = std::move(cases);
  return r;
}

DiagEvalResult diagnostic_error(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("prediction/truth length mismatch: " + std::to_string(predictions.size()) + " vs " +
                                std::to_string(truths.size()));
  }
  std::vector<CaseDiagnosis> cases;
  for (std::size_t i = 0; i < predictions.size(); ++i) cases.push_back({std::to_string(i), truths[i], predictions[i], 0.0});
  return diagnostic_error(std::move(cases));
}

Aggregate aggregate(std::span<const std::optional<double>> values) {
  Aggregate a;
  double sum = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++a.defined;
    } else {
      ++a.undefined;
    }
  }
  a.mean = a.defined > 0 ? sum / a.defined : 0.0;
  return a;
}

}  // namespace cardiomt
