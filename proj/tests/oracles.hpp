#pragma once

// Exhaustive reference implementations for the metric tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cardiomt/volume.hpp"

namespace oracle {

inline double dsc(const cardiomt::LabelVolume& a, const cardiomt::LabelVolume& b, std::uint8_t label) {
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i] == label, y = b.data()[i] == label;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

struct Voxel {
  std::int64_t z, r, c;
};

inline std::vector<Voxel> boundary(const cardiomt::LabelVolume& v, std::uint8_t label) {
  const auto& s = v.shape();
  std::vector<Voxel> out;
  for (std::int64_t z = 0; z < s.slices; ++z)
    for (std::int64_t r = 0; r < s.rows; ++r)
      for (std::int64_t c = 0; c < s.cols; ++c) {
        if (v(z, r, c) != label) continue;
        bool edge = false;
        const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& o : d) {
          const auto zz = z + o[0], rr = r + o[1], cc = c + o[2];
          if (zz < 0 || rr < 0 || cc < 0 || zz >= s.slices || rr >= s.rows || cc >= s.cols || v(zz, rr, cc) != label) {
            edge = true;
          }
        }
        if (edge) out.push_back({z, r, c});
      }
  return out;
}

inline double dist(const Voxel& a, const Voxel& b, const cardiomt::Spacing& sp) {
  const double dz = (a.z - b.z) * sp.slice_mm, dr = (a.r - b.r) * sp.row_mm, dc = (a.c - b.c) * sp.col_mm;
  return std::sqrt(dz * dz + dr * dr + dc * dc);
}

inline double directed(const std::vector<Voxel>& from, const std::vector<Voxel>& to, const cardiomt::Spacing& sp) {
  double worst = 0;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) best = std::min(best, dist(a, b, sp));
    worst = std::max(worst, best);
  }
  return worst;
}

inline std::optional<double> hausdorff(const cardiomt::LabelVolume& a, const cardiomt::LabelVolume& b,
                                       std::uint8_t label, const cardiomt::Spacing& sp) {
  const auto ba = boundary(a, label), bb = boundary(b, label);
  if (ba.empty() || bb.empty()) return std::nullopt;
  return std::max(directed(ba, bb, sp), directed(bb, ba, sp));
}

}  // namespace oracle
