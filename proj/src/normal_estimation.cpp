// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/normal_estimation.hpp"

#include <array>

#include "more/parallel.hpp"

namespace more {

NormalMap normals_from_pointmap(const PointMap& pm, const CameraModel& cam) {
  const PixelGrid& g = pm.grid;
  NormalMap out(g);
  // Counter-clockwise neighbor order in image space: right, down, left, up.
  constexpr std::array<std::array<int, 2>, 4> kOffsets{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};

  parallel_for(g.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (!pm.valid[i]) continue;
      const Pixel px = g.pixel(static_cast<int>(i));
      const Vec3& p = pm.points[i];

      std::array<Vec3, 4> d{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
      std::array<bool, 4> ok{};
      int n_valid = 0;
      for (int k = 0; k < 4; ++k) {
        const int r = px.row + kOffsets[k][0];
        const int c = px.col + kOffsets[k][1];
        if (!g.contains(r, c) || !pm.is_valid(g.index(r, c))) continue;
        d[k] = pm.points[static_cast<std::size_t>(g.index(r, c))] - p;
        ok[k] = true;
        ++n_valid;
      }
      if (n_valid < 2) continue;

      Vec3 sum = Vec3::Zero();
      for (int k = 0; k < 4; ++k) {
        const int k2 = (k + 1) % 4;
        if (ok[k] && ok[k2]) sum += d[k].cross(d[k2]);
      }
      const double norm = sum.norm();
      if (!(norm >= 1e-12)) continue;
      Vec3 n = sum / norm;
      if (n.dot(cam.center() - p) < 0.0) n = -n;
      out.normals[i] = n;
      out.valid[i] = 1;
    }
  });
  return out;
}

}  // namespace more
