// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "more/error.hpp"
#include "more/kdtree.hpp"
#include "more/parallel.hpp"

namespace more {
namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void require_same_grid(const DepthMap& a, const DepthMap& b) {
  require(a.grid == b.grid, ErrorKind::Shape, "depth maps have different grids");
}

double mean_nearest_distance(std::span<const Vec3> queries, std::span<const Vec3> support) {
  std::vector<int> ids(support.size());
  std::iota(ids.begin(), ids.end(), 0);
  const KdTree tree(support, ids);
  std::vector<double> d(queries.size());
  parallel_for(queries.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) d[i] = std::sqrt(tree.nearest(queries[i]).dist2);
  });
  double sum = 0.0;
  for (double x : d) sum += x;
  return sum / static_cast<double>(d.size());
}

}  // namespace

DepthMap depth_from_points(const PointMap& pm_world, const CameraModel& cam) {
  DepthMap out(pm_world.grid);
  for (std::size_t i = 0; i < pm_world.points.size(); ++i) {
    if (!pm_world.valid[i]) continue;
    const double z = cam.to_camera(pm_world.points[i]).z();
    if (!(z > 0.0) || !std::isfinite(z)) continue;
    out.depth[i] = z;
    out.valid[i] = 1;
  }
  return out;
}

double median_scale(const DepthMap& pred, const DepthMap& gt) {
  require_same_grid(pred, gt);
  std::vector<double> p, g;
  for (std::size_t i = 0; i < pred.depth.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    p.push_back(pred.depth[i]);
    g.push_back(gt.depth[i]);
  }
  require(!p.empty(), ErrorKind::Degenerate, "median scaling: no pixel valid in both depth maps");
  const double mp = median_of(std::move(p));
  require(mp != 0.0, ErrorKind::Degenerate, "median scaling: predicted median depth is zero");
  return median_of(std::move(g)) / mp;
}

DepthEvalResult eval_depth(const DepthMap& pred, const DepthMap& gt, double threshold, bool median_scaling) {
  require_same_grid(pred, gt);
  require(threshold > 1.0, ErrorKind::InvalidArgument, "inlier threshold must exceed 1");
  DepthEvalResult r;
  r.scale_applied = median_scaling ? median_scale(pred, gt) : 1.0;
  double rel_sum = 0.0;
  std::size_t inliers = 0;
  for (std::size_t i = 0; i < pred.depth.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i] || !(gt.depth[i] > 0.0)) continue;
    const double p = r.scale_applied * pred.depth[i];
    const double g = gt.depth[i];
    rel_sum += std::abs(p - g) / g;
    if (p > 0.0 && std::max(p / g, g / p) < threshold) ++inliers;
    ++r.n_evaluated;
  }
  require(r.n_evaluated > 0, ErrorKind::Degenerate, "depth evaluation: no pixel valid in both depth maps");
  const auto n = static_cast<double>(r.n_evaluated);
  r.abs_rel = rel_sum / n;
  r.inlier_ratio = static_cast<double>(inliers) / n;
  return r;
}

PointCloudEvalResult eval_pointcloud(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  require(!pred.empty() && !gt.empty(), ErrorKind::Degenerate, "point cloud evaluation needs two non-empty clouds");
  PointCloudEvalResult r;
  r.accuracy = mean_nearest_distance(pred, gt);
  r.completeness = mean_nearest_distance(gt, pred);
  r.overall = 0.5 * (r.accuracy + r.completeness);
  return r;
}

std::vector<Vec3> valid_points(const PointMap& pm) {
  std::vector<Vec3> out;
  out.reserve(pm.valid_count());
  for (std::size_t i = 0; i < pm.points.size(); ++i)
    if (pm.valid[i]) out.push_back(pm.points[i]);
  return out;
}

}  // namespace more
