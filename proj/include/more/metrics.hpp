// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Depth and point-cloud evaluation.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "more/core_model.hpp"

namespace more {

struct DepthMap {
  PixelGrid grid;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  explicit DepthMap(PixelGrid g) : grid(g), depth(g.size(), 0.0), valid(g.size(), 0) {}
};

/// Camera-frame z of every valid world point; z <= 0 is invalid.
DepthMap depth_from_points(const PointMap& pm_world, const CameraModel& cam);

/// median(gt) / median(pred) over pixels valid in both. Throws Degenerate
/// when the overlap is empty or the predicted median is zero.
double median_scale(const DepthMap& pred, const DepthMap& gt);

struct DepthEvalResult {
  double abs_rel = 0.0;
  double inlier_ratio = 0.0;
  std::size_t n_evaluated = 0;
  double scale_applied = 1.0;
};

/// AbsRel and the fraction of pixels with max(pred/gt, gt/pred) < threshold,
/// over pixels valid in both maps with gt > 0. Throws Degenerate when no
/// pixel qualifies.
DepthEvalResult eval_depth(const DepthMap& pred, const DepthMap& gt, double threshold = 1.03,
                           bool median_scaling = false);

struct PointCloudEvalResult {
  double accuracy = 0.0;      // mean distance pred -> nearest gt
  double completeness = 0.0;  // mean distance gt -> nearest pred
  double overall = 0.0;       // mean of the two
};

/// Throws Degenerate when either cloud is empty.
PointCloudEvalResult eval_pointcloud(std::span<const Vec3> pred, std::span<const Vec3> gt);

/// Valid points of a map, in pixel order.
std::vector<Vec3> valid_points(const PointMap& pm);

}  // namespace more
