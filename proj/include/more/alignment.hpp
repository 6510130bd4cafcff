// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Initial cross-view alignment: the source point map is brought onto the
// reference one by a single scale and a 3D shift, P_ref ~ scale * P_src + shift,
// estimated from matched pixels in the common world frame.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "more/core_model.hpp"

namespace more {

struct RansacReport {
  std::size_t inlier_count = 0;
  double threshold_used = 0.0;  // scene units
  int iterations_run = 0;
  AffineAlignment model;  // best minimal-sample model, not refit
};

/// World-frame 3D endpoints of the usable matches: both rounded pixels valid.
struct MatchedPoints {
  std::vector<Vec3> ref;
  std::vector<Vec3> src;
  std::vector<double> ref_depth;  // z of the reference point in the reference camera frame
  std::vector<int> match_index;   // index into the originating CorrespondenceSet
};

/// `pair` must hold world-frame point maps. With `inliers_only`, matches
/// flagged as outliers are skipped.
MatchedPoints gather_matched_points(const ScenePair& pair, bool inliers_only = false);

/// Scale+shift RANSAC over minimal 3-match samples. Inliers have residual
/// ||scale * P_src + shift - P_ref|| below the threshold (config value, or
/// 0.05 x median matched reference depth when unset). Bit-deterministic for a
/// given seed. Matches landing on invalid pixels are marked outliers.
/// Throws Degenerate when fewer than 3 usable matches exist or nothing agrees.
std::pair<CorrespondenceSet, RansacReport> filter_matches_ransac(const ScenePair& pair, const RansacConfig& cfg);

/// Weighted least squares for (scale, shift); `weights` is per match and per
/// coordinate (size 3N, laid out match-major).
AffineAlignment fit_scale_shift_weighted(std::span<const Vec3> ref, std::span<const Vec3> src,
                                         std::span<const double> weights);

/// sum_i (1 / z_i) * || scale * src_i + shift - ref_i ||_1
double scale_shift_objective(const AffineAlignment& a, std::span<const Vec3> ref, std::span<const Vec3> src,
                             std::span<const double> ref_depths);

struct L1Solve {
  AffineAlignment alignment;
  double initial_objective = 0.0;   // at the weighted-LS starting point
  std::vector<double> objective_history;  // one entry per accepted iterate, non-increasing
  int iterations = 0;
};

/// Minimizes the depth-weighted L1 alignment objective by IRLS, starting from
/// the 1/z-weighted least-squares fit. Residuals are floored at 1e-6 when
/// reweighting; iteration stops on relative objective change < 1e-10, after
/// 100 iterations, or when a step would increase the objective.
/// Throws Degenerate when the source points coincide (scale unobservable) and
/// InvalidArgument on bad input sizes or nonpositive depths.
L1Solve solve_scale_shift_l1(std::span<const Vec3> ref, std::span<const Vec3> src, std::span<const double> ref_depths);

inline AffineAlignment solve_scale_shift(std::span<const Vec3> ref, std::span<const Vec3> src,
                                         std::span<const double> ref_depths) {
  return solve_scale_shift_l1(ref, src, ref_depths).alignment;
}

/// Clamps a depth shift to +-0.5 x IQR of `depths` (linear-interpolation
/// percentiles). Needs at least 4 finite values.
double clamp_shift_iqr(std::span<const double> depths, double shift);

PointMap apply_alignment(const PointMap& pm, const AffineAlignment& a);

}  // namespace more
