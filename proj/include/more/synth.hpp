// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic two-view scenes with exact ground truth.
//
// Analytic surfaces are ray-cast from both cameras. The stored point maps are
// the exact world points distorted by a per-view affine map (in the world
// frame), expressed in each camera frame, plus optional Gaussian noise whose
// standard deviation is noise_sigma times the pixel depth.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "more/core_model.hpp"

namespace more {

enum class SurfaceKind { Plane, TwoPlanes, Sphere, Staircase };

struct SurfaceSpec {
  SurfaceKind kind = SurfaceKind::Plane;
  // plane: {x : normal . x = offset}
  Vec3 normal{0.0, 0.0, 1.0};
  double offset = 4.0;
  // two planes: a ridge along the world y axis at depth `offset`, facing -z
  double dihedral_deg = 120.0;
  // sphere
  Vec3 center{0.0, 0.0, 5.0};
  double radius = 1.5;
  // staircase: z = offset + step_height * floor(x / step_width)
  double step_height = 0.25;
  double step_width = 0.5;

  /// Smallest t > 0 with origin + t * dir on the surface.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
};

enum class Albedo { Checker, Uniform };

struct SceneSpec {
  SurfaceSpec surface;
  std::array<CameraModel, 2> cameras;
  PixelGrid grid{64, 48};
  double noise_sigma = 0.0;  // relative to depth
  std::array<AffineAlignment, 2> distortion;
  double outlier_fraction = 0.0;
  std::uint64_t seed = 0;
  Albedo albedo = Albedo::Checker;
  double checker_period_px = 8.0;  // at the median reference depth
  int match_stride = 1;            // reference pixels are sampled on this lattice

  /// Pinhole pair with focal f, principal point at the image center, the
  /// reference at the origin and the source shifted by (baseline, 0, 0).
  static std::array<CameraModel, 2> stereo_cameras(PixelGrid grid, double focal, double baseline);
  /// Throws InvalidArgument on an inconsistent spec.
  void validate() const;
};

struct GroundTruth {
  std::array<PointMap, 2> world_points;   // undistorted, noise free
  std::vector<std::uint8_t> inlier_labels;  // per match
  std::array<AffineAlignment, 2> distortion;
};

struct SyntheticScene {
  ScenePair pair;  // camera-frame point maps, as load_bundle returns them; all matches flagged inlier
  GroundTruth truth;
};

/// Throws Degenerate when more than half the pixels of a view miss the surface.
SyntheticScene generate(const SceneSpec& spec);

/// Bundle plus ground_truth.npz holding true_points_{ref,src} (H,W,3),
/// true_alpha (2,), true_beta (2,3) and inlier_labels (N,).
void write_bundle(const SyntheticScene& scene, const std::filesystem::path& dir);

/// Parses the synth JSON spec. Unknown keys are errors.
SceneSpec parse_scene_spec(const nlohmann::json& j);
SceneSpec read_scene_spec(const std::filesystem::path& path);

}  // namespace more
