// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Domain types shared by every stage of the pipeline: pixel grids, per-pixel
// point and normal maps, pinhole cameras, correspondences and the affine
// (scale + shift) correction applied to a view.
//
// Pixel convention: pixel (row, col) samples continuous image coordinate
// (col + 0.5, row + 0.5). Cameras store a world-from-camera pose, so a
// camera-frame point p maps to R * p + t and the camera center is t.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace more {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class View : int { Ref = 0, Src = 1 };

constexpr int index_of(View v) { return static_cast<int>(v); }
constexpr View other(View v) { return v == View::Ref ? View::Src : View::Ref; }
constexpr std::array<View, 2> kViews{View::Ref, View::Src};

struct Pixel {
  int row = 0;
  int col = 0;
  bool operator==(const Pixel&) const = default;
};

class PixelGrid {
 public:
  PixelGrid() = default;
  /// Throws Shape if either dimension is below 2.
  PixelGrid(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }

  int index(int row, int col) const { return row * width_ + col; }
  int index(Pixel p) const { return index(p.row, p.col); }
  Pixel pixel(int index) const { return {index / width_, index % width_}; }
  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < height_ && col < width_; }

  bool operator==(const PixelGrid&) const = default;

 private:
  int width_ = 2;
  int height_ = 2;
};

/// Per-pixel RGB in [0, 1].
struct Image {
  PixelGrid grid;
  std::vector<Vec3> rgb;

  Image() = default;
  explicit Image(PixelGrid g, const Vec3& fill = Vec3::Zero()) : grid(g), rgb(g.size(), fill) {}
};

struct PointMap {
  PixelGrid grid;
  std::vector<Vec3> points;
  std::vector<std::uint8_t> valid;
  std::vector<double> confidence;

  PointMap() = default;
  explicit PointMap(PixelGrid g)
      : grid(g), points(g.size(), Vec3::Zero()), valid(g.size(), 0), confidence(g.size(), 0.0) {}

  bool is_valid(int i) const { return valid[static_cast<std::size_t>(i)] != 0; }
  std::size_t valid_count() const;
};

struct NormalMap {
  PixelGrid grid;
  std::vector<Vec3> normals;
  std::vector<std::uint8_t> valid;

  NormalMap() = default;
  explicit NormalMap(PixelGrid g) : grid(g), normals(g.size(), Vec3::Zero()), valid(g.size(), 0) {}

  bool is_valid(int i) const { return valid[static_cast<std::size_t>(i)] != 0; }
};

class CameraModel {
 public:
  /// Identity pose with unit focal length.
  CameraModel();
  /// Validates K (upper triangular, positive focal entries, K(2,2) == 1) and R
  /// (orthonormal to 1e-9, det +1). Throws InvalidArgument otherwise.
  CameraModel(const Mat3& intrinsics, const Mat3& rotation, const Vec3& translation);

  const Mat3& intrinsics() const { return K_; }
  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }
  /// Camera center in world coordinates.
  const Vec3& center() const { return t_; }

  Vec3 to_world(const Vec3& p_cam) const { return R_ * p_cam + t_; }
  Vec3 to_camera(const Vec3& p_world) const { return R_.transpose() * (p_world - t_); }

  /// World-frame direction R * K^-1 * (col + 0.5, row + 0.5, 1), not normalized.
  /// Throws InvalidArgument when K is numerically singular.
  Vec3 pixel_direction(double row, double col) const;

  /// Projects a world point to continuous (row, col) pixel-index coordinates;
  /// empty when the point is not in front of the camera.
  std::optional<Vec2> project(const Vec3& p_world) const;

  /// Intrinsics for an image downsampled by `factor` (pixel-center preserving).
  CameraModel downsampled(int factor) const;

 private:
  Mat3 K_;
  Mat3 R_;
  Vec3 t_;
};

struct CorrespondenceSet {
  std::vector<Vec2> ref_pixels;  // (row, col), subpixel
  std::vector<Vec2> src_pixels;
  std::vector<std::uint8_t> inlier;

  std::size_t size() const { return ref_pixels.size(); }
  std::size_t inlier_count() const;
  void push_back(const Vec2& ref, const Vec2& src, bool is_inlier = true);
};

/// Nearest-pixel index for a subpixel (row, col) coordinate; empty when outside the grid.
std::optional<int> nearest_pixel(const PixelGrid& grid, const Vec2& rowcol);

struct AffineAlignment {
  double scale = 1.0;
  Vec3 shift = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * p + shift; }
  AffineAlignment inverse() const { return {1.0 / scale, -shift / scale}; }
};

struct ViewBundle {
  Image image;
  PointMap pointmap;
  CameraModel camera;
  NormalMap normals;
};

struct ScenePair {
  ViewBundle ref;
  ViewBundle src;
  CorrespondenceSet matches;

  ViewBundle& view(View v) { return v == View::Ref ? ref : src; }
  const ViewBundle& view(View v) const { return v == View::Ref ? ref : src; }
};

struct RansacConfig {
  std::optional<double> threshold;  // empty: 0.05 x median matched ref depth
  int max_iters = 500;
  bool enabled = true;
  std::uint64_t seed = 0;
};

struct RefinementConfig {
  double gamma = 0.5;
  double rho = 0.1;
  double sigma_int = 0.07;
  double sigma_spa = 3.0;
  double lambda_p = 30.0;
  double lambda_r = 50.0;
  double lambda_s = 0.1;
  double lambda_n = 10.0;
  int levels = 2;
  std::vector<int> iters_per_level{50, 50};
  double learning_rate = 5e-3;
  int knn_k = 3;
  int knn_refresh_every = 25;
  int patch_radius = 1;
  int neighbor_radius = 1;
  RansacConfig ransac;
  double confidence_threshold = 0.0;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// Per-term loss values, each summed over both views (unweighted), plus the
/// weighted total.
struct LossTerms {
  double intra = 0.0;
  double inter = 0.0;
  double knn = 0.0;
  double ray = 0.0;
  double sim = 0.0;
  double normal = 0.0;
  double total = 0.0;
};

/// One optimizer evaluation: global iteration counter, pyramid level, losses.
struct TraceRow {
  int iteration = 0;
  int level = 0;
  LossTerms terms;
};

/// Maps every valid point to R * p + t; validity and confidence are untouched.
PointMap transform_to_world(const PointMap& pm, const CameraModel& cam);
/// Inverse of transform_to_world.
PointMap transform_to_camera(const PointMap& pm, const CameraModel& cam);

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

Ray viewing_ray(const CameraModel& cam, Pixel pixel);

}  // namespace more
