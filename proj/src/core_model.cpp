// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/core_model.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/LU>

#include "more/error.hpp"

namespace more {

PixelGrid::PixelGrid(int width, int height) : width_(width), height_(height) {
  if (width < 2 || height < 2) {
    std::ostringstream os;
    os << "pixel grid " << width << "x" << height << " is smaller than 2x2";
    fail(ErrorKind::Shape, os.str());
  }
}

std::size_t PointMap::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

CameraModel::CameraModel() : K_(Mat3::Identity()), R_(Mat3::Identity()), t_(Vec3::Zero()) {}

CameraModel::CameraModel(const Mat3& intrinsics, const Mat3& rotation, const Vec3& translation)
    : K_(intrinsics), R_(rotation), t_(translation) {
  require(K_.allFinite() && R_.allFinite() && t_.allFinite(), ErrorKind::InvalidArgument,
          "camera parameters must be finite");
  require(K_(1, 0) == 0.0 && K_(2, 0) == 0.0 && K_(2, 1) == 0.0, ErrorKind::InvalidArgument,
          "intrinsics must be upper triangular");
  require(K_(0, 0) > 0.0 && K_(1, 1) > 0.0, ErrorKind::InvalidArgument, "focal lengths must be positive");
  require(K_(2, 2) == 1.0, ErrorKind::InvalidArgument, "intrinsics K(2,2) must be 1");
  const double ortho = (R_.transpose() * R_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  require(ortho <= 1e-9, ErrorKind::InvalidArgument, "rotation is not orthonormal");
  require(R_.determinant() > 0.0, ErrorKind::InvalidArgument, "rotation must have determinant +1");
}

Vec3 CameraModel::pixel_direction(double row, double col) const {
  // Upper-triangular K: back-substitution avoids forming the inverse.
  const double det = K_(0, 0) * K_(1, 1);
  require(std::isfinite(1.0 / det) && det > 1e-300, ErrorKind::InvalidArgument, "intrinsics are singular");
  const double u = col + 0.5;
  const double v = row + 0.5;
  const double y = (v - K_(1, 2)) / K_(1, 1);
  const double x = (u - K_(0, 2) - K_(0, 1) * y) / K_(0, 0);
  return R_ * Vec3(x, y, 1.0);
}

std::optional<Vec2> CameraModel::project(const Vec3& p_world) const {
  const Vec3 pc = to_camera(p_world);
  if (!(pc.z() > 0.0)) return std::nullopt;
  const Vec3 uvw = K_ * pc;
  return Vec2(uvw.y() / uvw.z() - 0.5, uvw.x() / uvw.z() - 0.5);
}

CameraModel CameraModel::downsampled(int factor) const {
  Mat3 K = K_;
  K.row(0) /= factor;
  K.row(1) /= factor;
  return CameraModel(K, R_, t_);
}

std::size_t CorrespondenceSet::inlier_count() const {
  std::size_t n = 0;
  for (auto v : inlier) n += v != 0;
  return n;
}

void CorrespondenceSet::push_back(const Vec2& ref, const Vec2& src, bool is_inlier) {
  ref_pixels.push_back(ref);
  src_pixels.push_back(src);
  inlier.push_back(is_inlier ? 1 : 0);
}

std::optional<int> nearest_pixel(const PixelGrid& grid, const Vec2& rowcol) {
  if (!rowcol.allFinite()) return std::nullopt;
  const int r = static_cast<int>(std::lround(rowcol.x()));
  const int c = static_cast<int>(std::lround(rowcol.y()));
  if (!grid.contains(r, c)) return std::nullopt;
  return grid.index(r, c);
}

void RefinementConfig::validate() const {
  const auto nonneg = [](double v, const char* name) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidArgument, std::string(name) + " must be finite and >= 0");
  };
  nonneg(gamma, "gamma");
  nonneg(rho, "rho");
  nonneg(lambda_p, "lambda_p");
  nonneg(lambda_r, "lambda_r");
  nonneg(lambda_s, "lambda_s");
  nonneg(lambda_n, "lambda_n");
  nonneg(learning_rate, "learning_rate");
  nonneg(confidence_threshold, "confidence_threshold");
  require(sigma_int > 0.0 && sigma_spa > 0.0, ErrorKind::InvalidArgument, "sigma_int and sigma_spa must be positive");
  require(levels >= 1, ErrorKind::InvalidArgument, "levels must be >= 1");
  require(static_cast<int>(iters_per_level.size()) == levels, ErrorKind::InvalidArgument,
          "iters_per_level must have one entry per level");
  for (int it : iters_per_level) require(it >= 0, ErrorKind::InvalidArgument, "iteration counts must be >= 0");
  require(knn_k >= 0, ErrorKind::InvalidArgument, "knn_k must be >= 0");
  require(knn_refresh_every >= 1, ErrorKind::InvalidArgument, "knn_refresh_every must be >= 1");
  require(patch_radius >= 0 && neighbor_radius >= 1, ErrorKind::InvalidArgument,
          "patch_radius must be >= 0 and neighbor_radius >= 1");
  require(ransac.max_iters >= 1, ErrorKind::InvalidArgument, "ransac.max_iters must be >= 1");
  if (ransac.threshold) {
    require(*ransac.threshold > 0.0, ErrorKind::InvalidArgument, "ransac.threshold must be positive");
  }
}

PointMap transform_to_world(const PointMap& pm, const CameraModel& cam) {
  PointMap out = pm;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    if (out.valid[i]) out.points[i] = cam.to_world(pm.points[i]);
  }
  return out;
}

PointMap transform_to_camera(const PointMap& pm, const CameraModel& cam) {
  PointMap out = pm;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    if (out.valid[i]) out.points[i] = cam.to_camera(pm.points[i]);
  }
  return out;
}

Ray viewing_ray(const CameraModel& cam, Pixel pixel) {
  return {cam.center(), cam.pixel_direction(pixel.row, pixel.col).normalized()};
}

}  // namespace more
