// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "more/normal_estimation.hpp"
#include "more/synth.hpp"

using namespace more;

namespace {

CameraModel camera(int size, double f, const Mat3& R = Mat3::Identity(), const Vec3& t = Vec3::Zero()) {
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = f;
  K(0, 2) = K(1, 2) = 0.5 * size;
  return CameraModel(K, R, t);
}

PointMap cast(const SurfaceSpec& s, const CameraModel& cam, int size) {
  PointMap pm(PixelGrid(size, size));
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const Vec3 d = cam.pixel_direction(r, c);
      const auto t = s.intersect(cam.center(), d);
      if (!t) continue;
      const auto i = static_cast<std::size_t>(pm.grid.index(r, c));
      pm.points[i] = cam.center() + *t * d;
      pm.valid[i] = 1;
    }
  }
  return pm;
}

bool interior(const PixelGrid& g, int i) {
  const Pixel p = g.pixel(i);
  return p.row > 0 && p.col > 0 && p.row < g.height() - 1 && p.col < g.width() - 1;
}

}  // namespace

TEST_CASE("plane z = 5 seen from the origin gives camera-facing (0,0,-1)") {
  SurfaceSpec s;
  s.normal = Vec3::UnitZ();
  s.offset = 5.0;
  const CameraModel cam = camera(16, 20);
  const NormalMap n = normals_from_pointmap(cast(s, cam, 16), cam);
  for (int i = 0; i < static_cast<int>(n.grid.size()); ++i) {
    REQUIRE(n.is_valid(i));
    CHECK((n.normals[static_cast<std::size_t>(i)] - Vec3(0, 0, -1)).norm() < 1e-9);
  }
}

TEST_CASE("plane x + y + z = 3 gives the analytic normal, oriented to the camera") {
  SurfaceSpec s;
  s.normal = Vec3(1, 1, 1);
  s.offset = 3.0 / std::sqrt(3.0);
  const CameraModel cam = camera(16, 20);
  const PointMap pm = cast(s, cam, 16);
  const NormalMap n = normals_from_pointmap(pm, cam);
  const Vec3 expected = -Vec3(1, 1, 1).normalized();  // the origin lies on the negative side
  int checked = 0;
  for (int i = 0; i < static_cast<int>(n.grid.size()); ++i) {
    if (!interior(n.grid, i)) continue;
    REQUIRE(n.is_valid(i));
    CHECK((n.normals[static_cast<std::size_t>(i)] - expected).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked == 14 * 14);
}

TEST_CASE("sphere: interior normals follow the camera-facing radial direction within 2 degrees") {
  SurfaceSpec s;
  s.kind = SurfaceKind::Sphere;
  s.center = Vec3(0, 0, 5);
  s.radius = 2.0;
  const CameraModel cam = camera(64, 100);
  const PointMap pm = cast(s, cam, 64);
  const NormalMap n = normals_from_pointmap(pm, cam);
  double worst = 0.0;
  for (int i = 0; i < static_cast<int>(n.grid.size()); ++i) {
    if (!interior(n.grid, i)) continue;
    // Pixels on the silhouette fall back to one-sided differences.
    const Pixel p = n.grid.pixel(i);
    if (!pm.is_valid(i) || !pm.is_valid(n.grid.index(p.row - 1, p.col)) || !pm.is_valid(n.grid.index(p.row + 1, p.col)) ||
        !pm.is_valid(n.grid.index(p.row, p.col - 1)) || !pm.is_valid(n.grid.index(p.row, p.col + 1)))
      continue;
    REQUIRE(n.is_valid(i));
    const auto k = static_cast<std::size_t>(i);
    const Vec3 radial = (pm.points[k] - s.center).normalized();
    const double angle = std::acos(std::clamp(n.normals[k].dot(radial), -1.0, 1.0)) * 180.0 / std::numbers::pi;
    worst = std::max(worst, angle);
  }
  CHECK(worst < 2.0);
}

TEST_CASE("unit norm and camera-facing orientation on a noisy surface") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.02);
  SurfaceSpec s;
  s.kind = SurfaceKind::TwoPlanes;
  s.offset = 4.0;
  const CameraModel cam = camera(24, 30);
  PointMap pm = cast(s, cam, 24);
  for (auto& p : pm.points) p += Vec3(noise(rng), noise(rng), noise(rng));
  const NormalMap n = normals_from_pointmap(pm, cam);
  for (int i = 0; i < static_cast<int>(n.grid.size()); ++i) {
    if (!n.is_valid(i)) continue;
    const auto k = static_cast<std::size_t>(i);
    CHECK(std::abs(n.normals[k].norm() - 1.0) < 1e-12);
    CHECK(n.normals[k].dot(cam.center() - pm.points[k]) >= 0.0);
  }
}

TEST_CASE("rotating the world rotates the normals") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  SurfaceSpec s;
  s.kind = SurfaceKind::Sphere;
  s.center = Vec3(0.3, -0.2, 5);
  s.radius = 2.0;
  const CameraModel cam = camera(20, 40);
  const PointMap pm = cast(s, cam, 20);
  const Mat3 R = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized().toRotationMatrix();
  const Vec3 t(u(rng), u(rng), u(rng));
  PointMap moved = pm;
  for (auto& p : moved.points) p = R * p + t;
  const CameraModel moved_cam(cam.intrinsics(), R * cam.rotation(), R * cam.center() + t);
  const NormalMap a = normals_from_pointmap(pm, cam);
  const NormalMap b = normals_from_pointmap(moved, moved_cam);
  CHECK(a.valid == b.valid);
  for (std::size_t i = 0; i < a.normals.size(); ++i) {
    if (a.valid[i]) CHECK((R * a.normals[i] - b.normals[i]).norm() < 1e-9);
  }
}

TEST_CASE("pixels with fewer than two valid neighbors, or only opposite ones, are invalid") {
  PointMap pm(PixelGrid(3, 3));
  for (std::size_t i = 0; i < 9; ++i) {
    const Pixel p = pm.grid.pixel(static_cast<int>(i));
    pm.points[i] = Vec3(p.col, p.row, 5.0);
  }
  const auto set_valid = [&](std::initializer_list<int> ids) {
    std::fill(pm.valid.begin(), pm.valid.end(), 0);
    for (int i : ids) pm.valid[static_cast<std::size_t>(i)] = 1;
  };
  const CameraModel cam;
  set_valid({4, 5});  // center with a single neighbor
  CHECK_FALSE(normals_from_pointmap(pm, cam).is_valid(4));
  set_valid({3, 4, 5});  // left and right only: no adjacent pair
  CHECK_FALSE(normals_from_pointmap(pm, cam).is_valid(4));
  set_valid({4, 5, 7});  // right and down
  const NormalMap n = normals_from_pointmap(pm, cam);
  CHECK(n.is_valid(4));
  CHECK((n.normals[4] - Vec3(0, 0, -1)).norm() < 1e-12);
  CHECK_FALSE(n.is_valid(0));  // invalid input pixel
}

TEST_CASE("collinear neighbors are degenerate") {
  PointMap pm(PixelGrid(3, 3));
  for (std::size_t i = 0; i < 9; ++i) {
    pm.points[i] = Vec3(static_cast<double>(i), 0.0, 5.0);
    pm.valid[i] = 1;
  }
  const NormalMap n = normals_from_pointmap(pm, CameraModel());
  for (int i = 0; i < 9; ++i) CHECK_FALSE(n.is_valid(i));
}
