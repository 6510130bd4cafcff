// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "more/core_model.hpp"
#include "more/error.hpp"

using namespace more;

namespace {

Mat3 rot_z(double deg) {
  return Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, Vec3::UnitZ()).toRotationMatrix();
}

Mat3 intrinsics(double f, double cx, double cy) {
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = f;
  K(0, 2) = cx;
  K(1, 2) = cy;
  return K;
}

PointMap single_point(const Vec3& p) {
  PointMap pm(PixelGrid(2, 2));
  pm.points[0] = p;
  pm.valid[0] = 1;
  pm.confidence[0] = 0.7;
  return pm;
}

}  // namespace

TEST_CASE("pixel grid indexing and bounds") {
  const PixelGrid g(5, 3);
  CHECK(g.size() == 15);
  CHECK(g.index(2, 4) == 14);
  CHECK(g.pixel(7) == Pixel{1, 2});
  CHECK(g.contains(2, 4));
  CHECK_FALSE(g.contains(3, 0));
  CHECK_FALSE(g.contains(0, -1));
  CHECK_THROWS_AS(PixelGrid(1, 5), Error);
}

TEST_CASE("camera validation rejects bad intrinsics and rotations") {
  CHECK_NOTHROW(CameraModel(intrinsics(10, 5, 5), Mat3::Identity(), Vec3::Zero()));
  Mat3 K = intrinsics(10, 5, 5);
  K(1, 0) = 0.1;
  CHECK_THROWS_AS(CameraModel(K, Mat3::Identity(), Vec3::Zero()), Error);
  CHECK_THROWS_AS(CameraModel(intrinsics(-1, 5, 5), Mat3::Identity(), Vec3::Zero()), Error);
  Mat3 reflect = Mat3::Identity();
  reflect(0, 0) = -1;
  CHECK_THROWS_AS(CameraModel(intrinsics(10, 5, 5), reflect, Vec3::Zero()), Error);
  CHECK_THROWS_AS(CameraModel(intrinsics(10, 5, 5), 1.01 * Mat3::Identity(), Vec3::Zero()), Error);
}

TEST_CASE("transform_to_world: identity pose leaves points unchanged") {
  const PointMap pm = single_point(Vec3(0.25, -1.5, 3.0));
  const PointMap w = transform_to_world(pm, CameraModel());
  CHECK(w.points[0] == pm.points[0]);
  CHECK(w.valid == pm.valid);
  CHECK(w.confidence == pm.confidence);
}

TEST_CASE("transform_to_world: pure translation") {
  const CameraModel cam(Mat3::Identity(), Mat3::Identity(), Vec3(1, 0, 0));
  const PointMap w = transform_to_world(single_point(Vec3(0, 0, 2)), cam);
  CHECK(w.points[0] == Vec3(1, 0, 2));
}

TEST_CASE("transform_to_world: rotation about z by 90 degrees") {
  const CameraModel cam(Mat3::Identity(), rot_z(90), Vec3::Zero());
  const PointMap w = transform_to_world(single_point(Vec3(1, 0, 0)), cam);
  CHECK((w.points[0] - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("transform_to_world then transform_to_camera is the identity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  const Mat3 R = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized().toRotationMatrix();
  const CameraModel cam(intrinsics(20, 4, 4), R, Vec3(u(rng), u(rng), u(rng)));
  PointMap pm(PixelGrid(4, 3));
  for (std::size_t i = 0; i < pm.points.size(); ++i) {
    pm.points[i] = Vec3(u(rng), u(rng), u(rng));
    pm.valid[i] = 1;
  }
  const PointMap back = transform_to_camera(transform_to_world(pm, cam), cam);
  for (std::size_t i = 0; i < pm.points.size(); ++i)
    CHECK((back.points[i] - pm.points[i]).norm() <= 1e-9 * pm.points[i].norm());
}

TEST_CASE("invalid pixels are not transformed") {
  PointMap pm(PixelGrid(2, 2));
  pm.points[1] = Vec3(1, 2, 3);
  const CameraModel cam(Mat3::Identity(), Mat3::Identity(), Vec3(5, 5, 5));
  CHECK(transform_to_world(pm, cam).points[1] == Vec3(1, 2, 3));
}

TEST_CASE("viewing_ray: principal axis and off-axis pixel") {
  const double f = 8.0;
  // Principal point at the center of pixel (2, 3).
  const CameraModel cam(intrinsics(f, 3.5, 2.5), Mat3::Identity(), Vec3::Zero());
  const Ray axis = viewing_ray(cam, {2, 3});
  CHECK((axis.direction - Vec3(0, 0, 1)).norm() < 1e-15);
  CHECK(axis.origin == Vec3::Zero());
  const Ray right = viewing_ray(cam, {2, 4});
  CHECK((right.direction - Vec3(1.0 / f, 0, 1).normalized()).norm() < 1e-12);
}

TEST_CASE("viewing_ray: unit norm, origin at the camera center, passes through unprojected points") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  const Mat3 R = Eigen::Quaterniond(1.0, 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)).normalized().toRotationMatrix();
  const Vec3 t(0.3, -0.7, 1.1);
  const CameraModel cam(intrinsics(30, 16, 12), R, t);
  for (int r = 0; r < 24; r += 5) {
    for (int c = 0; c < 32; c += 7) {
      const Ray ray = viewing_ray(cam, {r, c});
      CHECK(std::abs(ray.direction.norm() - 1.0) < 1e-9);
      CHECK((ray.origin - t).norm() < 1e-15);
      for (double depth : {0.5, 3.0, 40.0}) {
        const Vec3 p_cam = depth * cam.intrinsics().inverse() * Vec3(c + 0.5, r + 0.5, 1.0);
        const Vec3 p = cam.to_world(p_cam);
        CHECK((p - ray.origin).cross(ray.direction).norm() < 1e-9 * depth);
      }
    }
  }
}

TEST_CASE("project inverts pixel_direction") {
  const CameraModel cam(intrinsics(30, 16, 12), rot_z(20), Vec3(0.1, 0.2, 0.3));
  const Vec3 p = cam.center() + 2.5 * cam.pixel_direction(7, 11);
  const auto rc = cam.project(p);
  REQUIRE(rc);
  CHECK((*rc - Vec2(7, 11)).norm() < 1e-12);
  CHECK_FALSE(cam.project(cam.center() - cam.pixel_direction(7, 11)));
}

TEST_CASE("downsampled camera keeps pixel centers on the same rays") {
  const CameraModel cam(intrinsics(32, 8, 6), Mat3::Identity(), Vec3::Zero());
  const CameraModel half = cam.downsampled(2);
  // Coarse pixel (1, 2) covers fine pixels rows 2-3, cols 4-5, centered at fine (2.5, 4.5).
  const Vec3 coarse = half.pixel_direction(1, 2);
  const Vec3 fine = cam.pixel_direction(2.5, 4.5);
  CHECK((coarse.normalized() - fine.normalized()).norm() < 1e-12);
}

TEST_CASE("nearest_pixel rounds and rejects outside coordinates") {
  const PixelGrid g(4, 3);
  CHECK(nearest_pixel(g, Vec2(1.4, 2.6)) == g.index(1, 3));
  CHECK_FALSE(nearest_pixel(g, Vec2(-0.6, 0)));
  CHECK_FALSE(nearest_pixel(g, Vec2(0, 3.5)));
}

TEST_CASE("affine alignment inverse composes to identity") {
  const AffineAlignment a{2.0, Vec3(0, 0, 1)};
  CHECK(a.apply(Vec3(1, 1, 1)) == Vec3(2, 2, 3));
  const Vec3 p(0.3, -2.0, 7.0);
  CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
}

TEST_CASE("refinement config defaults and validation") {
  RefinementConfig c;
  CHECK(c.gamma == 0.5);
  CHECK(c.rho == 0.1);
  CHECK(c.sigma_int == 0.07);
  CHECK(c.sigma_spa == 3.0);
  CHECK(c.lambda_p == 30.0);
  CHECK(c.lambda_r == 50.0);
  CHECK(c.lambda_s == 0.1);
  CHECK(c.lambda_n == 10.0);
  CHECK(c.levels == 2);
  CHECK(c.iters_per_level == std::vector<int>{50, 50});
  CHECK(c.learning_rate == 5e-3);
  CHECK_NOTHROW(c.validate());
  c.iters_per_level = {10};
  CHECK_THROWS_AS(c.validate(), Error);
  c = RefinementConfig{};
  c.lambda_r = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("correspondence inlier count") {
  CorrespondenceSet m;
  m.push_back(Vec2(0, 0), Vec2(1, 1), true);
  m.push_back(Vec2(0, 1), Vec2(1, 2), false);
  CHECK(m.size() == 2);
  CHECK(m.inlier_count() == 1);
}
