// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "more/error.hpp"
#include "more/synth.hpp"
#include "more/tensor_io.hpp"
#include "test_support.hpp"

using namespace more;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("surface intersections") {
  SurfaceSpec plane;
  CHECK(*plane.intersect(Vec3::Zero(), Vec3(0, 0, 2)) == 2.0);
  CHECK(!plane.intersect(Vec3::Zero(), Vec3(0, 0, -1)));

  SurfaceSpec sphere;
  sphere.kind = SurfaceKind::Sphere;
  CHECK(*sphere.intersect(Vec3::Zero(), Vec3(0, 0, 1)) == doctest::Approx(3.5));
  CHECK(!sphere.intersect(Vec3::Zero(), Vec3(1, 0, 0)));

  SurfaceSpec ridge;
  ridge.kind = SurfaceKind::TwoPlanes;
  ridge.dihedral_deg = 90.0;  // slopes of 45 degrees on both sides
  const double t = *ridge.intersect(Vec3(1.0, 0, 0), Vec3(0, 0, 1));
  CHECK(t == doctest::Approx(5.0));
  CHECK(*ridge.intersect(Vec3(-1.0, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(5.0));
  CHECK(*ridge.intersect(Vec3(0, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(4.0));

  SurfaceSpec stairs;
  stairs.kind = SurfaceKind::Staircase;
  CHECK(*stairs.intersect(Vec3(0.1, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(4.0));
  CHECK(*stairs.intersect(Vec3(0.6, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(4.25));
  CHECK(*stairs.intersect(Vec3(-0.1, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(3.75));
}

TEST_CASE("clean plane: exact points, 4 px disparity matches") {
  const SyntheticScene s = generate(test::planar_spec(16, 12));
  CHECK(s.pair.matches.size() == 144);
  CHECK(s.truth.inlier_labels == std::vector<std::uint8_t>(144, 1));
  for (std::size_t k = 0; k < s.pair.matches.size(); ++k) {
    CHECK(s.pair.matches.src_pixels[k].x() == s.pair.matches.ref_pixels[k].x());
    CHECK(s.pair.matches.src_pixels[k].y() == s.pair.matches.ref_pixels[k].y() - 4.0);
  }
  for (View v : kViews) {
    const PointMap& pm = s.pair.view(v).pointmap;
    CHECK(pm.valid_count() == 192);
    for (const Vec3& p : pm.points) CHECK(p.z() == 4.0);
    const PointMap& t = s.truth.world_points[static_cast<std::size_t>(index_of(v))];
    for (std::size_t i = 0; i < pm.points.size(); ++i)
      CHECK(s.pair.view(v).camera.to_world(pm.points[i]) == t.points[i]);
  }
}

TEST_CASE("true matches reproject within half a pixel; outliers are appended") {
  SceneSpec spec;
  spec.surface.kind = SurfaceKind::Sphere;
  spec.grid = PixelGrid(40, 30);
  spec.cameras = SceneSpec::stereo_cameras(spec.grid, 80.0, 0.4);
  spec.outlier_fraction = 0.2;
  spec.seed = 11;
  const SyntheticScene s = generate(spec);
  const auto& m = s.pair.matches;
  std::size_t n_true = 0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!s.truth.inlier_labels[k]) continue;
    ++n_true;
    const auto i = nearest_pixel(spec.grid, m.ref_pixels[k]);
    const Vec3 X = s.truth.world_points[0].points[static_cast<std::size_t>(*i)];
    const Vec2 rc = *spec.cameras[1].project(X);
    CHECK((rc - m.src_pixels[k]).norm() <= 0.5);
  }
  REQUIRE(n_true > 100);
  for (std::size_t k = 0; k < n_true; ++k) CHECK(s.truth.inlier_labels[k] == 1);
  const std::size_t n_out = m.size() - n_true;
  CHECK(n_out == static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(n_true))));
  CHECK(m.inlier_count() == m.size());
}

TEST_CASE("distortion and noise act on the stored point maps only") {
  SceneSpec spec = test::planar_spec(16, 12);
  spec.distortion[1] = AffineAlignment{2.0, Vec3(0.3, -0.2, 0.5)};
  const SyntheticScene s = generate(spec);
  for (std::size_t i = 0; i < spec.grid.size(); ++i) {
    const Vec3 world = s.pair.src.camera.to_world(s.pair.src.pointmap.points[i]);
    CHECK((world - spec.distortion[1].apply(s.truth.world_points[1].points[i])).norm() < 1e-12);
  }
  spec.noise_sigma = 0.01;
  spec.seed = 3;
  const SyntheticScene n = generate(spec);
  double sq = 0.0;
  for (std::size_t i = 0; i < spec.grid.size(); ++i) {
    const Vec3 d = n.pair.ref.pointmap.points[i] - s.pair.ref.pointmap.points[i];
    sq += d.squaredNorm() / std::pow(0.01 * 4.0, 2);
  }
  // Each coordinate has unit variance after normalization.
  CHECK(sq / (3.0 * static_cast<double>(spec.grid.size())) == doctest::Approx(1.0).epsilon(0.15));
  CHECK(n.pair.matches.ref_pixels == s.pair.matches.ref_pixels);
}

TEST_CASE("a surface mostly out of view is degenerate") {
  SceneSpec spec = test::planar_spec(16, 12);
  spec.surface.kind = SurfaceKind::Sphere;
  spec.surface.center = Vec3(10, 0, 5);
  CHECK(kind_of([&] { generate(spec); }) == ErrorKind::Degenerate);
}

TEST_CASE("write_bundle is deterministic and loads back") {
  SceneSpec spec = test::planar_spec(16, 12);
  spec.noise_sigma = 0.01;
  spec.seed = 5;
  spec.outlier_fraction = 0.1;
  spec.distortion[1] = AffineAlignment{0.5, Vec3(0.1, 0.0, -0.2)};
  const fs::path a = test::temp_dir("synth_a"), b = test::temp_dir("synth_b");
  write_bundle(generate(spec), a);
  write_bundle(generate(spec), b);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    ++files;
  }
  CHECK(files >= 8);

  const SyntheticScene s = generate(spec);
  const ScenePair back = load_bundle(a);
  for (View v : kViews) {
    const auto& p0 = s.pair.view(v).pointmap.points;
    const auto& p1 = back.view(v).pointmap.points;
    for (std::size_t i = 0; i < p0.size(); ++i) CHECK((p0[i] - p1[i]).norm() < 1e-6);
  }
  CHECK(back.matches.size() == s.pair.matches.size());

  const auto gt = read_npz(a / "ground_truth.npz");
  REQUIRE(gt.count("true_points_ref") == 1);
  CHECK(gt.at("true_points_ref").shape == std::vector<std::size_t>{12, 16, 3});
  CHECK(gt.at("true_alpha").data == std::vector<float>{1.0f, 0.5f});
  CHECK(gt.at("true_beta").shape == std::vector<std::size_t>{2, 3});
  CHECK(gt.at("inlier_labels").element_count() == s.pair.matches.size());
}

TEST_CASE("scene spec parsing") {
  const SceneSpec s = parse_scene_spec(json::parse(R"({
    "width": 20, "height": 10, "surface": {"type": "sphere", "center": [0, 0, 6], "radius": 2},
    "focal": 25, "baseline": 0.3, "noise_sigma": 0.02, "seed": 9, "albedo": "uniform",
    "distortion": {"src": {"scale": 2, "shift": [0.3, -0.2, 0.5]}}, "outlier_fraction": 0.1})"));
  CHECK(s.grid == PixelGrid(20, 10));
  CHECK(s.surface.kind == SurfaceKind::Sphere);
  CHECK(s.surface.center == Vec3(0, 0, 6));
  CHECK(s.cameras[1].center() == Vec3(0.3, 0, 0));
  CHECK(s.cameras[0].intrinsics()(0, 2) == 10.0);
  CHECK(s.distortion[1].scale == 2.0);
  CHECK(s.distortion[1].shift == Vec3(0.3, -0.2, 0.5));
  CHECK(s.distortion[0].scale == 1.0);
  CHECK(s.albedo == Albedo::Uniform);
  CHECK(s.seed == 9);

  const auto bad = [](const char* text) { return kind_of([&] { parse_scene_spec(json::parse(text)); }); };
  CHECK(bad(R"({"widht": 3})") == ErrorKind::InvalidArgument);
  CHECK(bad(R"({"surface": {"type": "torus"}})") == ErrorKind::InvalidArgument);
  CHECK(bad(R"({"surface": {"kind": "plane"}})") == ErrorKind::InvalidArgument);
  CHECK(bad(R"({"albedo": "marble"})") == ErrorKind::InvalidArgument);
  CHECK(bad(R"({"outlier_fraction": 1.0})") == ErrorKind::InvalidArgument);
  CHECK(bad(R"({"width": 1})") == ErrorKind::Shape);
}
