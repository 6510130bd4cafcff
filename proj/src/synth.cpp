// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "more/error.hpp"
#include "more/tensor_io.hpp"

namespace more {
namespace {

using json = nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Portable draws: the standard distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::optional<double> min_positive(std::optional<double> a, std::optional<double> b) {
  if (!a) return b;
  if (!b) return a;
  return std::min(*a, *b);
}

std::optional<double> hit_plane(const Vec3& o, const Vec3& d, const Vec3& n, double offset) {
  const double den = n.dot(d);
  if (std::abs(den) < 1e-15) return std::nullopt;
  const double t = (offset - n.dot(o)) / den;
  if (!(t > 1e-12)) return std::nullopt;
  return t;
}

double checker(const Vec3& x, double period) {
  const auto k = static_cast<long long>(std::floor(x.x() / period)) + static_cast<long long>(std::floor(x.y() / period)) +
                 static_cast<long long>(std::floor(x.z() / period));
  return (k & 1) != 0 ? 0.8 : 0.2;
}

template <std::size_t N>
std::array<double, N> read_array(const json& j, const char* key) {
  require(j.is_array() && j.size() == N, ErrorKind::InvalidArgument,
          std::string("synth spec: '") + key + "' must be an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = j[i].get<double>();
  return out;
}

Vec3 read_vec3(const json& j, const char* key) {
  const auto a = read_array<3>(j, key);
  return {a[0], a[1], a[2]};
}

Mat3 read_mat3(const json& j, const char* key) {
  const auto a = read_array<9>(j, key);
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = a[static_cast<std::size_t>(3 * r + c)];
  return m;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  require(j.is_object(), ErrorKind::InvalidArgument, "synth spec: " + where + " must be an object");
  for (const auto& item : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; });
    require(ok, ErrorKind::InvalidArgument, "synth spec: unknown key '" + item.key() + "' in " + where);
  }
}

AffineAlignment read_affine(const json& j, const std::string& where) {
  reject_unknown(j, {"scale", "shift"}, where);
  AffineAlignment a;
  if (j.contains("scale")) a.scale = j.at("scale").get<double>();
  if (j.contains("shift")) a.shift = read_vec3(j.at("shift"), "shift");
  return a;
}

std::vector<std::uint8_t> to_bytes(std::span<const std::uint8_t> v) { return {v.begin(), v.end()}; }

}  // namespace

std::optional<double> SurfaceSpec::intersect(const Vec3& o, const Vec3& d) const {
  switch (kind) {
    case SurfaceKind::Plane:
      return hit_plane(o, d, normal.normalized(), offset);
    case SurfaceKind::TwoPlanes: {
      const double k = std::tan(0.5 * (std::numbers::pi - dihedral_deg * std::numbers::pi / 180.0));
      std::optional<double> best;
      // Right half: z - k x = offset for x >= 0; left half: z + k x = offset for x <= 0.
      for (double sign : {1.0, -1.0}) {
        const Vec3 n(-sign * k, 0.0, 1.0);
        const auto t = hit_plane(o, d, n, offset);
        if (t && sign * (o.x() + *t * d.x()) >= 0.0) best = min_positive(best, t);
      }
      return best;
    }
    case SurfaceKind::Sphere: {
      const Vec3 oc = o - center;
      const double a = d.squaredNorm();
      const double b = oc.dot(d);
      const double c = oc.squaredNorm() - radius * radius;
      const double disc = b * b - a * c;
      if (disc < 0.0) return std::nullopt;
      const double s = std::sqrt(disc);
      for (double t : {(-b - s) / a, (-b + s) / a})
        if (t > 1e-12) return t;
      return std::nullopt;
    }
    case SurfaceKind::Staircase: {
      std::optional<double> best;
      constexpr int kSteps = 256;
      for (int k = -kSteps; k <= kSteps; ++k) {
        const double z = offset + step_height * k;
        const auto tread = hit_plane(o, d, Vec3::UnitZ(), z);
        if (tread) {
          const double x = o.x() + *tread * d.x();
          if (x >= k * step_width && x < (k + 1) * step_width) best = min_positive(best, tread);
        }
        const auto riser = hit_plane(o, d, Vec3::UnitX(), k * step_width);
        if (riser) {
          const double zr = o.z() + *riser * d.z();
          const double lo = std::min(z - step_height, z), hi = std::max(z - step_height, z);
          if (zr >= lo && zr <= hi) best = min_positive(best, riser);
        }
      }
      return best;
    }
  }
  return std::nullopt;
}

std::array<CameraModel, 2> SceneSpec::stereo_cameras(PixelGrid grid, double focal, double baseline) {
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = focal;
  K(0, 2) = 0.5 * grid.width();
  K(1, 2) = 0.5 * grid.height();
  return {CameraModel(K, Mat3::Identity(), Vec3::Zero()), CameraModel(K, Mat3::Identity(), Vec3(baseline, 0.0, 0.0))};
}

void SceneSpec::validate() const {
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorKind::InvalidArgument,
          "noise_sigma must be finite and >= 0");
  require(outlier_fraction >= 0.0 && outlier_fraction < 0.5, ErrorKind::InvalidArgument,
          "outlier_fraction must lie in [0, 0.5)");
  require(match_stride >= 1, ErrorKind::InvalidArgument, "match_stride must be >= 1");
  require(checker_period_px > 0.0, ErrorKind::InvalidArgument, "checker_period_px must be > 0");
  for (const auto& a : distortion)
    require(a.scale > 0.0 && std::isfinite(a.scale) && a.shift.allFinite(), ErrorKind::InvalidArgument,
            "distortion scale must be positive and finite");
  switch (surface.kind) {
    case SurfaceKind::Plane:
      require(surface.normal.norm() > 0.0, ErrorKind::InvalidArgument, "plane normal must be nonzero");
      break;
    case SurfaceKind::TwoPlanes:
      require(surface.dihedral_deg > 0.0 && surface.dihedral_deg <= 180.0, ErrorKind::InvalidArgument,
              "dihedral angle must lie in (0, 180]");
      break;
    case SurfaceKind::Sphere:
      require(surface.radius > 0.0, ErrorKind::InvalidArgument, "sphere radius must be > 0");
      break;
    case SurfaceKind::Staircase:
      require(surface.step_width > 0.0, ErrorKind::InvalidArgument, "step_width must be > 0");
      break;
  }
}

SyntheticScene generate(const SceneSpec& spec) {
  spec.validate();
  const PixelGrid& grid = spec.grid;
  SyntheticScene scene;
  scene.truth.distortion = spec.distortion;

  // Exact surface points.
  for (View v : kViews) {
    const CameraModel& cam = spec.cameras[static_cast<std::size_t>(index_of(v))];
    PointMap& truth = scene.truth.world_points[static_cast<std::size_t>(index_of(v))];
    truth = PointMap(grid);
    std::size_t hits = 0;
    for (int r = 0; r < grid.height(); ++r) {
      for (int c = 0; c < grid.width(); ++c) {
        const Vec3 d = cam.pixel_direction(r, c);
        const auto t = spec.surface.intersect(cam.center(), d);
        if (!t) continue;
        const auto i = static_cast<std::size_t>(grid.index(r, c));
        truth.points[i] = cam.center() + *t * d;
        truth.valid[i] = 1;
        truth.confidence[i] = 1.0;
        ++hits;
      }
    }
    require(2 * hits >= grid.size(), ErrorKind::Degenerate,
            std::string("synthetic surface misses more than half of the ") + (v == View::Ref ? "ref" : "src") +
                " view");
  }

  // Texture period in world units, from the median reference depth.
  const CameraModel& ref_cam = spec.cameras[0];
  std::vector<double> depths;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (scene.truth.world_points[0].valid[i]) depths.push_back(ref_cam.to_camera(scene.truth.world_points[0].points[i]).z());
  std::nth_element(depths.begin(), depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2), depths.end());
  const double period = spec.checker_period_px * depths[depths.size() / 2] / ref_cam.intrinsics()(0, 0);

  Rng noise(spec.seed);
  for (View v : kViews) {
    const auto w = static_cast<std::size_t>(index_of(v));
    const CameraModel& cam = spec.cameras[w];
    const PointMap& truth = scene.truth.world_points[w];
    ViewBundle& vb = scene.pair.view(v);
    vb.camera = cam;
    vb.pointmap = PointMap(grid);
    vb.normals = NormalMap(grid);
    vb.image = Image(grid, Vec3::Constant(0.5));
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!truth.valid[i]) continue;
      Vec3 p = cam.to_camera(spec.distortion[w].apply(truth.points[i]));
      if (spec.noise_sigma > 0.0) {
        const double s = spec.noise_sigma * std::abs(p.z());
        const double n0 = noise.normal(), n1 = noise.normal(), n2 = noise.normal();
        p += s * Vec3(n0, n1, n2);
      }
      vb.pointmap.points[i] = p;
      vb.pointmap.valid[i] = 1;
      vb.pointmap.confidence[i] = 1.0;
      if (spec.albedo == Albedo::Checker) vb.image.rgb[i] = Vec3::Constant(checker(truth.points[i], period));
    }
  }

  // True matches: reference surface points seen by the source camera near a pixel center.
  const CameraModel& src_cam = spec.cameras[1];
  const PointMap& tref = scene.truth.world_points[0];
  const PointMap& tsrc = scene.truth.world_points[1];
  auto& matches = scene.pair.matches;
  for (int r = 0; r < grid.height(); r += spec.match_stride) {
    for (int c = 0; c < grid.width(); c += spec.match_stride) {
      const auto i = static_cast<std::size_t>(grid.index(r, c));
      if (!tref.valid[i]) continue;
      const Vec3& X = tref.points[i];
      const auto rc = src_cam.project(X);
      if (!rc) continue;
      const auto j = nearest_pixel(grid, *rc);
      if (!j || !tsrc.valid[static_cast<std::size_t>(*j)]) continue;
      const Pixel pj = grid.pixel(*j);
      if ((*rc - Vec2(pj.row, pj.col)).norm() > 0.5) continue;
      const auto t = spec.surface.intersect(src_cam.center(), X - src_cam.center());
      if (!t || *t < 1.0 - 1e-9) continue;  // occluded from the source camera
      matches.push_back(Vec2(r, c), Vec2(pj.row, pj.col), true);
      scene.truth.inlier_labels.push_back(1);
    }
  }

  // Outliers: random valid pixel pairs, appended after the true matches.
  const std::size_t n_true = matches.size();
  const auto n_out = static_cast<std::size_t>(
      std::llround(spec.outlier_fraction * static_cast<double>(n_true) / (1.0 - spec.outlier_fraction)));
  if (n_out > 0) {
    std::array<std::vector<int>, 2> valid_idx;
    for (std::size_t w = 0; w < 2; ++w)
      for (std::size_t i = 0; i < grid.size(); ++i)
        if (scene.truth.world_points[w].valid[i]) valid_idx[w].push_back(static_cast<int>(i));
    Rng rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
    for (std::size_t k = 0; k < n_out; ++k) {
      const Pixel a = grid.pixel(valid_idx[0][rng.below(valid_idx[0].size())]);
      const Pixel b = grid.pixel(valid_idx[1][rng.below(valid_idx[1].size())]);
      matches.push_back(Vec2(a.row, a.col), Vec2(b.row, b.col), true);
      scene.truth.inlier_labels.push_back(0);
    }
  }
  return scene;
}

void write_bundle(const SyntheticScene& scene, const std::filesystem::path& dir) {
  save_bundle(dir, scene.pair, "scene");
  const PixelGrid& g = scene.pair.ref.pointmap.grid;
  const std::vector<std::size_t> shape{static_cast<std::size_t>(g.height()), static_cast<std::size_t>(g.width()), 3};
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> members;
  for (View v : kViews) {
    const PointMap& pm = scene.truth.world_points[static_cast<std::size_t>(index_of(v))];
    std::vector<double> data(3 * pm.points.size(), kNaN);
    for (std::size_t i = 0; i < pm.points.size(); ++i)
      if (pm.valid[i])
        for (int c = 0; c < 3; ++c) data[3 * i + static_cast<std::size_t>(c)] = pm.points[i][c];
    members.emplace_back(std::string("true_points_") + (v == View::Ref ? "ref" : "src"),
                         encode_npy(shape, std::span<const double>(data)));
  }
  std::vector<double> alpha, beta;
  for (const auto& a : scene.truth.distortion) {
    alpha.push_back(a.scale);
    for (int c = 0; c < 3; ++c) beta.push_back(a.shift[c]);
  }
  members.emplace_back("true_alpha", encode_npy({2}, std::span<const double>(alpha)));
  members.emplace_back("true_beta", encode_npy({2, 3}, std::span<const double>(beta)));
  const auto& labels = scene.truth.inlier_labels;
  members.emplace_back("inlier_labels", encode_npy({labels.size()}, "|u1", to_bytes(labels)));
  write_npz(dir / "ground_truth.npz", members);
}

SceneSpec parse_scene_spec(const json& j) {
  reject_unknown(j,
                 {"width", "height", "surface", "focal", "baseline", "cameras", "noise_sigma", "distortion",
                  "outlier_fraction", "seed", "albedo", "checker_period_px", "match_stride"},
                 "spec");
  SceneSpec s;
  s.grid = PixelGrid(j.value("width", 64), j.value("height", 48));

  if (j.contains("surface")) {
    const json& js = j.at("surface");
    reject_unknown(js, {"type", "normal", "offset", "dihedral_deg", "center", "radius", "step_height", "step_width"},
                   "surface");
    const std::string type = js.value("type", "plane");
    SurfaceSpec& f = s.surface;
    if (type == "plane") {
      f.kind = SurfaceKind::Plane;
    } else if (type == "two_planes") {
      f.kind = SurfaceKind::TwoPlanes;
    } else if (type == "sphere") {
      f.kind = SurfaceKind::Sphere;
    } else if (type == "staircase") {
      f.kind = SurfaceKind::Staircase;
    } else {
      fail(ErrorKind::InvalidArgument, "synth spec: unknown surface type '" + type + "'");
    }
    if (js.contains("normal")) f.normal = read_vec3(js.at("normal"), "normal");
    if (js.contains("center")) f.center = read_vec3(js.at("center"), "center");
    f.offset = js.value("offset", f.offset);
    f.dihedral_deg = js.value("dihedral_deg", f.dihedral_deg);
    f.radius = js.value("radius", f.radius);
    f.step_height = js.value("step_height", f.step_height);
    f.step_width = js.value("step_width", f.step_width);
  }

  if (j.contains("cameras")) {
    require(!j.contains("focal") && !j.contains("baseline"), ErrorKind::InvalidArgument,
            "synth spec: give either 'cameras' or 'focal'/'baseline'");
    const json& jc = j.at("cameras");
    require(jc.is_array() && jc.size() == 2, ErrorKind::InvalidArgument, "synth spec: 'cameras' needs two entries");
    for (std::size_t v = 0; v < 2; ++v) {
      reject_unknown(jc[v], {"intrinsics", "rotation", "translation"}, "camera");
      s.cameras[v] = CameraModel(read_mat3(jc[v].at("intrinsics"), "intrinsics"),
                                 read_mat3(jc[v].at("rotation"), "rotation"),
                                 read_vec3(jc[v].at("translation"), "translation"));
    }
  } else {
    s.cameras = SceneSpec::stereo_cameras(s.grid, j.value("focal", 32.0), j.value("baseline", 0.5));
  }

  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  if (j.contains("distortion")) {
    const json& jd = j.at("distortion");
    reject_unknown(jd, {"ref", "src"}, "distortion");
    if (jd.contains("ref")) s.distortion[0] = read_affine(jd.at("ref"), "distortion.ref");
    if (jd.contains("src")) s.distortion[1] = read_affine(jd.at("src"), "distortion.src");
  }
  s.outlier_fraction = j.value("outlier_fraction", s.outlier_fraction);
  s.seed = j.value("seed", s.seed);
  const std::string albedo = j.value("albedo", "checker");
  require(albedo == "checker" || albedo == "uniform", ErrorKind::InvalidArgument,
          "synth spec: albedo must be 'checker' or 'uniform'");
  s.albedo = albedo == "checker" ? Albedo::Checker : Albedo::Uniform;
  s.checker_period_px = j.value("checker_period_px", s.checker_period_px);
  s.match_stride = j.value("match_stride", s.match_stride);
  s.validate();
  return s;
}

SceneSpec read_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open synth spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, "synth spec " + path.string() + ": " + e.what());
  }
  try {
    return parse_scene_spec(j);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, "synth spec " + path.string() + ": " + e.what());
  }
}

}  // namespace more
