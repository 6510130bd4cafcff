// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Scene builders and independent oracles shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "more/core_model.hpp"
#include "more/graph_refine.hpp"
#include "more/kdtree.hpp"
#include "more/normal_estimation.hpp"
#include "more/pipeline.hpp"
#include "more/synth.hpp"

namespace more::test {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("more_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// All-pairs kNN, ordered by (squared distance, id).
inline std::vector<Neighbor> brute_knn(const std::vector<Vec3>& pts, const std::vector<int>& ids, const Vec3& q, int k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({ids[i], (pts[i] - q).squaredNorm()});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
  });
  all.resize(std::min(all.size(), static_cast<std::size_t>(k)));
  return all;
}

/// Percentile by linear interpolation between order statistics (position q * (n - 1)).
inline double percentile_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Weighted L1 objective sum_i w_i * ||a * src_i + b - ref_i||_1.
inline double l1_objective(double a, const Vec3& b, const std::vector<Vec3>& ref, const std::vector<Vec3>& src,
                           const std::vector<double>& w) {
  double f = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) f += w[i] * (a * src[i] + b - ref[i]).lpNorm<1>();
  return f;
}

/// Minimizer of sum_i w_i |x_i - b| over b (lower weighted median).
inline double weighted_median(std::vector<std::pair<double, double>> xw) {
  std::sort(xw.begin(), xw.end());
  double total = 0.0;
  for (const auto& p : xw) total += p.second;
  double acc = 0.0;
  for (const auto& p : xw) {
    acc += p.second;
    if (acc >= 0.5 * total) return p.first;
  }
  return xw.back().first;
}

/// Best shift for a fixed scale: one weighted median per coordinate.
inline Vec3 best_shift(double a, const std::vector<Vec3>& ref, const std::vector<Vec3>& src,
                       const std::vector<double>& w) {
  Vec3 b;
  for (int c = 0; c < 3; ++c) {
    std::vector<std::pair<double, double>> xw;
    for (std::size_t i = 0; i < ref.size(); ++i) xw.emplace_back(ref[i][c] - a * src[i][c], w[i]);
    b[c] = weighted_median(std::move(xw));
  }
  return b;
}

/// Exhaustive search on a cells^4 grid of (scale, shift) centered at `center`
/// with half-widths `span_a`, `span_b`. The objective separates over the three
/// shift coordinates, so the full grid minimum is found exactly at cost
/// cells * 3 * cells * N instead of cells^4 * N.
inline double grid_search_l1(const AffineAlignment& center, double span_a, double span_b, int cells,
                             const std::vector<Vec3>& ref, const std::vector<Vec3>& src, const std::vector<double>& w) {
  double best = std::numeric_limits<double>::infinity();
  for (int ia = 0; ia < cells; ++ia) {
    const double a = center.scale - span_a + 2.0 * span_a * ia / (cells - 1);
    double f = 0.0;
    for (int c = 0; c < 3; ++c) {
      double fc = std::numeric_limits<double>::infinity();
      for (int ib = 0; ib < cells; ++ib) {
        const double b = center.shift[c] - span_b + 2.0 * span_b * ib / (cells - 1);
        double s = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) s += w[i] * std::abs(a * src[i][c] + b - ref[i][c]);
        fc = std::min(fc, s);
      }
      f += fc;
    }
    best = std::min(best, f);
  }
  return best;
}

/// Exact minimum: min over shift is a weighted median, and the remaining
/// function of the scale is convex, so a ternary search converges to it.
inline double exact_l1_minimum(double lo, double hi, const std::vector<Vec3>& ref, const std::vector<Vec3>& src,
                               const std::vector<double>& w) {
  const auto g = [&](double a) { return l1_objective(a, best_shift(a, ref, src, w), ref, src, w); };
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (g(m1) <= g(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return g(0.5 * (lo + hi));
}

/// Two cameras 0.5 apart (f = 32, principal point at the image center) viewing
/// the plane z = 4. Every coordinate is a dyadic rational, so the point maps,
/// matches (4 px disparity) and normals are exact.
inline SceneSpec planar_spec(int width = 16, int height = 12) {
  SceneSpec s;
  s.grid = PixelGrid(width, height);
  s.cameras = SceneSpec::stereo_cameras(s.grid, 32.0, 0.5);
  s.surface.kind = SurfaceKind::Plane;
  s.surface.normal = Vec3(0.0, 0.0, 1.0);
  s.surface.offset = 4.0;
  return s;
}

/// Aligned world-frame pair plus the matching initial state.
struct Problem {
  ScenePair pair;
  RefinementState state;
};

inline RefinementState state_from(const ScenePair& pair) {
  RefinementState s;
  for (View v : kViews) {
    s.points_of(v) = pair.view(v).pointmap;
    s.normals_of(v) = pair.view(v).normals;
  }
  return s;
}

inline Problem planar_problem(int width = 16, int height = 12) {
  const SyntheticScene scene = generate(planar_spec(width, height));
  Problem p;
  p.pair = apply_known_alignment(scene.pair, AffineAlignment{}).world;
  p.state = state_from(p.pair);
  return p;
}

/// Random 8x6 two-view problem: priors and state are independently jittered
/// surfaces with random unit normals, random colors, a few invalid pixels and
/// random matches; s_ref, s_src differ from 1 so every term is active.
inline Problem random_problem(std::uint64_t seed, int width = 8, int height = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PixelGrid g(width, height);
  const auto cams = SceneSpec::stereo_cameras(g, 6.0, 0.4);
  Problem p;
  for (View v : kViews) {
    ViewBundle& vb = p.pair.view(v);
    vb.camera = cams[static_cast<std::size_t>(index_of(v))];
    vb.image = Image(g);
    vb.pointmap = PointMap(g);
    vb.normals = NormalMap(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Pixel px = g.pixel(static_cast<int>(i));
      vb.image.rgb[i] = Vec3(0.5 + 0.05 * u(rng), 0.5 + 0.05 * u(rng), 0.5 + 0.05 * u(rng));
      const double z = 2.0 + 0.2 * u(rng);
      const Vec3 dir = vb.camera.pixel_direction(px.row, px.col);
      vb.pointmap.points[i] = vb.camera.center() + z * dir + 0.05 * Vec3(u(rng), u(rng), u(rng));
      vb.pointmap.confidence[i] = 0.5 + 0.5 * u(rng);
      vb.pointmap.valid[i] = (i % 13 == 5) ? 0 : 1;
      vb.normals.normals[i] = Vec3(0.3 * u(rng), 0.3 * u(rng), -1.0).normalized();
      vb.normals.valid[i] = (i % 17 == 3) ? 0 : 1;
    }
  }
  for (int k = 0; k < 12; ++k) {
    const Pixel a = g.pixel(static_cast<int>(rng() % g.size()));
    const Pixel b = g.pixel(static_cast<int>(rng() % g.size()));
    p.pair.matches.push_back(Vec2(a.row, a.col), Vec2(b.row, b.col), true);
  }
  p.state = state_from(p.pair);
  for (View v : kViews) {
    const CameraModel& cam = p.pair.view(v).camera;
    auto& pts = p.state.points_of(v).points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      pts[i] += 0.03 * Vec3(u(rng), u(rng), u(rng));
      // Keep points off their viewing ray: the distance to the ray has curvature
      // 1/d there, which central differences with h = 1e-5 cannot resolve.
      const Pixel px = g.pixel(static_cast<int>(i));
      const Vec3 dir = cam.pixel_direction(px.row, px.col).normalized();
      const Vec3 rel = pts[i] - cam.center();
      const Vec3 perp = rel - rel.dot(dir) * dir;
      if (perp.norm() < 0.01) {
        const Vec3 away = perp.norm() > 0.0 ? Vec3(perp.normalized()) : dir.unitOrthogonal();
        pts[i] += (0.01 - perp.norm()) * away;
      }
    }
    for (auto& n : p.state.normals_of(v).normals) n = (n + 0.2 * Vec3(u(rng), u(rng), u(rng))).normalized();
  }
  p.state.scale = {1.1, 0.93};
  return p;
}

/// Largest relative mismatch between the analytic gradient of `fn` and central
/// differences with step h over every point, normal and scale parameter.
/// Relative error uses max(|analytic|, |numeric|, floor) as the denominator.
template <typename Fn>
double max_gradient_error(const RefinementState& state, Fn&& fn, double h = 1e-5, double floor = 1e-3) {
  RefinementState s = state;
  StateGradient g(s);
  fn(s, &g);
  double worst = 0.0;
  const auto probe = [&](double& x, double analytic) {
    const double x0 = x;
    x = x0 + h;
    const double fp = fn(s, nullptr);
    x = x0 - h;
    const double fm = fn(s, nullptr);
    x = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < s.points[v].points.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        probe(s.points[v].points[i][c], g.points[v][i][c]);
        probe(s.normals[v].normals[i][c], g.normals[v][i][c]);
      }
    }
    probe(s.scale[v], g.scale[v]);
  }
  return worst;
}

/// Mean distance between matched refined points, over labeled-true matches.
inline double mean_match_residual(const PointMap& ref, const PointMap& src, const CorrespondenceSet& m,
                                  const std::vector<std::uint8_t>& labels) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!labels[k]) continue;
    const auto i = nearest_pixel(ref.grid, m.ref_pixels[k]);
    const auto j = nearest_pixel(src.grid, m.src_pixels[k]);
    if (!i || !j || !ref.is_valid(*i) || !src.is_valid(*j)) continue;
    sum += (ref.points[static_cast<std::size_t>(*i)] - src.points[static_cast<std::size_t>(*j)]).norm();
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace more::test
