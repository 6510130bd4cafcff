// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>

#include "more/error.hpp"
#include "more/parallel.hpp"

namespace more {
namespace {

constexpr double kResidualFloor = 1e-6;
constexpr double kRelTol = 1e-10;
constexpr int kMaxIrlsIters = 100;

double median_of(std::vector<double> v) {
  require(!v.empty(), ErrorKind::Degenerate, "median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// Unweighted closed form used on RANSAC minimal samples.
bool fit_unweighted(const Vec3* ref, const Vec3* src, int n, AffineAlignment& out) {
  Vec3 rm = Vec3::Zero(), sm = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    rm += ref[k];
    sm += src[k];
  }
  rm /= n;
  sm /= n;
  double num = 0.0, den = 0.0;
  for (int k = 0; k < n; ++k) {
    num += (src[k] - sm).dot(ref[k] - rm);
    den += (src[k] - sm).squaredNorm();
  }
  if (!(den > 1e-300)) return false;
  out.scale = num / den;
  out.shift = rm - out.scale * sm;
  return std::isfinite(out.scale) && out.scale > 0.0 && out.shift.allFinite();
}

void check_inputs(std::span<const Vec3> ref, std::span<const Vec3> src) {
  require(ref.size() == src.size(), ErrorKind::InvalidArgument, "reference and source point lists differ in length");
  require(ref.size() >= 3, ErrorKind::Degenerate, "scale/shift alignment needs at least 3 correspondences");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : src) mean += p;
  mean /= static_cast<double>(src.size());
  double spread = 0.0, mag = 0.0;
  for (const auto& p : src) {
    spread = std::max(spread, (p - mean).norm());
    mag = std::max(mag, p.norm());
  }
  require(spread > 1e-12 * std::max(1.0, mag), ErrorKind::Degenerate,
          "scale unobservable: source points are all identical");
}

}  // namespace

MatchedPoints gather_matched_points(const ScenePair& pair, bool inliers_only) {
  MatchedPoints out;
  const auto& m = pair.matches;
  const PointMap& ref = pair.ref.pointmap;
  const PointMap& src = pair.src.pointmap;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (inliers_only && !m.inlier[k]) continue;
    const auto i = nearest_pixel(ref.grid, m.ref_pixels[k]);
    const auto j = nearest_pixel(src.grid, m.src_pixels[k]);
    if (!i || !j || !ref.is_valid(*i) || !src.is_valid(*j)) continue;
    out.ref.push_back(ref.points[static_cast<std::size_t>(*i)]);
    out.src.push_back(src.points[static_cast<std::size_t>(*j)]);
    out.ref_depth.push_back(pair.ref.camera.to_camera(out.ref.back()).z());
    out.match_index.push_back(static_cast<int>(k));
  }
  return out;
}

std::pair<CorrespondenceSet, RansacReport> filter_matches_ransac(const ScenePair& pair, const RansacConfig& cfg) {
  const MatchedPoints mp = gather_matched_points(pair);
  const int n = static_cast<int>(mp.ref.size());
  require(n >= 3, ErrorKind::Degenerate,
          "RANSAC needs at least 3 matches on valid pixels, found " + std::to_string(n));

  RansacReport report;
  report.threshold_used = cfg.threshold ? *cfg.threshold : 0.05 * median_of(mp.ref_depth);
  require(report.threshold_used > 0.0 && std::isfinite(report.threshold_used), ErrorKind::Degenerate,
          "RANSAC threshold must be positive; matched reference depths are not");

  std::mt19937_64 rng(cfg.seed);
  std::vector<double> residual(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> best_mask;
  std::size_t best_count = 0;
  double best_cost = 0.0;

  for (int it = 0; it < cfg.max_iters; ++it) {
    report.iterations_run = it + 1;
    int s[3];
    s[0] = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    do s[1] = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    while (s[1] == s[0]);
    do s[2] = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    while (s[2] == s[0] || s[2] == s[1]);

    const Vec3 r3[3] = {mp.ref[s[0]], mp.ref[s[1]], mp.ref[s[2]]};
    const Vec3 s3[3] = {mp.src[s[0]], mp.src[s[1]], mp.src[s[2]]};
    AffineAlignment model;
    if (!fit_unweighted(r3, s3, 3, model)) continue;

    parallel_for(residual.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t k = b; k < e; ++k) residual[k] = (model.apply(mp.src[k]) - mp.ref[k]).norm();
    });
    std::size_t count = 0;
    double cost = 0.0;
    for (double r : residual) {
      if (r < report.threshold_used) {
        ++count;
        cost += r;
      }
    }
    if (count > best_count || (count == best_count && count > 0 && cost < best_cost)) {
      best_count = count;
      best_cost = cost;
      report.model = model;
      best_mask.assign(residual.size(), 0);
      for (std::size_t k = 0; k < residual.size(); ++k) best_mask[k] = residual[k] < report.threshold_used;
      if (best_count == residual.size()) break;
    }
  }
  require(best_count > 0, ErrorKind::Degenerate,
          "RANSAC found no inliers; increase ransac.threshold (used " + std::to_string(report.threshold_used) + ")");

  CorrespondenceSet out = pair.matches;
  std::fill(out.inlier.begin(), out.inlier.end(), 0);
  for (int k = 0; k < n; ++k) {
    if (best_mask[static_cast<std::size_t>(k)]) out.inlier[static_cast<std::size_t>(mp.match_index[k])] = 1;
  }
  report.inlier_count = best_count;
  return {std::move(out), report};
}

AffineAlignment fit_scale_shift_weighted(std::span<const Vec3> ref, std::span<const Vec3> src,
                                         std::span<const double> weights) {
  check_inputs(ref, src);
  require(weights.size() == 3 * ref.size(), ErrorKind::InvalidArgument, "expected one weight per coordinate");
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
  Eigen::Vector4d b = Eigen::Vector4d::Zero();
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double u = weights[3 * i + static_cast<std::size_t>(c)];
      const double s = src[i][c], r = ref[i][c];
      A(0, 0) += u * s * s;
      A(0, 1 + c) += u * s;
      A(1 + c, 1 + c) += u;
      b(0) += u * s * r;
      b(1 + c) += u * r;
    }
  }
  for (int c = 0; c < 3; ++c) A(1 + c, 0) = A(0, 1 + c);
  const Eigen::Vector4d x = A.ldlt().solve(b);
  require(x.allFinite(), ErrorKind::Degenerate, "scale unobservable: weighted normal equations are singular");
  return {x(0), x.tail<3>()};
}

double scale_shift_objective(const AffineAlignment& a, std::span<const Vec3> ref, std::span<const Vec3> src,
                             std::span<const double> ref_depths) {
  double sum = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    sum += (a.apply(src[i]) - ref[i]).lpNorm<1>() / ref_depths[i];
  }
  return sum;
}

L1Solve solve_scale_shift_l1(std::span<const Vec3> ref, std::span<const Vec3> src, std::span<const double> ref_depths) {
  check_inputs(ref, src);
  require(ref_depths.size() == ref.size(), ErrorKind::InvalidArgument, "one reference depth per correspondence");
  for (double z : ref_depths) {
    require(std::isfinite(z) && z > 0.0, ErrorKind::InvalidArgument, "reference depths must be positive");
  }

  const std::size_t n = ref.size();
  std::vector<double> u(3 * n);
  for (std::size_t i = 0; i < n; ++i) u[3 * i] = u[3 * i + 1] = u[3 * i + 2] = 1.0 / ref_depths[i];

  L1Solve out;
  out.alignment = fit_scale_shift_weighted(ref, src, u);
  out.initial_objective = scale_shift_objective(out.alignment, ref, src, ref_depths);
  out.objective_history.push_back(out.initial_objective);

  double f = out.initial_objective;
  for (int it = 0; it < kMaxIrlsIters && f > 0.0; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 r = out.alignment.apply(src[i]) - ref[i];
      for (int c = 0; c < 3; ++c) {
        u[3 * i + static_cast<std::size_t>(c)] = 1.0 / (ref_depths[i] * std::max(std::abs(r[c]), kResidualFloor));
      }
    }
    const AffineAlignment next = fit_scale_shift_weighted(ref, src, u);
    const double f_next = scale_shift_objective(next, ref, src, ref_depths);
    if (!(f_next <= f) || !(next.scale > 0.0)) break;
    out.alignment = next;
    out.objective_history.push_back(f_next);
    out.iterations = it + 1;
    const double rel = (f - f_next) / std::max(f, 1e-300);
    f = f_next;
    if (rel < kRelTol) break;
  }
  require(std::isfinite(out.alignment.scale) && out.alignment.scale > 0.0, ErrorKind::Degenerate,
          "alignment produced a nonpositive scale");
  return out;
}

double clamp_shift_iqr(std::span<const double> depths, double shift) {
  std::vector<double> v;
  v.reserve(depths.size());
  for (double d : depths) {
    if (std::isfinite(d)) v.push_back(d);
  }
  require(v.size() >= 4, ErrorKind::InvalidArgument, "IQR clamp needs at least 4 finite depth values");
  std::sort(v.begin(), v.end());
  const auto pct = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  const double bound = 0.5 * (pct(0.75) - pct(0.25));
  return std::clamp(shift, -bound, bound);
}

PointMap apply_alignment(const PointMap& pm, const AffineAlignment& a) {
  PointMap out = pm;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    if (out.valid[i]) out.points[i] = a.apply(pm.points[i]);
  }
  return out;
}

}  // namespace more
