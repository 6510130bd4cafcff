// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Graph-based refinement of two world-frame point maps.
//
// Nodes are pixels of both views; each node carries a 3D point and a normal.
// Edges encode local-plane constraints inside a view (pixel windows), across
// views (matched pixels and their windows) and between 3D nearest neighbors,
// and every node is tied to its viewing ray and to its initial geometry.
//
// Every norm or absolute value in the loss is smoothed as
// sqrt(x.x + eps^2) - eps with eps = 1e-8: zero at x = 0, differentiable
// everywhere, and within eps of the exact norm.

#pragma once

#include <array>
#include <vector>

#include "more/core_model.hpp"

namespace more {

constexpr double kSmoothingEps = 1e-8;

struct RefinementState {
  std::array<PointMap, 2> points;    // world frame
  std::array<NormalMap, 2> normals;  // free 3-vectors, renormalized by the optimizer
  std::array<double, 2> scale{1.0, 1.0};  // similarity scale per view

  PointMap& points_of(View v) { return points[index_of(v)]; }
  const PointMap& points_of(View v) const { return points[index_of(v)]; }
  NormalMap& normals_of(View v) { return normals[index_of(v)]; }
  const NormalMap& normals_of(View v) const { return normals[index_of(v)]; }

  /// A node takes part in the optimization when both its point and its normal are valid.
  bool active(View v, int i) const { return points_of(v).is_valid(i) && normals_of(v).is_valid(i); }
};

/// Gradient with the layout of a RefinementState.
struct StateGradient {
  std::array<std::vector<Vec3>, 2> points;
  std::array<std::vector<Vec3>, 2> normals;
  std::array<double, 2> scale{0.0, 0.0};

  StateGradient() = default;
  explicit StateGradient(const RefinementState& s);
  void set_zero();
  double squared_norm() const;
};

struct WeightedEdge {
  int from = 0;  // pixel index in the owning view
  int to = 0;    // pixel index (same view for intra, other view for kNN)
  double weight = 0.0;
};

/// First sum of the cross-view term: anchor pixel i and a pixel j' in the
/// window of its match j in the other view.
struct InterEdge {
  int anchor = 0;
  int neighbor = 0;
  double weight = 0.0;
};

/// Second sum: anchor i, i' = i + d, j' = j + d for a shared pixel offset d.
struct PairedEdge {
  int anchor = 0;
  int anchor_neighbor = 0;
  int other_neighbor = 0;
  int other = 0;  // the match j itself
  double weight = 0.0;
};

struct RayAnchor {
  int pixel = 0;
  Vec3 origin;
  Vec3 axis;  // R K^-1 (col + .5, row + .5, 1), unnormalized
  double inv_norm = 1.0;

  Vec3 direction() const { return axis * inv_norm; }
};

struct ViewPriors {
  std::vector<Vec3> points;   // initial point map
  std::vector<Vec3> normals;  // initial normal map
  std::vector<double> mask;   // 1 where confidence >= threshold
  std::vector<double> radius; // smoothed distance of each prior point to the centroid
  Vec3 centroid = Vec3::Zero();
};

struct RefinementGraph {
  std::array<std::vector<int>, 2> nodes;  // active pixels per view, ascending
  std::array<std::vector<WeightedEdge>, 2> intra;  // per view
  std::array<std::vector<InterEdge>, 2> inter;     // per anchor view
  std::array<std::vector<PairedEdge>, 2> paired;   // per anchor view
  std::array<std::vector<WeightedEdge>, 2> knn;    // per query view
  std::array<std::vector<RayAnchor>, 2> rays;
  std::array<ViewPriors, 2> priors;
  std::vector<std::pair<int, int>> matches;  // (ref pixel, src pixel), both active
};

/// Bilateral 2D edge weight between pixels l and l2 of one image:
/// exp(-D / (2 sigma_int^2)) * exp(-|l - l2|^2 / (2 sigma_spa^2)), with D the
/// squared RGB patch difference summed over the in-bounds overlap of the two
/// patches and divided by the overlap pixel count.
double weight_2d(const Image& image, Pixel l, Pixel l2, int patch_radius, double sigma_int, double sigma_spa);

/// Cross-view 3D edge weight from color and normal similarity; values below
/// 1e-100 are clamped to 0.
double weight_3d(const Vec3& color_i, const Vec3& color_j, const Vec3& n_i, const Vec3& n_j, double sigma_int);

/// Builds every edge list. `pair` supplies images, cameras, inlier matches and
/// the priors (its point maps and normal maps); `state` defines the active
/// nodes and the current geometry used for the kNN search.
/// Throws Degenerate when a view has no active node.
RefinementGraph build_graph(const ScenePair& pair, const RefinementState& state, const RefinementConfig& cfg);

/// Recomputes kNN edges and their weights from the current state.
void refresh_knn(RefinementGraph& graph, const ScenePair& pair, const RefinementState& state,
                 const RefinementConfig& cfg);

// Individual loss terms. Each returns its unweighted value; when `grad` is
// given, weight * dL/dparam is added to it.
double loss_intra(const RefinementState& s, const RefinementGraph& g, View v, double gamma,
                  StateGradient* grad = nullptr, double weight = 1.0);
/// Cross-view term anchored in `anchor` (the mirrored direction is a separate call).
double loss_inter(const RefinementState& s, const RefinementGraph& g, View anchor, double gamma, double rho,
                  StateGradient* grad = nullptr, double weight = 1.0);
/// kNN term with `query` as the query view.
double loss_knn(const RefinementState& s, const RefinementGraph& g, View query, StateGradient* grad = nullptr,
                double weight = 1.0);
double loss_ray(const RefinementState& s, const RefinementGraph& g, View v, StateGradient* grad = nullptr,
                double weight = 1.0);
double loss_similarity(const RefinementState& s, const RefinementGraph& g, View v, StateGradient* grad = nullptr,
                       double weight = 1.0);
double loss_normal_prior(const RefinementState& s, const RefinementGraph& g, View v, StateGradient* grad = nullptr,
                         double weight = 1.0);

/// Weighted total over both views. `grad`, when given, is overwritten.
/// Throws NonFinite naming the first offending term.
LossTerms total_loss_and_grad(const RefinementState& s, const RefinementGraph& g, const RefinementConfig& cfg,
                              StateGradient* grad = nullptr);

}  // namespace more
