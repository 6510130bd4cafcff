// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Coarse-to-fine Adam optimization of a RefinementState.

#pragma once

#include <vector>

#include "more/core_model.hpp"
#include "more/error.hpp"
#include "more/graph_refine.hpp"

namespace more {

struct AdamParams {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over the active nodes of a state; moments start at zero. Normals are
/// projected back to the unit sphere after every step.
class Adam {
 public:
  Adam(const AdamParams& params, const RefinementState& shape);

  void step(RefinementState& state, const StateGradient& grad, const RefinementGraph& graph);
  int steps_taken() const { return t_; }

 private:
  AdamParams p_;
  StateGradient m_;
  StateGradient v_;
  int t_ = 0;
};

/// One pyramid level: the aligned world-frame pair downsampled by 2^level with
/// normals re-estimated. Its point and normal maps are the level's priors.
struct PyramidLevel {
  int level = 0;
  ScenePair pair;
};

/// Averages each 2^l x 2^l block of valid points (confidence-weighted; a block
/// is valid with one valid source), block-averages images, rescales cameras,
/// maps inlier matches to the coarse grid (pixel-center convention, rounded)
/// dropping duplicates, and re-estimates normals. Throws Shape when the
/// coarse grid would be smaller than 2x2.
PyramidLevel build_pyramid_level(const ScenePair& world_pair, int level);

/// Transfers the coarse displacement (refined - initial) to the next finer
/// level by bilinear interpolation (renormalized over valid coarse samples),
/// adds it to the fine initial points and re-estimates normals there. The
/// similarity scales are carried over.
RefinementState upsample_delta(const RefinementState& coarse_refined, const PyramidLevel& coarse,
                               const PyramidLevel& fine);

/// Initial state for a level: points and normals equal the level priors.
RefinementState initial_state(const PyramidLevel& level);

struct LevelSummary {
  int level = 0;
  int iterations = 0;
  double initial_total = 0.0;
  double final_total = 0.0;
};

struct RefinementRun {
  RefinementState state;  // full resolution
  std::vector<TraceRow> trace;
  std::vector<LevelSummary> levels;  // in execution order (coarsest first)
};

/// Thrown when a loss turns non-finite; carries the run up to that point.
class RefinementAborted : public Error {
 public:
  RefinementAborted(const std::string& what, RefinementRun partial)
      : Error(ErrorKind::NonFinite, what), partial_(std::move(partial)) {}
  const RefinementRun& partial() const { return partial_; }

 private:
  RefinementRun partial_;
};

/// Runs levels L-1 down to 0. At each level the graph is rebuilt, kNN edges
/// are refreshed every knn_refresh_every iterations, and the loss evaluated
/// before every step is appended to the trace. A final evaluation after the
/// last step closes the trace, so it has (total iterations + 1) rows.
RefinementRun run_refinement(const ScenePair& aligned_world_pair, const RefinementConfig& cfg);

}  // namespace more
