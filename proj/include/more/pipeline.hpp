// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end stages shared by the C API and the tests: config files,
// alignment of a loaded bundle, and refinement into a ResultBundle.

#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "more/alignment.hpp"
#include "more/core_model.hpp"
#include "more/optimizer.hpp"
#include "more/tensor_io.hpp"

namespace more {

/// JSON keys mirror RefinementConfig field names; missing keys keep their
/// defaults and unknown keys are errors. ransac.threshold takes a number or
/// the string "adaptive".
RefinementConfig parse_config(const nlohmann::json& j);
RefinementConfig read_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RefinementConfig& cfg);

struct AlignedPair {
  ScenePair world;  // world frame, src aligned onto ref, matches flagged by RANSAC, normals estimated
  AffineAlignment alignment;
  std::size_t inlier_count = 0;
  std::optional<RansacReport> ransac;
};

/// Moves both views of a camera-frame pair into the world frame.
ScenePair to_world(const ScenePair& camera_pair);

/// RANSAC (when enabled) then the depth-weighted L1 scale/shift fit on the
/// surviving matches; the result is applied to the source view.
AlignedPair align_pair(const ScenePair& camera_pair, const RansacConfig& ransac);

/// Applies a known alignment instead of estimating one. Matches are all inliers.
AlignedPair apply_known_alignment(const ScenePair& camera_pair, const AffineAlignment& alignment);

/// Runs the multi-scale refinement and packages the outcome. On a non-finite
/// loss RefinementAborted propagates.
ResultBundle refine_aligned(const AlignedPair& aligned, const RefinementConfig& cfg);

}  // namespace more
