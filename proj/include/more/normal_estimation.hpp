// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "more/core_model.hpp"

namespace more {

/// Per-pixel normals from cross products of neighboring point differences.
///
/// Each valid pixel averages the cross products of its adjacent 4-neighbor
/// pairs (right x down, down x left, left x up, up x right) whose members are
/// both valid, normalizes the sum and flips it to face the camera center.
/// Pixels with fewer than two valid 4-neighbors, or whose summed cross product
/// has norm below 1e-12, are invalid in the output.
NormalMap normals_from_pointmap(const PointMap& pm, const CameraModel& cam);

}  // namespace more
