// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "more/core_model.hpp"

namespace more {

struct Neighbor {
  int index = -1;  // caller-supplied id of the support point
  double dist2 = 0.0;
};

/// Static 3D k-d tree. Query results are ordered by (distance, id), which makes
/// neighbor sets deterministic when several support points are equidistant.
class KdTree {
 public:
  KdTree() = default;
  /// `ids[k]` labels `points[k]`; ids need not be contiguous.
  KdTree(std::span<const Vec3> points, std::span<const int> ids);

  std::size_t size() const { return points_.size(); }
  std::vector<Neighbor> knn(const Vec3& query, int k) const;
  Neighbor nearest(const Vec3& query) const;

 private:
  struct Node {
    int begin = 0, end = 0;  // leaf range into order_
    int left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };

  int build(int begin, int end);
  void search(int node, const Vec3& q, int k, std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<int> ids_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace more
