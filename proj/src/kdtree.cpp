// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/kdtree.hpp"

#include <algorithm>

#include "more/error.hpp"

namespace more {
namespace {

constexpr int kLeafSize = 8;

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

// Keeps the k best in `heap` as a max-heap under `closer`.
void offer(std::vector<Neighbor>& heap, int k, const Neighbor& cand) {
  if (static_cast<int>(heap.size()) < k) {
    heap.push_back(cand);
    std::push_heap(heap.begin(), heap.end(), closer);
  } else if (closer(cand, heap.front())) {
    std::pop_heap(heap.begin(), heap.end(), closer);
    heap.back() = cand;
    std::push_heap(heap.begin(), heap.end(), closer);
  }
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points, std::span<const int> ids)
    : points_(points.begin(), points.end()), ids_(ids.begin(), ids.end()) {
  require(points.size() == ids.size(), ErrorKind::InvalidArgument, "kd-tree points and ids differ in length");
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double pa = points_[a][axis], pb = points_[b][axis];
    return pa < pb || (pa == pb && a < b);
  });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& n = nodes_[id];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(int node_id, const Vec3& q, int k, std::vector<Neighbor>& heap) const {
  const Node& n = nodes_[node_id];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int p = order_[i];
      offer(heap, k, {ids_[p], (points_[p] - q).squaredNorm()});
    }
    return;
  }
  const double d = q[n.axis] - n.split;
  const int near = d < 0.0 ? n.left : n.right;
  const int far = d < 0.0 ? n.right : n.left;
  search(near, q, k, heap);
  // Equality keeps equidistant candidates reachable for the id tie-break.
  if (static_cast<int>(heap.size()) < k || d * d <= heap.front().dist2) search(far, q, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, int k) const {
  std::vector<Neighbor> heap;
  if (k <= 0 || nodes_.empty()) return heap;
  heap.reserve(static_cast<std::size_t>(k) + 1);
  search(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

Neighbor KdTree::nearest(const Vec3& query) const {
  auto nb = knn(query, 1);
  require(!nb.empty(), ErrorKind::Degenerate, "nearest-neighbor query on an empty tree");
  return nb.front();
}

}  // namespace more
