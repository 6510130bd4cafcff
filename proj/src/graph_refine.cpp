// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/graph_refine.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "more/error.hpp"
#include "more/kdtree.hpp"
#include "more/parallel.hpp"

namespace more {
namespace {

constexpr double kEps2 = kSmoothingEps * kSmoothingEps;
constexpr std::size_t kBlock = std::size_t{1} << 14;

struct Smooth {
  double value;  // sqrt(x.x + eps^2) - eps
  double inv;    // 1 / sqrt(x.x + eps^2); derivative is x * inv
};

Smooth smooth_abs(double x) {
  const double s = std::sqrt(x * x + kEps2);
  return {s - kSmoothingEps, 1.0 / s};
}

Smooth smooth_norm(const Vec3& x) {
  const double s = std::sqrt(x.squaredNorm() + kEps2);
  return {s - kSmoothingEps, 1.0 / s};
}

// One edge's loss value and the gradient blocks it touches. Contributions are
// computed in parallel and applied serially in edge order, so sums do not
// depend on the thread count.
struct Contribution {
  double value = 0.0;
  int n = 0;
  std::array<Vec3*, 4> target{};
  std::array<Vec3, 4> g;
  double* scalar_target = nullptr;
  double scalar_g = 0.0;

  void add(Vec3* t, const Vec3& v) {
    target[static_cast<std::size_t>(n)] = t;
    g[static_cast<std::size_t>(n)] = v;
    ++n;
  }
};

template <typename Item, typename Kernel>
double accumulate(const std::vector<Item>& items, StateGradient* grad, double weight, Kernel&& kernel) {
  std::vector<Contribution> buf(std::min(items.size(), kBlock));
  double total = 0.0;
  for (std::size_t b = 0; b < items.size(); b += kBlock) {
    const std::size_t e = std::min(items.size(), b + kBlock);
    parallel_for(e - b, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        buf[k] = Contribution{};
        kernel(items[b + k], buf[k]);
      }
    });
    for (std::size_t k = 0; k < e - b; ++k) {
      const Contribution& c = buf[k];
      total += c.value;
      if (!grad) continue;
      for (int t = 0; t < c.n; ++t) *c.target[static_cast<std::size_t>(t)] += weight * c.g[static_cast<std::size_t>(t)];
      if (c.scalar_target) *c.scalar_target += weight * c.scalar_g;
    }
  }
  return total;
}

std::size_t vi(View v) { return static_cast<std::size_t>(index_of(v)); }

}  // namespace

StateGradient::StateGradient(const RefinementState& s) {
  for (View v : kViews) {
    points[vi(v)].assign(s.points_of(v).points.size(), Vec3::Zero());
    normals[vi(v)].assign(s.normals_of(v).normals.size(), Vec3::Zero());
  }
}

void StateGradient::set_zero() {
  for (auto& p : points) std::fill(p.begin(), p.end(), Vec3::Zero());
  for (auto& n : normals) std::fill(n.begin(), n.end(), Vec3::Zero());
  scale = {0.0, 0.0};
}

double StateGradient::squared_norm() const {
  double s = scale[0] * scale[0] + scale[1] * scale[1];
  for (const auto& p : points)
    for (const auto& x : p) s += x.squaredNorm();
  for (const auto& n : normals)
    for (const auto& x : n) s += x.squaredNorm();
  return s;
}

// --- weights ---------------------------------------------------------------

double weight_2d(const Image& image, Pixel l, Pixel l2, int patch_radius, double sigma_int, double sigma_spa) {
  const PixelGrid& g = image.grid;
  double sum = 0.0;
  int count = 0;
  for (int dr = -patch_radius; dr <= patch_radius; ++dr) {
    for (int dc = -patch_radius; dc <= patch_radius; ++dc) {
      const int r1 = l.row + dr, c1 = l.col + dc, r2 = l2.row + dr, c2 = l2.col + dc;
      if (!g.contains(r1, c1) || !g.contains(r2, c2)) continue;
      sum += (image.rgb[static_cast<std::size_t>(g.index(r1, c1))] - image.rgb[static_cast<std::size_t>(g.index(r2, c2))])
                 .squaredNorm();
      ++count;
    }
  }
  const double patch = count > 0 ? sum / count : 0.0;
  const double dr = l.row - l2.row, dc = l.col - l2.col;
  return std::exp(-patch / (2.0 * sigma_int * sigma_int)) * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma_spa * sigma_spa));
}

double weight_3d(const Vec3& color_i, const Vec3& color_j, const Vec3& n_i, const Vec3& n_j, double sigma_int) {
  const double s2 = 2.0 * sigma_int * sigma_int;
  const double w = std::exp(-(color_i - color_j).squaredNorm() / s2) * std::exp(-(n_i - n_j).squaredNorm() / s2);
  return w < 1e-100 ? 0.0 : w;
}

// --- graph -----------------------------------------------------------------

void refresh_knn(RefinementGraph& graph, const ScenePair& pair, const RefinementState& state,
                 const RefinementConfig& cfg) {
  for (View q : kViews) {
    const View s = other(q);
    auto& edges = graph.knn[vi(q)];
    edges.clear();
    if (cfg.knn_k <= 0) continue;

    const auto& support_ids = graph.nodes[vi(s)];
    std::vector<Vec3> support;
    support.reserve(support_ids.size());
    for (int j : support_ids) support.push_back(state.points_of(s).points[static_cast<std::size_t>(j)]);
    const KdTree tree(support, support_ids);

    const auto& queries = graph.nodes[vi(q)];
    const auto k = static_cast<std::size_t>(cfg.knn_k);
    std::vector<WeightedEdge> slots(queries.size() * k, WeightedEdge{-1, -1, 0.0});
    const Image& qimg = pair.view(q).image;
    const Image& simg = pair.view(s).image;
    const auto& qn = state.normals_of(q).normals;
    const auto& sn = state.normals_of(s).normals;
    parallel_for(queries.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t a = lo; a < hi; ++a) {
        const int i = queries[a];
        const auto nb = tree.knn(state.points_of(q).points[static_cast<std::size_t>(i)], cfg.knn_k);
        for (std::size_t t = 0; t < nb.size(); ++t) {
          const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(nb[t].index);
          slots[a * k + t] = {i, nb[t].index, weight_3d(qimg.rgb[ui], simg.rgb[uj], qn[ui], sn[uj], cfg.sigma_int)};
        }
      }
    });
    for (const auto& e : slots) {
      if (e.from >= 0) edges.push_back(e);
    }
  }
}

RefinementGraph build_graph(const ScenePair& pair, const RefinementState& state, const RefinementConfig& cfg) {
  RefinementGraph graph;
  for (View v : kViews) {
    const PixelGrid& grid = state.points_of(v).grid;
    require(pair.view(v).image.grid == grid && pair.view(v).pointmap.grid == grid &&
                pair.view(v).normals.grid == grid && state.normals_of(v).grid == grid,
            ErrorKind::Shape, "refinement inputs disagree on the pixel grid");
    for (int i = 0; i < static_cast<int>(grid.size()); ++i) {
      if (state.active(v, i)) graph.nodes[vi(v)].push_back(i);
    }
    require(!graph.nodes[vi(v)].empty(), ErrorKind::Degenerate,
            std::string("no valid pixels in the ") + (v == View::Ref ? "reference" : "source") + " view");
  }

  const int R = cfg.neighbor_radius;
  const int window = (2 * R + 1) * (2 * R + 1);

  // Intra-view window edges.
  for (View v : kViews) {
    const PixelGrid& grid = state.points_of(v).grid;
    const Image& img = pair.view(v).image;
    const auto& nodes = graph.nodes[vi(v)];
    std::vector<WeightedEdge> slots(nodes.size() * static_cast<std::size_t>(window), WeightedEdge{-1, -1, 0.0});
    parallel_for(nodes.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t a = lo; a < hi; ++a) {
        const int i = nodes[a];
        const Pixel p = grid.pixel(i);
        int t = 0;
        for (int dr = -R; dr <= R; ++dr) {
          for (int dc = -R; dc <= R; ++dc, ++t) {
            if (dr == 0 && dc == 0) continue;
            const int r = p.row + dr, c = p.col + dc;
            if (!grid.contains(r, c) || !state.active(v, grid.index(r, c))) continue;
            slots[a * static_cast<std::size_t>(window) + static_cast<std::size_t>(t)] = {
                i, grid.index(r, c), weight_2d(img, p, {r, c}, cfg.patch_radius, cfg.sigma_int, cfg.sigma_spa)};
          }
        }
      }
    });
    for (const auto& e : slots) {
      if (e.from >= 0) graph.intra[vi(v)].push_back(e);
    }
  }

  // Inlier matches whose rounded endpoints are active, first occurrence kept.
  {
    const auto& m = pair.matches;
    std::set<std::pair<int, int>> seen;
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (!m.inlier[k]) continue;
      const auto i = nearest_pixel(state.points_of(View::Ref).grid, m.ref_pixels[k]);
      const auto j = nearest_pixel(state.points_of(View::Src).grid, m.src_pixels[k]);
      if (!i || !j || !state.active(View::Ref, *i) || !state.active(View::Src, *j)) continue;
      if (seen.insert({*i, *j}).second) graph.matches.emplace_back(*i, *j);
    }
  }

  // Cross-view edges, once per anchor direction.
  for (View a : kViews) {
    const View o = other(a);
    const PixelGrid& ga = state.points_of(a).grid;
    const PixelGrid& go = state.points_of(o).grid;
    const Image& ia = pair.view(a).image;
    const Image& io = pair.view(o).image;
    for (const auto& [ri, sj] : graph.matches) {
      const int i = a == View::Ref ? ri : sj;
      const int j = a == View::Ref ? sj : ri;
      const Pixel pi = ga.pixel(i), pj = go.pixel(j);
      for (int dr = -R; dr <= R; ++dr) {
        for (int dc = -R; dc <= R; ++dc) {
          const int jr = pj.row + dr, jc = pj.col + dc;
          if (!go.contains(jr, jc) || !state.active(o, go.index(jr, jc))) continue;
          const int jn = go.index(jr, jc);
          const double wj = weight_2d(io, pj, {jr, jc}, cfg.patch_radius, cfg.sigma_int, cfg.sigma_spa);
          graph.inter[vi(a)].push_back({i, jn, wj});

          const int ir = pi.row + dr, ic = pi.col + dc;
          if (!ga.contains(ir, ic) || !state.active(a, ga.index(ir, ic))) continue;
          const double wi = weight_2d(ia, pi, {ir, ic}, cfg.patch_radius, cfg.sigma_int, cfg.sigma_spa);
          graph.paired[vi(a)].push_back({i, ga.index(ir, ic), jn, j, wi * wj});
        }
      }
    }
  }

  // Rays and priors.
  for (View v : kViews) {
    const PixelGrid& grid = state.points_of(v).grid;
    const CameraModel& cam = pair.view(v).camera;
    for (int i : graph.nodes[vi(v)]) {
      const Pixel p = grid.pixel(i);
      const Vec3 axis = cam.pixel_direction(p.row, p.col);
      graph.rays[vi(v)].push_back({i, cam.center(), axis, 1.0 / axis.norm()});
    }

    ViewPriors& pr = graph.priors[vi(v)];
    const PointMap& prior_pm = pair.view(v).pointmap;
    pr.points = prior_pm.points;
    pr.normals = pair.view(v).normals.normals;
    pr.mask.assign(grid.size(), 0.0);
    pr.radius.assign(grid.size(), 0.0);
    for (int i : graph.nodes[vi(v)]) {
      pr.centroid += pr.points[static_cast<std::size_t>(i)];
      pr.mask[static_cast<std::size_t>(i)] =
          prior_pm.confidence[static_cast<std::size_t>(i)] >= cfg.confidence_threshold ? 1.0 : 0.0;
    }
    pr.centroid /= static_cast<double>(graph.nodes[vi(v)].size());
    for (int i : graph.nodes[vi(v)]) {
      pr.radius[static_cast<std::size_t>(i)] =
          std::sqrt((pr.points[static_cast<std::size_t>(i)] - pr.centroid).squaredNorm() + kEps2);
    }
  }

  refresh_knn(graph, pair, state, cfg);
  return graph;
}

// --- loss terms ------------------------------------------------------------

double loss_intra(const RefinementState& s, const RefinementGraph& g, View v, double gamma, StateGradient* grad,
                  double weight) {
  const auto& P = s.points_of(v).points;
  const auto& N = s.normals_of(v).normals;
  return accumulate(g.intra[vi(v)], grad, weight, [&](const WeightedEdge& e, Contribution& c) {
    const auto i = static_cast<std::size_t>(e.from), k = static_cast<std::size_t>(e.to);
    const Vec3 dp = P[k] - P[i];
    const Vec3 dn = N[k] - N[i];
    const Smooth a = smooth_abs(N[i].dot(dp));
    const Smooth b = smooth_norm(dn);
    c.value = e.weight * (a.value + gamma * b.value);
    if (!grad) return;
    const double da = e.weight * N[i].dot(dp) * a.inv;
    const Vec3 db = e.weight * gamma * b.inv * dn;
    c.add(&grad->normals[vi(v)][i], da * dp - db);
    c.add(&grad->normals[vi(v)][k], db);
    c.add(&grad->points[vi(v)][k], da * N[i]);
    c.add(&grad->points[vi(v)][i], -da * N[i]);
  });
}

double loss_inter(const RefinementState& s, const RefinementGraph& g, View anchor, double gamma, double rho,
                  StateGradient* grad, double weight) {
  const View o = other(anchor);
  const auto& Pa = s.points_of(anchor).points;
  const auto& Na = s.normals_of(anchor).normals;
  const auto& Po = s.points_of(o).points;
  const auto& No = s.normals_of(o).normals;

  const double first = accumulate(g.inter[vi(anchor)], grad, weight, [&](const InterEdge& e, Contribution& c) {
    const auto i = static_cast<std::size_t>(e.anchor), j = static_cast<std::size_t>(e.neighbor);
    const Vec3 dp = Po[j] - Pa[i];
    const Vec3 dn = No[j] - Na[i];
    const Smooth a = smooth_abs(Na[i].dot(dp));
    const Smooth b = smooth_norm(dn);
    c.value = e.weight * (a.value + gamma * b.value);
    if (!grad) return;
    const double da = e.weight * Na[i].dot(dp) * a.inv;
    const Vec3 db = e.weight * gamma * b.inv * dn;
    c.add(&grad->normals[vi(anchor)][i], da * dp - db);
    c.add(&grad->normals[vi(o)][j], db);
    c.add(&grad->points[vi(o)][j], da * Na[i]);
    c.add(&grad->points[vi(anchor)][i], -da * Na[i]);
  });
  if (rho == 0.0) return first;

  const double second =
      accumulate(g.paired[vi(anchor)], grad, weight * rho, [&](const PairedEdge& e, Contribution& c) {
        const auto i = static_cast<std::size_t>(e.anchor), in = static_cast<std::size_t>(e.anchor_neighbor);
        const auto jn = static_cast<std::size_t>(e.other_neighbor), j = static_cast<std::size_t>(e.other);
        const Vec3 dp = Pa[in] - Po[jn];
        const Vec3 dn = Na[i] - No[j];
        const Smooth a = smooth_abs(Na[i].dot(dp));
        const Smooth b = smooth_norm(dn);
        c.value = e.weight * (a.value + 0.5 * gamma * b.value);
        if (!grad) return;
        const double da = e.weight * Na[i].dot(dp) * a.inv;
        const Vec3 db = e.weight * 0.5 * gamma * b.inv * dn;
        c.add(&grad->normals[vi(anchor)][i], da * dp + db);
        c.add(&grad->normals[vi(o)][j], -db);
        c.add(&grad->points[vi(anchor)][in], da * Na[i]);
        c.add(&grad->points[vi(o)][jn], -da * Na[i]);
      });
  return first + rho * second;
}

double loss_knn(const RefinementState& s, const RefinementGraph& g, View query, StateGradient* grad, double weight) {
  const View o = other(query);
  const auto& Pq = s.points_of(query).points;
  const auto& Nq = s.normals_of(query).normals;
  const auto& Ps = s.points_of(o).points;
  const auto& Ns = s.normals_of(o).normals;
  return accumulate(g.knn[vi(query)], grad, weight, [&](const WeightedEdge& e, Contribution& c) {
    const auto i = static_cast<std::size_t>(e.from), j = static_cast<std::size_t>(e.to);
    const Vec3 d = Pq[i] - Ps[j];
    const Vec3 dn = Nq[i] - Ns[j];
    const double r1 = Nq[i].dot(d);
    const double r2 = -Ns[j].dot(d);
    const Smooth a1 = smooth_abs(r1);
    const Smooth a2 = smooth_abs(r2);
    const Smooth b = smooth_norm(dn);
    c.value = e.weight * (a1.value + a2.value + b.value);
    if (!grad) return;
    const double d1 = e.weight * r1 * a1.inv;
    const double d2 = e.weight * r2 * a2.inv;
    const Vec3 db = e.weight * b.inv * dn;
    c.add(&grad->normals[vi(query)][i], d1 * d + db);
    c.add(&grad->normals[vi(o)][j], -d2 * d - db);
    const Vec3 gp = d1 * Nq[i] - d2 * Ns[j];
    c.add(&grad->points[vi(query)][i], gp);
    c.add(&grad->points[vi(o)][j], -gp);
  });
}

double loss_ray(const RefinementState& s, const RefinementGraph& g, View v, StateGradient* grad, double weight) {
  const auto& P = s.points_of(v).points;
  return accumulate(g.rays[vi(v)], grad, weight, [&](const RayAnchor& r, Contribution& c) {
    const auto i = static_cast<std::size_t>(r.pixel);
    const Vec3 x = r.axis.cross(P[i] - r.origin) * r.inv_norm;
    const Smooth a = smooth_norm(x);
    c.value = a.value;
    if (!grad) return;
    c.add(&grad->points[vi(v)][i], (a.inv * r.inv_norm) * x.cross(r.axis));
  });
}

double loss_similarity(const RefinementState& s, const RefinementGraph& g, View v, StateGradient* grad,
                       double weight) {
  const auto& P = s.points_of(v).points;
  const ViewPriors& pr = g.priors[vi(v)];
  const double sc = s.scale[vi(v)];
  return accumulate(g.nodes[vi(v)], grad, weight, [&](int node, Contribution& c) {
    const auto i = static_cast<std::size_t>(node);
    const double m = pr.mask[i];
    if (m == 0.0) return;
    const Vec3 d = P[i] - pr.centroid;
    const double q = std::sqrt(d.squaredNorm() + kEps2);
    const double r = q - sc * pr.radius[i];
    const Smooth a = smooth_abs(r);
    c.value = m * a.value;
    if (!grad) return;
    const double dr = m * r * a.inv;
    c.add(&grad->points[vi(v)][i], (dr / q) * d);
    c.scalar_target = &grad->scale[vi(v)];
    c.scalar_g = -dr * pr.radius[i];
  });
}

double loss_normal_prior(const RefinementState& s, const RefinementGraph& g, View v, StateGradient* grad,
                         double weight) {
  const auto& N = s.normals_of(v).normals;
  const ViewPriors& pr = g.priors[vi(v)];
  return accumulate(g.nodes[vi(v)], grad, weight, [&](int node, Contribution& c) {
    const auto i = static_cast<std::size_t>(node);
    const double m = pr.mask[i];
    if (m == 0.0) return;
    const Vec3 d = N[i] - pr.normals[i];
    const Smooth a = smooth_norm(d);
    c.value = m * a.value;
    if (!grad) return;
    c.add(&grad->normals[vi(v)][i], (m * a.inv) * d);
  });
}

LossTerms total_loss_and_grad(const RefinementState& s, const RefinementGraph& g, const RefinementConfig& cfg,
                              StateGradient* grad) {
  if (grad) {
    if (grad->points[0].size() != s.points[0].points.size() || grad->points[1].size() != s.points[1].points.size()) {
      *grad = StateGradient(s);
    } else {
      grad->set_zero();
    }
  }
  LossTerms t;
  for (View v : kViews) {
    t.intra += loss_intra(s, g, v, cfg.gamma, grad, cfg.lambda_p);
    t.inter += loss_inter(s, g, v, cfg.gamma, cfg.rho, grad, cfg.lambda_p);
    t.knn += loss_knn(s, g, v, grad, cfg.lambda_p);
    t.ray += loss_ray(s, g, v, grad, cfg.lambda_r);
    t.sim += loss_similarity(s, g, v, grad, cfg.lambda_s);
    t.normal += loss_normal_prior(s, g, v, grad, cfg.lambda_n);
  }
  t.total = cfg.lambda_p * (t.intra + t.inter + t.knn) + cfg.lambda_r * t.ray + cfg.lambda_s * t.sim +
            cfg.lambda_n * t.normal;

  const std::pair<const char*, double> named[] = {{"intra", t.intra}, {"inter", t.inter}, {"knn", t.knn},
                                                  {"ray", t.ray},     {"similarity", t.sim}, {"normal", t.normal}};
  for (const auto& [name, value] : named) {
    require(std::isfinite(value), ErrorKind::NonFinite, std::string("non-finite loss in term '") + name + "'");
  }
  if (grad) {
    require(std::isfinite(grad->squared_norm()), ErrorKind::NonFinite, "non-finite loss gradient");
  }
  return t;
}

}  // namespace more
