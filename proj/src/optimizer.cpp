// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "more/normal_estimation.hpp"

namespace more {
namespace {

std::size_t vi(View v) { return static_cast<std::size_t>(index_of(v)); }

double coarse_coord(double fine_index) { return (fine_index + 0.5) / 2.0 - 0.5; }

}  // namespace

Adam::Adam(const AdamParams& params, const RefinementState& shape) : p_(params), m_(shape), v_(shape) {}

void Adam::step(RefinementState& state, const StateGradient& grad, const RefinementGraph& graph) {
  ++t_;
  const double c1 = 1.0 - std::pow(p_.beta1, t_);
  const double c2 = 1.0 - std::pow(p_.beta2, t_);
  const auto update = [&](double& x, double g, double& m, double& v) {
    m = p_.beta1 * m + (1.0 - p_.beta1) * g;
    v = p_.beta2 * v + (1.0 - p_.beta2) * g * g;
    x -= p_.lr * (m / c1) / (std::sqrt(v / c2) + p_.eps);
  };
  for (View view : kViews) {
    const std::size_t w = vi(view);
    auto& P = state.points_of(view).points;
    auto& N = state.normals_of(view).normals;
    for (int node : graph.nodes[w]) {
      const auto i = static_cast<std::size_t>(node);
      for (int c = 0; c < 3; ++c) {
        update(P[i][c], grad.points[w][i][c], m_.points[w][i][c], v_.points[w][i][c]);
        update(N[i][c], grad.normals[w][i][c], m_.normals[w][i][c], v_.normals[w][i][c]);
      }
      const double len = N[i].norm();
      if (len > 0.0) N[i] /= len;
    }
    update(state.scale[w], grad.scale[w], m_.scale[w], v_.scale[w]);
  }
}

PyramidLevel build_pyramid_level(const ScenePair& world_pair, int level) {
  require(level >= 0, ErrorKind::InvalidArgument, "pyramid level must be >= 0");
  const int f = 1 << level;
  PyramidLevel out;
  out.level = level;

  for (View v : kViews) {
    const ViewBundle& src = world_pair.view(v);
    ViewBundle& dst = out.pair.view(v);
    const PixelGrid& fg = src.pointmap.grid;
    const PixelGrid cg(fg.width() / f, fg.height() / f);

    dst.camera = src.camera.downsampled(f);
    if (level == 0) {
      dst.image = src.image;
      dst.pointmap = src.pointmap;
      dst.normals = normals_from_pointmap(dst.pointmap, dst.camera);
      continue;
    }
    dst.image = Image(cg);
    dst.pointmap = PointMap(cg);
    for (int R = 0; R < cg.height(); ++R) {
      for (int C = 0; C < cg.width(); ++C) {
        Vec3 color = Vec3::Zero(), wsum_p = Vec3::Zero(), sum_p = Vec3::Zero();
        double wsum = 0.0, csum = 0.0;
        int nvalid = 0;
        for (int r = R * f; r < R * f + f; ++r) {
          for (int c = C * f; c < C * f + f; ++c) {
            const auto i = static_cast<std::size_t>(fg.index(r, c));
            color += src.image.rgb[i];
            if (!src.pointmap.valid[i]) continue;
            const double w = src.pointmap.confidence[i];
            wsum_p += w * src.pointmap.points[i];
            sum_p += src.pointmap.points[i];
            wsum += w;
            csum += w;
            ++nvalid;
          }
        }
        const auto o = static_cast<std::size_t>(cg.index(R, C));
        dst.image.rgb[o] = color / static_cast<double>(f * f);
        if (nvalid == 0) continue;
        dst.pointmap.points[o] = wsum > 0.0 ? Vec3(wsum_p / wsum) : Vec3(sum_p / nvalid);
        dst.pointmap.confidence[o] = csum / nvalid;
        dst.pointmap.valid[o] = 1;
      }
    }
    dst.normals = normals_from_pointmap(dst.pointmap, dst.camera);
  }

  if (level == 0) {
    out.pair.matches = world_pair.matches;
    return out;
  }
  std::set<std::pair<int, int>> seen;
  const auto& m = world_pair.matches;
  const auto map = [&](const Vec2& rc) { return Vec2(std::round((rc.x() + 0.5) / f - 0.5), std::round((rc.y() + 0.5) / f - 0.5)); };
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!m.inlier[k]) continue;
    const Vec2 a = map(m.ref_pixels[k]);
    const Vec2 b = map(m.src_pixels[k]);
    const auto i = nearest_pixel(out.pair.ref.pointmap.grid, a);
    const auto j = nearest_pixel(out.pair.src.pointmap.grid, b);
    if (!i || !j) continue;
    if (seen.insert({*i, *j}).second) out.pair.matches.push_back(a, b, true);
  }
  return out;
}

RefinementState initial_state(const PyramidLevel& level) {
  RefinementState s;
  for (View v : kViews) {
    s.points_of(v) = level.pair.view(v).pointmap;
    s.normals_of(v) = level.pair.view(v).normals;
  }
  return s;
}

RefinementState upsample_delta(const RefinementState& coarse_refined, const PyramidLevel& coarse,
                               const PyramidLevel& fine) {
  RefinementState out = initial_state(fine);
  out.scale = coarse_refined.scale;
  for (View v : kViews) {
    const PointMap& cr = coarse_refined.points_of(v);
    const PointMap& ci = coarse.pair.view(v).pointmap;
    const PixelGrid& cg = ci.grid;
    PointMap& fp = out.points_of(v);
    const PixelGrid& fg = fp.grid;

    for (int r = 0; r < fg.height(); ++r) {
      for (int c = 0; c < fg.width(); ++c) {
        const auto i = static_cast<std::size_t>(fg.index(r, c));
        if (!fp.valid[i]) continue;
        const double x = std::clamp(coarse_coord(c), 0.0, static_cast<double>(cg.width() - 1));
        const double y = std::clamp(coarse_coord(r), 0.0, static_cast<double>(cg.height() - 1));
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        const int x1 = std::min(x0 + 1, cg.width() - 1), y1 = std::min(y0 + 1, cg.height() - 1);
        const double fx = x - x0, fy = y - y0;
        const std::array<std::pair<int, double>, 4> taps{{{cg.index(y0, x0), (1 - fx) * (1 - fy)},
                                                          {cg.index(y0, x1), fx * (1 - fy)},
                                                          {cg.index(y1, x0), (1 - fx) * fy},
                                                          {cg.index(y1, x1), fx * fy}}};
        Vec3 delta = Vec3::Zero();
        double wsum = 0.0;
        for (const auto& [k, w] : taps) {
          const auto uk = static_cast<std::size_t>(k);
          if (w <= 0.0 || !ci.valid[uk] || !cr.valid[uk]) continue;
          delta += w * (cr.points[uk] - ci.points[uk]);
          wsum += w;
        }
        if (wsum > 0.0) fp.points[i] += delta / wsum;
      }
    }

    // Keep the prior's normal validity so the active node set matches the priors.
    const NormalMap& prior = fine.pair.view(v).normals;
    const NormalMap est = normals_from_pointmap(fp, fine.pair.view(v).camera);
    NormalMap& n = out.normals_of(v);
    for (std::size_t i = 0; i < n.normals.size(); ++i) {
      n.valid[i] = prior.valid[i];
      n.normals[i] = est.valid[i] ? est.normals[i] : prior.normals[i];
    }
  }
  return out;
}

RefinementRun run_refinement(const ScenePair& aligned_world_pair, const RefinementConfig& cfg) {
  cfg.validate();
  RefinementRun run;
  int global_iter = 0;

  PyramidLevel prev_level;
  RefinementState prev_state;
  for (int l = cfg.levels - 1; l >= 0; --l) {
    PyramidLevel level = build_pyramid_level(aligned_world_pair, l);
    RefinementState state = l == cfg.levels - 1 ? initial_state(level) : upsample_delta(prev_state, prev_level, level);
    RefinementGraph graph = build_graph(level.pair, state, cfg);

    const int iters = cfg.iters_per_level[static_cast<std::size_t>(l)];
    LevelSummary summary{l, iters, 0.0, 0.0};
    Adam adam(AdamParams{cfg.learning_rate}, state);
    StateGradient grad(state);
    try {
      for (int t = 0; t < iters; ++t) {
        if (t > 0 && t % cfg.knn_refresh_every == 0) refresh_knn(graph, level.pair, state, cfg);
        const LossTerms terms = total_loss_and_grad(state, graph, cfg, &grad);
        run.trace.push_back({global_iter++, l, terms});
        if (t == 0) summary.initial_total = terms.total;
        adam.step(state, grad, graph);
      }
      const LossTerms final_terms = total_loss_and_grad(state, graph, cfg);
      if (iters == 0) summary.initial_total = final_terms.total;
      summary.final_total = final_terms.total;
      if (l == 0) run.trace.push_back({global_iter, l, final_terms});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NonFinite) throw;
      run.state = state;
      run.levels.push_back(summary);
      throw RefinementAborted(std::string(e.what()) + " at pyramid level " + std::to_string(l), std::move(run));
    }
    run.levels.push_back(summary);
    prev_level = std::move(level);
    prev_state = std::move(state);
  }
  run.state = std::move(prev_state);
  return run;
}

}  // namespace more
