// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/pipeline.hpp"

#include <fstream>

#include "more/error.hpp"
#include "more/normal_estimation.hpp"

namespace more {
namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  require(j.is_object(), ErrorKind::InvalidArgument, "config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; });
    require(ok, ErrorKind::InvalidArgument, "config: unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::InvalidArgument, std::string("config: '") + key + "' has the wrong type");
  }
}

void estimate_normals(ScenePair& pair) {
  for (View v : kViews) pair.view(v).normals = normals_from_pointmap(pair.view(v).pointmap, pair.view(v).camera);
}

}  // namespace

RefinementConfig parse_config(const json& j) {
  reject_unknown(j,
                 {"gamma", "rho", "sigma_int", "sigma_spa", "lambda_p", "lambda_r", "lambda_s", "lambda_n", "levels",
                  "iters_per_level", "learning_rate", "knn_k", "knn_refresh_every", "patch_radius", "neighbor_radius",
                  "ransac", "confidence_threshold"},
                 "config");
  RefinementConfig c;
  read_into(j, "gamma", c.gamma);
  read_into(j, "rho", c.rho);
  read_into(j, "sigma_int", c.sigma_int);
  read_into(j, "sigma_spa", c.sigma_spa);
  read_into(j, "lambda_p", c.lambda_p);
  read_into(j, "lambda_r", c.lambda_r);
  read_into(j, "lambda_s", c.lambda_s);
  read_into(j, "lambda_n", c.lambda_n);
  read_into(j, "levels", c.levels);
  read_into(j, "iters_per_level", c.iters_per_level);
  read_into(j, "learning_rate", c.learning_rate);
  read_into(j, "knn_k", c.knn_k);
  read_into(j, "knn_refresh_every", c.knn_refresh_every);
  read_into(j, "patch_radius", c.patch_radius);
  read_into(j, "neighbor_radius", c.neighbor_radius);
  read_into(j, "confidence_threshold", c.confidence_threshold);
  if (j.contains("ransac")) {
    const json& r = j.at("ransac");
    reject_unknown(r, {"threshold", "max_iters", "enabled", "seed"}, "ransac");
    if (r.contains("threshold")) {
      const json& t = r.at("threshold");
      if (t.is_string()) {
        require(t.get<std::string>() == "adaptive", ErrorKind::InvalidArgument,
                "config: ransac.threshold must be a number or \"adaptive\"");
        c.ransac.threshold.reset();
      } else {
        double v = 0.0;
        read_into(r, "threshold", v);
        c.ransac.threshold = v;
      }
    }
    read_into(r, "max_iters", c.ransac.max_iters);
    read_into(r, "enabled", c.ransac.enabled);
    read_into(r, "seed", c.ransac.seed);
  }
  c.validate();
  return c;
}

RefinementConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, "config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json config_to_json(const RefinementConfig& c) {
  json r{{"max_iters", c.ransac.max_iters}, {"enabled", c.ransac.enabled}, {"seed", c.ransac.seed}};
  if (c.ransac.threshold) {
    r["threshold"] = *c.ransac.threshold;
  } else {
    r["threshold"] = "adaptive";
  }
  return json{{"gamma", c.gamma},
              {"rho", c.rho},
              {"sigma_int", c.sigma_int},
              {"sigma_spa", c.sigma_spa},
              {"lambda_p", c.lambda_p},
              {"lambda_r", c.lambda_r},
              {"lambda_s", c.lambda_s},
              {"lambda_n", c.lambda_n},
              {"levels", c.levels},
              {"iters_per_level", c.iters_per_level},
              {"learning_rate", c.learning_rate},
              {"knn_k", c.knn_k},
              {"knn_refresh_every", c.knn_refresh_every},
              {"patch_radius", c.patch_radius},
              {"neighbor_radius", c.neighbor_radius},
              {"ransac", r},
              {"confidence_threshold", c.confidence_threshold}};
}

ScenePair to_world(const ScenePair& camera_pair) {
  ScenePair w = camera_pair;
  for (View v : kViews) w.view(v).pointmap = transform_to_world(camera_pair.view(v).pointmap, camera_pair.view(v).camera);
  return w;
}

AlignedPair align_pair(const ScenePair& camera_pair, const RansacConfig& ransac) {
  AlignedPair out;
  out.world = to_world(camera_pair);
  if (ransac.enabled) {
    auto [filtered, report] = filter_matches_ransac(out.world, ransac);
    out.world.matches = std::move(filtered);
    out.ransac = report;
  }
  const MatchedPoints mp = gather_matched_points(out.world, true);
  require(mp.ref.size() >= 2, ErrorKind::Degenerate, "alignment needs at least 2 usable matches");
  out.alignment = solve_scale_shift(mp.ref, mp.src, mp.ref_depth);
  out.inlier_count = out.world.matches.inlier_count();
  out.world.src.pointmap = apply_alignment(out.world.src.pointmap, out.alignment);
  estimate_normals(out.world);
  return out;
}

AlignedPair apply_known_alignment(const ScenePair& camera_pair, const AffineAlignment& alignment) {
  AlignedPair out;
  out.world = to_world(camera_pair);
  out.alignment = alignment;
  out.inlier_count = out.world.matches.inlier_count();
  out.world.src.pointmap = apply_alignment(out.world.src.pointmap, alignment);
  estimate_normals(out.world);
  return out;
}

ResultBundle refine_aligned(const AlignedPair& aligned, const RefinementConfig& cfg) {
  RefinementRun run = run_refinement(aligned.world, cfg);
  ResultBundle r;
  for (View v : kViews) {
    const auto w = static_cast<std::size_t>(index_of(v));
    r.points[w] = run.state.points[w];
    r.normals[w] = run.state.normals[w];
    r.images[w] = aligned.world.view(v).image;
    r.cameras[w] = aligned.world.view(v).camera;
  }
  r.alignment = aligned.alignment;
  r.similarity_scale = run.state.scale;
  r.trace = std::move(run.trace);
  return r;
}

}  // namespace more
