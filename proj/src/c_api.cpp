// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/more.h"

#include <cmath>
#include <exception>
#include <filesystem>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "more/error.hpp"
#include "more/metrics.hpp"
#include "more/parallel.hpp"
#include "more/pipeline.hpp"
#include "more/synth.hpp"
#include "more/tensor_io.hpp"

struct more_config {
  more::RefinementConfig cfg;
};

struct more_scene {
  more::ScenePair camera_pair;
  std::optional<more::AlignedPair> aligned;
};

struct more_result {
  more::ResultBundle bundle;
};

namespace {

thread_local std::string g_last_error;

more_status status_of(more::ErrorKind kind) {
  switch (kind) {
    case more::ErrorKind::InvalidArgument:
      return MORE_ERR_INVALID_ARGUMENT;
    case more::ErrorKind::Io:
      return MORE_ERR_IO;
    case more::ErrorKind::Shape:
      return MORE_ERR_SHAPE;
    case more::ErrorKind::Degenerate:
      return MORE_ERR_DEGENERATE;
    case more::ErrorKind::NonFinite:
      return MORE_ERR_NONFINITE;
  }
  return MORE_ERR_INTERNAL;
}

more_status set_error(more_status s, const std::string& what) {
  g_last_error = what;
  return s;
}

// Runs fn, translating exceptions into status codes.
template <typename F>
more_status guarded(F&& fn) {
  try {
    fn();
    return MORE_OK;
  } catch (const more::Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(MORE_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(MORE_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(MORE_ERR_INTERNAL, "unknown error");
  }
}

more_status null_arg(const char* name) {
  return set_error(MORE_ERR_INVALID_ARGUMENT, std::string(name) + " must not be NULL");
}

more::DepthMap stack_depths(const more::DepthMap& a, const more::DepthMap& b) {
  more::DepthMap out(more::PixelGrid(a.grid.width(), a.grid.height() + b.grid.height()));
  std::copy(a.depth.begin(), a.depth.end(), out.depth.begin());
  std::copy(b.depth.begin(), b.depth.end(), out.depth.begin() + static_cast<std::ptrdiff_t>(a.depth.size()));
  std::copy(a.valid.begin(), a.valid.end(), out.valid.begin());
  std::copy(b.valid.begin(), b.valid.end(), out.valid.begin() + static_cast<std::ptrdiff_t>(a.valid.size()));
  return out;
}

}  // namespace

extern "C" {

const char* more_version(void) { return "1.0.0"; }

const char* more_status_string(more_status status) {
  switch (status) {
    case MORE_OK:
      return "ok";
    case MORE_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case MORE_ERR_IO:
      return "i/o error";
    case MORE_ERR_SHAPE:
      return "shape mismatch";
    case MORE_ERR_DEGENERATE:
      return "degenerate input";
    case MORE_ERR_NONFINITE:
      return "non-finite value";
    case MORE_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* more_last_error(void) { return g_last_error.c_str(); }

void more_set_threads(int n) { more::set_thread_count(n < 0 ? 0 : n); }

more_status more_config_create(more_config** out) {
  if (!out) return null_arg("out");
  return guarded([&] { *out = new more_config{}; });
}

more_status more_config_load_json(more_config* cfg, const char* path) {
  if (!cfg) return null_arg("cfg");
  if (!path) return null_arg("path");
  return guarded([&] { cfg->cfg = more::read_config(path); });
}

more_status more_config_set_ransac(more_config* cfg, int enabled, uint64_t seed) {
  if (!cfg) return null_arg("cfg");
  cfg->cfg.ransac.enabled = enabled != 0;
  cfg->cfg.ransac.seed = seed;
  return MORE_OK;
}

void more_config_destroy(more_config* cfg) { delete cfg; }

more_status more_scene_load(const char* bundle_dir, const more_config* cfg, more_scene** out) {
  if (!bundle_dir) return null_arg("bundle_dir");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto scene = std::make_unique<more_scene>();
    scene->camera_pair = more::load_bundle(bundle_dir, cfg ? cfg->cfg.confidence_threshold : 0.0);
    *out = scene.release();
  });
}

void more_scene_destroy(more_scene* scene) { delete scene; }

more_status more_scene_align(more_scene* scene, const more_config* cfg, more_align_report* report) {
  if (!scene) return null_arg("scene");
  return guarded([&] {
    const more::RansacConfig ransac = cfg ? cfg->cfg.ransac : more::RansacConfig{};
    scene->aligned = more::align_pair(scene->camera_pair, ransac);
    if (!report) return;
    const auto& a = *scene->aligned;
    report->scale = a.alignment.scale;
    for (int c = 0; c < 3; ++c) report->shift[c] = a.alignment.shift[c];
    report->match_count = scene->camera_pair.matches.size();
    report->inlier_count = a.inlier_count;
    report->ransac_used = a.ransac ? 1 : 0;
    report->ransac_threshold = a.ransac ? a.ransac->threshold_used : 0.0;
  });
}

more_status more_scene_set_alignment(more_scene* scene, double scale, const double shift[3]) {
  if (!scene) return null_arg("scene");
  if (!shift) return null_arg("shift");
  return guarded([&] {
    const more::AffineAlignment a{scale, more::Vec3(shift[0], shift[1], shift[2])};
    more::require(scale > 0.0 && std::isfinite(scale) && a.shift.allFinite(), more::ErrorKind::InvalidArgument,
                  "alignment scale must be positive and finite");
    scene->aligned = more::apply_known_alignment(scene->camera_pair, a);
  });
}

more_status more_scene_load_alignment(more_scene* scene, const char* json_path) {
  if (!scene) return null_arg("scene");
  if (!json_path) return null_arg("json_path");
  return guarded([&] {
    const more::AffineAlignment a = more::read_alignment_json(json_path);
    scene->aligned = more::apply_known_alignment(scene->camera_pair, a);
  });
}

more_status more_scene_save_aligned(const more_scene* scene, const char* out_dir) {
  if (!scene) return null_arg("scene");
  if (!out_dir) return null_arg("out_dir");
  if (!scene->aligned) return set_error(MORE_ERR_INVALID_ARGUMENT, "scene has not been aligned");
  return guarded([&] {
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    const auto& w = scene->aligned->world;
    more::write_alignment_json(dir / "alignment.json", scene->aligned->alignment, {1.0, 1.0});
    for (more::View v : more::kViews) {
      const auto& pm = w.view(v).pointmap;
      const std::vector<std::size_t> shape{static_cast<std::size_t>(pm.grid.height()),
                                           static_cast<std::size_t>(pm.grid.width()), 3};
      const std::string tag = v == more::View::Ref ? "ref" : "src";
      more::write_npy(dir / ("aligned_points_" + tag + ".npy"), shape, more::pointmap_to_array(pm));
    }
  });
}

more_status more_refine(more_scene* scene, const more_config* cfg, more_result** out) {
  if (!scene) return null_arg("scene");
  if (!cfg) return null_arg("cfg");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    if (!scene->aligned) scene->aligned = more::align_pair(scene->camera_pair, cfg->cfg.ransac);
    try {
      *out = new more_result{more::refine_aligned(*scene->aligned, cfg->cfg)};
    } catch (const more::RefinementAborted& e) {
      auto partial = std::make_unique<more_result>();
      const auto& run = e.partial();
      for (more::View v : more::kViews) {
        const auto w = static_cast<std::size_t>(more::index_of(v));
        partial->bundle.points[w] = run.state.points[w];
        partial->bundle.normals[w] = run.state.normals[w];
        partial->bundle.cameras[w] = scene->aligned->world.view(v).camera;
      }
      partial->bundle.alignment = scene->aligned->alignment;
      partial->bundle.similarity_scale = run.state.scale;
      partial->bundle.trace = run.trace;
      *out = partial.release();
      throw;
    }
  });
}

more_status more_result_save(const more_result* result, const char* out_dir) {
  if (!result) return null_arg("result");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] { more::save_result(out_dir, result->bundle); });
}

size_t more_result_trace_length(const more_result* result) { return result ? result->bundle.trace.size() : 0; }

more_status more_result_trace_total(const more_result* result, size_t i, double* total) {
  if (!result) return null_arg("result");
  if (!total) return null_arg("total");
  if (i >= result->bundle.trace.size()) return set_error(MORE_ERR_INVALID_ARGUMENT, "trace row out of range");
  *total = result->bundle.trace[i].terms.total;
  return MORE_OK;
}

void more_result_destroy(more_result* result) { delete result; }

more_status more_eval(const char* result_dir, const char* gt_file, int median_scaling, int pointcloud,
                      more_eval_report* report) {
  if (!result_dir) return null_arg("result_dir");
  if (!gt_file) return null_arg("gt_file");
  if (!report) return null_arg("report");
  return guarded([&] {
    const more::ResultBundle pred = more::load_result(result_dir);
    const auto gt = more::read_npz(gt_file);
    std::array<more::PointMap, 2> truth;
    std::array<more::DepthMap, 2> pd, gd;
    for (more::View v : more::kViews) {
      const auto w = static_cast<std::size_t>(more::index_of(v));
      const std::string key = std::string("true_points_") + (v == more::View::Ref ? "ref" : "src");
      const auto it = gt.find(key);
      more::require(it != gt.end(), more::ErrorKind::Io, std::string(gt_file) + " has no '" + key + "' array");
      truth[w] = more::pointmap_from_array(it->second, key);
      more::require(truth[w].grid == pred.points[w].grid, more::ErrorKind::Shape,
                    key + " does not match the predicted grid");
      pd[w] = more::depth_from_points(pred.points[w], pred.cameras[w]);
      gd[w] = more::depth_from_points(truth[w], pred.cameras[w]);
    }
    const auto r = more::eval_depth(stack_depths(pd[0], pd[1]), stack_depths(gd[0], gd[1]), 1.03, median_scaling != 0);
    *report = more_eval_report{};
    report->abs_rel = r.abs_rel;
    report->inlier_ratio = r.inlier_ratio;
    report->n_evaluated = r.n_evaluated;
    report->scale_applied = r.scale_applied;
    if (pointcloud) {
      std::vector<more::Vec3> p, g;
      for (std::size_t w = 0; w < 2; ++w) {
        const auto pv = more::valid_points(pred.points[w]);
        const auto gv = more::valid_points(truth[w]);
        p.insert(p.end(), pv.begin(), pv.end());
        g.insert(g.end(), gv.begin(), gv.end());
      }
      const auto pc = more::eval_pointcloud(p, g);
      report->has_pointcloud = 1;
      report->accuracy = pc.accuracy;
      report->completeness = pc.completeness;
      report->overall = pc.overall;
    }
  });
}

more_status more_synth(const char* spec_path, const char* out_dir) {
  if (!spec_path) return null_arg("spec_path");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] { more::write_bundle(more::generate(more::read_scene_spec(spec_path)), out_dir); });
}

}  // extern "C"
