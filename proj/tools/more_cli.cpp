// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// more: align, refine, evaluate and synthesize two-view point-map scenes.
//
// Exit codes: 0 success, 1 usage or other error, 2 input could not be loaded,
// 3 degenerate matches, 4 non-finite loss during refinement.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "more/more.h"

namespace {

using json = nlohmann::json;

constexpr int kExitError = 1;
constexpr int kExitLoad = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitNonFinite = 4;

struct Options {
  int threads = -1;
  bool json_out = false;
};

template <typename T, void (*Destroy)(T*)>
struct Deleter {
  void operator()(T* p) const { Destroy(p); }
};
using ConfigPtr = std::unique_ptr<more_config, Deleter<more_config, more_config_destroy>>;
using ScenePtr = std::unique_ptr<more_scene, Deleter<more_scene, more_scene_destroy>>;
using ResultPtr = std::unique_ptr<more_result, Deleter<more_result, more_result_destroy>>;

int report_failure(more_status s, const char* stage, const Options& opt) {
  if (opt.json_out) {
    std::cout << json{{"error", more_status_string(s)}, {"stage", stage}, {"message", more_last_error()}}.dump()
              << "\n";
  } else {
    std::cerr << "more " << stage << ": " << more_status_string(s) << ": " << more_last_error() << "\n";
  }
  switch (s) {
    case MORE_ERR_DEGENERATE:
      return kExitDegenerate;
    case MORE_ERR_NONFINITE:
      return kExitNonFinite;
    default:
      return kExitError;
  }
}

// Failures while reading inputs map to exit code 2 regardless of their cause.
int report_load_failure(more_status s, const char* stage, const Options& opt) {
  report_failure(s, stage, opt);
  return kExitLoad;
}

ConfigPtr make_config() {
  more_config* c = nullptr;
  if (more_config_create(&c) != MORE_OK) return nullptr;
  return ConfigPtr(c);
}

json align_json(const more_align_report& r) {
  return json{{"scale", r.scale},
              {"shift", {r.shift[0], r.shift[1], r.shift[2]}},
              {"matches", r.match_count},
              {"inliers", r.inlier_count},
              {"ransac", r.ransac_used != 0}};
}

int cmd_align(const std::string& bundle, const std::string& out, std::uint64_t seed, bool no_ransac,
              const Options& opt) {
  ConfigPtr cfg = make_config();
  more_config_set_ransac(cfg.get(), no_ransac ? 0 : 1, seed);
  more_scene* raw = nullptr;
  if (more_status s = more_scene_load(bundle.c_str(), cfg.get(), &raw); s != MORE_OK)
    return report_load_failure(s, "align", opt);
  ScenePtr scene(raw);
  more_align_report rep{};
  if (more_status s = more_scene_align(scene.get(), cfg.get(), &rep); s != MORE_OK)
    return report_failure(s, "align", opt);
  if (more_status s = more_scene_save_aligned(scene.get(), out.c_str()); s != MORE_OK)
    return report_failure(s, "align", opt);
  if (opt.json_out) {
    std::cout << align_json(rep).dump() << "\n";
  } else {
    std::printf("inliers %zu / %zu\nscale %.12g\nshift %.12g %.12g %.12g\n", rep.inlier_count, rep.match_count,
                rep.scale, rep.shift[0], rep.shift[1], rep.shift[2]);
  }
  return 0;
}

int cmd_refine(const std::string& bundle, const std::string& config_path, const std::string& out,
               const Options& opt) {
  ConfigPtr cfg = make_config();
  if (!config_path.empty()) {
    if (more_status s = more_config_load_json(cfg.get(), config_path.c_str()); s != MORE_OK)
      return report_load_failure(s, "refine", opt);
  }
  more_scene* raw = nullptr;
  if (more_status s = more_scene_load(bundle.c_str(), cfg.get(), &raw); s != MORE_OK)
    return report_load_failure(s, "refine", opt);
  ScenePtr scene(raw);

  const auto alignment = std::filesystem::path(bundle) / "alignment.json";
  if (std::filesystem::exists(alignment)) {
    if (more_status s = more_scene_load_alignment(scene.get(), alignment.string().c_str()); s != MORE_OK)
      return report_load_failure(s, "refine", opt);
  } else {
    if (more_status s = more_scene_align(scene.get(), cfg.get(), nullptr); s != MORE_OK)
      return report_failure(s, "refine", opt);
  }

  more_result* rraw = nullptr;
  const more_status s = more_refine(scene.get(), cfg.get(), &rraw);
  ResultPtr result(rraw);
  if (result && more_result_save(result.get(), out.c_str()) != MORE_OK && s == MORE_OK)
    return report_failure(MORE_ERR_IO, "refine", opt);
  if (s != MORE_OK) return report_failure(s, "refine", opt);

  const std::size_t n = more_result_trace_length(result.get());
  double first = 0.0, last = 0.0;
  more_result_trace_total(result.get(), 0, &first);
  more_result_trace_total(result.get(), n - 1, &last);
  if (opt.json_out) {
    std::cout << json{{"out", out}, {"trace_rows", n}, {"initial_total", first}, {"final_total", last}}.dump() << "\n";
  } else {
    std::printf("wrote %s (%zu trace rows)\ntotal loss %.12g -> %.12g\n", out.c_str(), n, first, last);
  }
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, bool median_scaling, bool pointcloud) {
  more_eval_report r{};
  if (more_status s = more_eval(pred.c_str(), gt.c_str(), median_scaling ? 1 : 0, pointcloud ? 1 : 0, &r);
      s != MORE_OK)
    return report_load_failure(s, "eval", Options{-1, true});
  json j{{"abs_rel", r.abs_rel},
         {"tau", r.inlier_ratio},
         {"n_evaluated", r.n_evaluated},
         {"scale_applied", r.scale_applied},
         {"accuracy", nullptr},
         {"completeness", nullptr},
         {"overall", nullptr}};
  if (r.has_pointcloud) {
    j["accuracy"] = r.accuracy;
    j["completeness"] = r.completeness;
    j["overall"] = r.overall;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_synth(const std::string& spec, const std::string& out, const Options& opt) {
  if (more_status s = more_synth(spec.c_str(), out.c_str()); s != MORE_OK) {
    if (s == MORE_ERR_IO || s == MORE_ERR_INVALID_ARGUMENT) return report_load_failure(s, "synth", opt);
    return report_failure(s, "synth", opt);
  }
  if (opt.json_out) {
    std::cout << json{{"out", out}}.dump() << "\n";
  } else {
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Align and refine two-view point maps"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--threads", opt.threads, "Worker threads (0: all cores)")->envname("MORE_THREADS");
  app.add_flag("--json", opt.json_out, "Machine-readable JSON on stdout");
  app.set_version_flag("--version", std::string(more_version()));

  std::string bundle, out, config, pred, gt, spec;
  std::uint64_t seed = 0;
  bool no_ransac = false, median_scaling = false, pointcloud = false;

  auto* align = app.add_subcommand("align", "Estimate the source-to-reference scale and shift");
  align->add_option("bundle", bundle, "Bundle directory")->required();
  align->add_option("--out", out, "Output directory")->required();
  align->add_option("--seed", seed, "RANSAC seed");
  align->add_flag("--no-ransac", no_ransac, "Use every match");

  auto* refine = app.add_subcommand("refine", "Align (unless alignment.json exists) and refine");
  refine->add_option("bundle", bundle, "Bundle directory")->required();
  refine->add_option("--config", config, "Refinement config (JSON)");
  refine->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Compare a refinement result with ground truth");
  eval->add_option("pred", pred, "Result directory")->required();
  eval->add_option("gt", gt, "ground_truth.npz")->required();
  eval->add_flag("--median-scaling", median_scaling, "Rescale predicted depth by the median ratio");
  eval->add_flag("--pointcloud", pointcloud, "Also report accuracy and completeness");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic bundle from a JSON spec");
  synth->add_option("spec", spec, "Scene spec (JSON)")->required();
  synth->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitError;
  }
  if (opt.threads >= 0) more_set_threads(opt.threads);

  if (align->parsed()) return cmd_align(bundle, out, seed, no_ransac, opt);
  if (refine->parsed()) return cmd_refine(bundle, config, out, opt);
  if (eval->parsed()) return cmd_eval(pred, gt, median_scaling, pointcloud);
  if (synth->parsed()) return cmd_synth(spec, out, opt);
  return kExitError;
}
