/* Copyright (C) 2026 The more-refine authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the point-map alignment and refinement library.
 *
 * Objects are opaque handles created and destroyed through this API. Every
 * fallible call returns a more_status; on failure more_last_error() describes
 * the problem for the calling thread until its next failing call.
 */
#ifndef MORE_MORE_H
#define MORE_MORE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MORE_API __declspec(dllexport)
#elif defined(__GNUC__)
#define MORE_API __attribute__((visibility("default")))
#else
#define MORE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum more_status {
  MORE_OK = 0,
  MORE_ERR_INVALID_ARGUMENT = 1,
  MORE_ERR_IO = 2,
  MORE_ERR_SHAPE = 3,
  MORE_ERR_DEGENERATE = 4,
  MORE_ERR_NONFINITE = 5,
  MORE_ERR_INTERNAL = 6
} more_status;

typedef struct more_config more_config;
typedef struct more_scene more_scene;
typedef struct more_result more_result;

typedef struct more_align_report {
  double scale;
  double shift[3];
  size_t match_count;
  size_t inlier_count;
  int ransac_used;
  double ransac_threshold; /* 0 when RANSAC was disabled */
} more_align_report;

typedef struct more_eval_report {
  double abs_rel;
  double inlier_ratio;
  size_t n_evaluated;
  double scale_applied;
  int has_pointcloud; /* accuracy, completeness and overall are set only when nonzero */
  double accuracy;
  double completeness;
  double overall;
} more_eval_report;

MORE_API const char* more_version(void);
MORE_API const char* more_status_string(more_status status);
MORE_API const char* more_last_error(void);
/* Caps worker threads; 0 restores the default. */
MORE_API void more_set_threads(int n);

/* Refinement settings, initialized to the library defaults. */
MORE_API more_status more_config_create(more_config** out);
/* Replaces the settings with those of a JSON file; unknown keys are errors. */
MORE_API more_status more_config_load_json(more_config* cfg, const char* path);
MORE_API more_status more_config_set_ransac(more_config* cfg, int enabled, uint64_t seed);
MORE_API void more_config_destroy(more_config* cfg);

/* Loads a bundle directory. cfg may be NULL (confidence threshold 0). */
MORE_API more_status more_scene_load(const char* bundle_dir, const more_config* cfg, more_scene** out);
MORE_API void more_scene_destroy(more_scene* scene);
/* Estimates the source-to-reference scale and shift; report may be NULL. */
MORE_API more_status more_scene_align(more_scene* scene, const more_config* cfg, more_align_report* report);
MORE_API more_status more_scene_set_alignment(more_scene* scene, double scale, const double shift[3]);
/* Reads scale and shift from an alignment.json. */
MORE_API more_status more_scene_load_alignment(more_scene* scene, const char* json_path);
/* Writes alignment.json and the world-frame aligned_points_{ref,src}.npy. */
MORE_API more_status more_scene_save_aligned(const more_scene* scene, const char* out_dir);

/* Aligns first if the scene has no alignment yet. On MORE_ERR_NONFINITE *out
 * still receives the partial result (trace up to the failure). */
MORE_API more_status more_refine(more_scene* scene, const more_config* cfg, more_result** out);
MORE_API more_status more_result_save(const more_result* result, const char* out_dir);
MORE_API size_t more_result_trace_length(const more_result* result);
/* Total loss of trace row i. */
MORE_API more_status more_result_trace_total(const more_result* result, size_t i, double* total);
MORE_API void more_result_destroy(more_result* result);

/* Compares a result directory against a ground_truth.npz (both views pooled). */
MORE_API more_status more_eval(const char* result_dir, const char* gt_file, int median_scaling, int pointcloud,
                               more_eval_report* report);

/* Generates a synthetic bundle (with ground_truth.npz) from a JSON spec. */
MORE_API more_status more_synth(const char* spec_path, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* MORE_MORE_H */
