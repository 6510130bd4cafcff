// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

// Scene bundles and refinement results on disk.
//
// A bundle directory holds manifest.json plus NPY v1.0 (C-order, little
// endian) arrays: per view an image (H,W,3), camera-frame points (H,W,3) and
// confidence (H,W), and one matches array (N,4) laid out as
// (ref_row, ref_col, src_row, src_col). float64 arrays are accepted and
// down-converted to float32 on load.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "more/core_model.hpp"

namespace more {

namespace fs = std::filesystem;

struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t element_count() const;
};

/// Parses an NPY v1.x/v2.x buffer. Accepts <f4 and <f8 (down-converted), and
/// |b1/|u1 (converted to 0/1). `name` appears in error messages.
NpyArray parse_npy(std::span<const std::uint8_t> bytes, const std::string& name);
NpyArray read_npy(const fs::path& path);

/// NPY v1.0 encoding of a raw little-endian buffer with the given dtype descr.
std::vector<std::uint8_t> encode_npy(const std::vector<std::size_t>& shape, const std::string& descr,
                                     std::span<const std::uint8_t> raw);
std::vector<std::uint8_t> encode_npy(const std::vector<std::size_t>& shape, std::span<const float> data);
std::vector<std::uint8_t> encode_npy(const std::vector<std::size_t>& shape, std::span<const double> data);
void write_npy(const fs::path& path, const std::vector<std::size_t>& shape, std::span<const float> data);

/// Uncompressed (stored) zip archive of .npy members, as numpy.savez writes.
std::map<std::string, NpyArray> read_npz(const fs::path& path);
void write_npz(const fs::path& path, const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& members);

struct ManifestView {
  std::string image_file;
  std::string points_file;
  std::string confidence_file;
  std::array<double, 9> intrinsics{};
  std::array<double, 9> rotation{};
  std::array<double, 3> translation{};
};

struct SceneBundleManifest {
  std::string version = "1.0.0";
  std::vector<ManifestView> views;
  std::string matches_file;
  std::string frame_convention = "camera_frame";
  std::string units = "scene";
};

SceneBundleManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const SceneBundleManifest& manifest);

/// Loads a bundle. Points stay in the camera frame; a pixel is valid when its
/// point is finite and its confidence is finite and >= confidence_threshold.
ScenePair load_bundle(const fs::path& dir, double confidence_threshold = 0.0);

/// Writes `pair` (camera-frame points) as a bundle. Invalid pixels are stored
/// as NaN points with zero confidence.
void save_bundle(const fs::path& dir, const ScenePair& pair, const std::string& units = "scene");

/// Everything a refinement run leaves behind.
struct ResultBundle {
  std::array<PointMap, 2> points;    // world frame
  std::array<NormalMap, 2> normals;  // world frame
  std::array<Image, 2> images;       // used for PLY colors only
  std::array<CameraModel, 2> cameras;
  AffineAlignment alignment;
  std::array<double, 2> similarity_scale{1.0, 1.0};
  std::vector<TraceRow> trace;
};

/// Writes refined_points_{ref,src}.npy, refined_normals_{ref,src}.npy,
/// alignment.json, cameras.json, trace.csv and merged.ply under `dir`.
void save_result(const fs::path& dir, const ResultBundle& result);
/// Reads back arrays, alignment and cameras (images and trace are not restored).
ResultBundle load_result(const fs::path& dir);

void write_trace_csv(const fs::path& path, std::span<const TraceRow> trace);
void write_ply(const fs::path& path, std::span<const PointMap> clouds, std::span<const Image> colors);

/// Point map as an (H,W,3) float32 array; invalid pixels become NaN.
std::vector<float> pointmap_to_array(const PointMap& pm);
std::vector<float> normalmap_to_array(const NormalMap& nm);
/// Inverse of pointmap_to_array; finite entries are valid with confidence 1.
PointMap pointmap_from_array(const NpyArray& arr, const std::string& name);

void write_alignment_json(const fs::path& path, const AffineAlignment& a, const std::array<double, 2>& s);
AffineAlignment read_alignment_json(const fs::path& path, std::array<double, 2>* s = nullptr);

void write_cameras_json(const fs::path& path, const std::array<CameraModel, 2>& cameras);
std::array<CameraModel, 2> read_cameras_json(const fs::path& path);

}  // namespace more
