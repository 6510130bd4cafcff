// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#include "more/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "more/error.hpp"

static_assert(std::endian::native == std::endian::little, "NPY/PLY I/O assumes a little-endian host");

namespace more {
namespace {

using json = nlohmann::json;

constexpr char kMagic[] = "\x93NUMPY";

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create directory " + dir.string());
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << ")";
  return os.str();
}

float nan_f() { return std::numeric_limits<float>::quiet_NaN(); }

}  // namespace

std::size_t NpyArray::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

NpyArray parse_npy(std::span<const std::uint8_t> bytes, const std::string& name) {
  require(bytes.size() >= 10 && std::memcmp(bytes.data(), kMagic, 6) == 0, ErrorKind::Io,
          name + ": not an NPY file");
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = load_le<std::uint16_t>(bytes.data() + 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    require(bytes.size() >= 12, ErrorKind::Io, name + ": truncated NPY header");
    header_len = load_le<std::uint32_t>(bytes.data() + 8);
    offset = 12;
  } else {
    fail(ErrorKind::Io, name + ": unsupported NPY version " + std::to_string(major));
  }
  require(bytes.size() >= offset + header_len, ErrorKind::Io, name + ": truncated NPY header");
  const std::string header(reinterpret_cast<const char*>(bytes.data() + offset), header_len);

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  require(std::regex_search(header, m, descr_re), ErrorKind::Io, name + ": NPY header lacks descr");
  const std::string descr = m[1];
  require(std::regex_search(header, m, order_re), ErrorKind::Io, name + ": NPY header lacks fortran_order");
  require(m[1] == "False", ErrorKind::Io, name + ": Fortran-ordered arrays are not supported");
  require(std::regex_search(header, m, shape_re), ErrorKind::Io, name + ": NPY header lacks shape");

  NpyArray arr;
  std::string dims = m[1];
  std::stringstream ss(dims);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto first = tok.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    arr.shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
  }

  const std::size_t n = arr.element_count();
  const std::uint8_t* data = bytes.data() + offset + header_len;
  const std::size_t avail = bytes.size() - offset - header_len;
  std::size_t itemsize = 0;
  if (descr == "<f4") {
    itemsize = 4;
  } else if (descr == "<f8") {
    itemsize = 8;
  } else if (descr == "|b1" || descr == "|u1") {
    itemsize = 1;
  } else {
    fail(ErrorKind::Io, name + ": unsupported dtype '" + descr + "' (expected float32 or float64)");
  }
  require(avail >= n * itemsize, ErrorKind::Io, name + ": truncated NPY data");

  arr.data.resize(n);
  if (itemsize == 4) {
    std::memcpy(arr.data.data(), data, n * 4);
  } else if (itemsize == 8) {
    for (std::size_t i = 0; i < n; ++i) arr.data[i] = static_cast<float>(load_le<double>(data + 8 * i));
  } else {
    for (std::size_t i = 0; i < n; ++i) arr.data[i] = data[i] ? 1.0f : 0.0f;
  }
  return arr;
}

NpyArray read_npy(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Io, "missing file " + path.string());
  const auto bytes = read_file(path);
  return parse_npy(bytes, path.filename().string());
}

std::vector<std::uint8_t> encode_npy(const std::vector<std::size_t>& shape, const std::string& descr,
                                     std::span<const std::uint8_t> raw) {
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape_string(shape) + ", }";
  // magic(6) + version(2) + len(2) + header + '\n' padded to a multiple of 64
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::vector<std::uint8_t> out;
  out.reserve(10 + header.size() + raw.size());
  out.insert(out.end(), kMagic, kMagic + 6);
  out.push_back(1);
  out.push_back(0);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), raw.begin(), raw.end());
  return out;
}

std::vector<std::uint8_t> encode_npy(const std::vector<std::size_t>& shape, std::span<const float> data) {
  return encode_npy(shape, "<f4",
                    std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()),
                                                  data.size() * sizeof(float)));
}

std::vector<std::uint8_t> encode_npy(const std::vector<std::size_t>& shape, std::span<const double> data) {
  return encode_npy(shape, "<f8",
                    std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()),
                                                  data.size() * sizeof(double)));
}

void write_npy(const fs::path& path, const std::vector<std::size_t>& shape, std::span<const float> data) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  require(n == data.size(), ErrorKind::Shape, path.filename().string() + ": data size does not match shape");
  write_file(path, encode_npy(shape, data));
}

// --- npz -------------------------------------------------------------------

std::map<std::string, NpyArray> read_npz(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Io, "missing file " + path.string());
  const auto bytes = read_file(path);
  const std::string name = path.filename().string();
  require(bytes.size() >= 22, ErrorKind::Io, name + ": not a zip archive");

  std::size_t eocd = std::string::npos;
  for (std::size_t i = bytes.size() - 22 + 1; i-- > 0;) {
    if (load_le<std::uint32_t>(bytes.data() + i) == 0x06054b50u) {
      eocd = i;
      break;
    }
  }
  require(eocd != std::string::npos, ErrorKind::Io, name + ": zip end-of-directory record not found");
  const std::uint16_t entries = load_le<std::uint16_t>(bytes.data() + eocd + 10);
  std::size_t cd = load_le<std::uint32_t>(bytes.data() + eocd + 16);
  require(cd != 0xFFFFFFFFu && entries != 0xFFFF, ErrorKind::Io, name + ": zip64 archives are not supported");

  std::map<std::string, NpyArray> out;
  for (int e = 0; e < entries; ++e) {
    require(cd + 46 <= bytes.size() && load_le<std::uint32_t>(bytes.data() + cd) == 0x02014b50u, ErrorKind::Io,
            name + ": corrupt zip central directory");
    const std::uint16_t method = load_le<std::uint16_t>(bytes.data() + cd + 10);
    std::uint64_t csize = load_le<std::uint32_t>(bytes.data() + cd + 20);
    std::uint64_t usize = load_le<std::uint32_t>(bytes.data() + cd + 24);
    const std::uint16_t nlen = load_le<std::uint16_t>(bytes.data() + cd + 28);
    const std::uint16_t xlen = load_le<std::uint16_t>(bytes.data() + cd + 30);
    const std::uint16_t clen = load_le<std::uint16_t>(bytes.data() + cd + 32);
    std::uint64_t local = load_le<std::uint32_t>(bytes.data() + cd + 42);
    const std::string member(reinterpret_cast<const char*>(bytes.data() + cd + 46), nlen);

    // zip64 extended information: present fields appear in a fixed order.
    std::size_t x = cd + 46 + nlen;
    const std::size_t xend = x + xlen;
    while (x + 4 <= xend) {
      const std::uint16_t id = load_le<std::uint16_t>(bytes.data() + x);
      const std::uint16_t sz = load_le<std::uint16_t>(bytes.data() + x + 2);
      if (id == 0x0001) {
        std::size_t f = x + 4;
        if (usize == 0xFFFFFFFFu) usize = load_le<std::uint64_t>(bytes.data() + f), f += 8;
        if (csize == 0xFFFFFFFFu) csize = load_le<std::uint64_t>(bytes.data() + f), f += 8;
        if (local == 0xFFFFFFFFu) local = load_le<std::uint64_t>(bytes.data() + f);
      }
      x += 4 + sz;
    }
    require(method == 0, ErrorKind::Io, name + ": compressed npz members are not supported (" + member + ")");
    require(csize == usize, ErrorKind::Io, name + ": inconsistent stored member size");
    require(local + 30 <= bytes.size() && load_le<std::uint32_t>(bytes.data() + local) == 0x04034b50u,
            ErrorKind::Io, name + ": corrupt zip local header");
    const std::uint16_t lnlen = load_le<std::uint16_t>(bytes.data() + local + 26);
    const std::uint16_t lxlen = load_le<std::uint16_t>(bytes.data() + local + 28);
    const std::size_t start = local + 30 + lnlen + lxlen;
    require(start + csize <= bytes.size(), ErrorKind::Io, name + ": truncated zip member " + member);

    std::string key = member;
    if (key.size() > 4 && key.ends_with(".npy")) key.resize(key.size() - 4);
    out[key] = parse_npy(std::span(bytes.data() + start, static_cast<std::size_t>(csize)), name + ":" + member);
    cd += 46 + nlen + xlen + clen;
  }
  return out;
}

void write_npz(const fs::path& path, const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& members) {
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> central;
  constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
  for (const auto& [key, data] : members) {
    const std::string fname = key + ".npy";
    const auto crc = static_cast<std::uint32_t>(::crc32(0L, data.data(), static_cast<uInt>(data.size())));
    const auto size = static_cast<std::uint32_t>(data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());

    put_le<std::uint32_t>(out, 0x04034b50u);
    put_le<std::uint16_t>(out, 20);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint16_t>(out, kDosDate);
    put_le<std::uint32_t>(out, crc);
    put_le<std::uint32_t>(out, size);
    put_le<std::uint32_t>(out, size);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(fname.size()));
    put_le<std::uint16_t>(out, 0);
    out.insert(out.end(), fname.begin(), fname.end());
    out.insert(out.end(), data.begin(), data.end());

    put_le<std::uint32_t>(central, 0x02014b50u);
    put_le<std::uint16_t>(central, 20);
    put_le<std::uint16_t>(central, 20);
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint16_t>(central, kDosDate);
    put_le<std::uint32_t>(central, crc);
    put_le<std::uint32_t>(central, size);
    put_le<std::uint32_t>(central, size);
    put_le<std::uint16_t>(central, static_cast<std::uint16_t>(fname.size()));
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint16_t>(central, 0);
    put_le<std::uint32_t>(central, 0);
    put_le<std::uint32_t>(central, offset);
    central.insert(central.end(), fname.begin(), fname.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put_le<std::uint32_t>(out, 0x06054b50u);
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(members.size()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(members.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(central.size()));
  put_le<std::uint32_t>(out, cd_offset);
  put_le<std::uint16_t>(out, 0);
  write_file(path, out);
}

// --- manifest --------------------------------------------------------------

namespace {

template <std::size_t N>
std::array<double, N> json_array(const json& j, const char* key) {
  require(j.contains(key) && j[key].is_array() && j[key].size() == N, ErrorKind::Io,
          std::string("manifest field '") + key + "' must be an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    const auto& v = j[key][i];
    require(v.is_number(), ErrorKind::Io, std::string("manifest field '") + key + "' must hold finite numbers");
    out[i] = v.get<double>();
    require(std::isfinite(out[i]), ErrorKind::InvalidArgument,
            std::string("manifest field '") + key + "' holds a non-finite value");
  }
  return out;
}

Mat3 mat3_from(const std::array<double, 9>& a) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = a[static_cast<std::size_t>(3 * r + c)];
  return m;
}

std::array<double, 9> mat3_to(const Mat3& m) {
  std::array<double, 9> a{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a[static_cast<std::size_t>(3 * r + c)] = m(r, c);
  return a;
}

json camera_json(const CameraModel& cam) {
  const Vec3& t = cam.translation();
  return json{{"intrinsics", mat3_to(cam.intrinsics())},
              {"rotation", mat3_to(cam.rotation())},
              {"translation", std::array<double, 3>{t.x(), t.y(), t.z()}}};
}

CameraModel camera_from_json(const json& j) {
  const auto t = json_array<3>(j, "translation");
  return CameraModel(mat3_from(json_array<9>(j, "intrinsics")), mat3_from(json_array<9>(j, "rotation")),
                     Vec3(t[0], t[1], t[2]));
}

json read_json(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Io, "missing file " + path.string());
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, path.filename().string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::string string_field(const json& j, const char* key) {
  require(j.contains(key) && j[key].is_string(), ErrorKind::Io,
          std::string("manifest field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

}  // namespace

SceneBundleManifest read_manifest(const fs::path& path) {
  const json j = read_json(path);
  SceneBundleManifest m;
  m.version = string_field(j, "version");
  m.frame_convention = string_field(j, "frame_convention");
  require(m.frame_convention == "camera_frame", ErrorKind::Io,
          "manifest frame_convention must be 'camera_frame', got '" + m.frame_convention + "'");
  m.units = j.contains("units") ? string_field(j, "units") : std::string("scene");
  m.matches_file = string_field(j, "matches_file");
  require(j.contains("views") && j["views"].is_array(), ErrorKind::Io, "manifest field 'views' must be an array");
  for (const auto& v : j["views"]) {
    ManifestView mv;
    mv.image_file = string_field(v, "image_file");
    mv.points_file = string_field(v, "points_file");
    mv.confidence_file = string_field(v, "confidence_file");
    mv.intrinsics = json_array<9>(v, "intrinsics");
    mv.rotation = json_array<9>(v, "rotation");
    mv.translation = json_array<3>(v, "translation");
    m.views.push_back(mv);
  }
  require(m.views.size() == 2, ErrorKind::Io,
          "manifest must list exactly 2 views, found " + std::to_string(m.views.size()));
  return m;
}

void write_manifest(const fs::path& path, const SceneBundleManifest& m) {
  json views = json::array();
  for (const auto& v : m.views) {
    views.push_back({{"image_file", v.image_file},
                     {"points_file", v.points_file},
                     {"confidence_file", v.confidence_file},
                     {"intrinsics", v.intrinsics},
                     {"rotation", v.rotation},
                     {"translation", v.translation}});
  }
  write_json(path, json{{"version", m.version},
                        {"views", views},
                        {"matches_file", m.matches_file},
                        {"frame_convention", m.frame_convention},
                        {"units", m.units}});
}

// --- bundles ---------------------------------------------------------------

namespace {

void expect_shape(const NpyArray& arr, const std::vector<std::size_t>& shape, const std::string& file) {
  if (arr.shape != shape) {
    fail(ErrorKind::Shape, file + ": expected shape " + shape_string(shape) + ", got " + shape_string(arr.shape));
  }
}

const char* view_tag(std::size_t v) { return v == 0 ? "ref" : "src"; }

}  // namespace

ScenePair load_bundle(const fs::path& dir, double confidence_threshold) {
  require(fs::is_directory(dir), ErrorKind::Io, "bundle directory not found: " + dir.string());
  const SceneBundleManifest manifest = read_manifest(dir / "manifest.json");

  ScenePair pair;
  std::size_t H = 0, W = 0;
  for (std::size_t v = 0; v < 2; ++v) {
    const ManifestView& mv = manifest.views[v];
    ViewBundle& vb = pair.view(v == 0 ? View::Ref : View::Src);

    const NpyArray image = read_npy(dir / mv.image_file);
    require(image.shape.size() == 3 && image.shape[2] == 3, ErrorKind::Shape,
            mv.image_file + ": expected shape (H, W, 3), got " + shape_string(image.shape));
    if (v == 0) {
      H = image.shape[0];
      W = image.shape[1];
    }
    expect_shape(image, {H, W, 3}, mv.image_file);
    const PixelGrid grid(static_cast<int>(W), static_cast<int>(H));

    const NpyArray points = read_npy(dir / mv.points_file);
    expect_shape(points, {H, W, 3}, mv.points_file);
    const NpyArray conf = read_npy(dir / mv.confidence_file);
    expect_shape(conf, {H, W}, mv.confidence_file);

    vb.camera = CameraModel(mat3_from(mv.intrinsics), mat3_from(mv.rotation),
                            Vec3(mv.translation[0], mv.translation[1], mv.translation[2]));
    vb.image = Image(grid);
    vb.pointmap = PointMap(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      vb.image.rgb[i] = Vec3(image.data[3 * i], image.data[3 * i + 1], image.data[3 * i + 2]);
      const Vec3 p(points.data[3 * i], points.data[3 * i + 1], points.data[3 * i + 2]);
      const double c = conf.data[i];
      vb.pointmap.points[i] = p;
      vb.pointmap.confidence[i] = std::isfinite(c) ? c : 0.0;
      vb.pointmap.valid[i] = p.allFinite() && std::isfinite(c) && c >= confidence_threshold;
    }
    vb.normals = NormalMap(grid);
  }

  const NpyArray matches = read_npy(dir / manifest.matches_file);
  require(matches.shape.size() == 2 && matches.shape[1] == 4, ErrorKind::Shape,
          manifest.matches_file + ": expected shape (N, 4), got " + shape_string(matches.shape));
  const std::size_t n = matches.shape[0];
  for (std::size_t k = 0; k < n; ++k) {
    const float* m = &matches.data[4 * k];
    const Vec2 ref(m[0], m[1]);
    const Vec2 src(m[2], m[3]);
    require(nearest_pixel(pair.ref.pointmap.grid, ref) && nearest_pixel(pair.src.pointmap.grid, src),
            ErrorKind::Shape, manifest.matches_file + ": match " + std::to_string(k) + " lies outside the image");
    pair.matches.push_back(ref, src, true);
  }
  return pair;
}

void save_bundle(const fs::path& dir, const ScenePair& pair, const std::string& units) {
  ensure_dir(dir);
  SceneBundleManifest manifest;
  manifest.units = units;
  manifest.matches_file = "matches.npy";
  for (std::size_t v = 0; v < 2; ++v) {
    const ViewBundle& vb = pair.view(v == 0 ? View::Ref : View::Src);
    const PixelGrid& g = vb.pointmap.grid;
    require(vb.image.grid == g, ErrorKind::Shape, "image and point map grids differ");
    const std::string tag = view_tag(v);
    ManifestView mv;
    mv.image_file = "image_" + tag + ".npy";
    mv.points_file = "points_" + tag + ".npy";
    mv.confidence_file = "confidence_" + tag + ".npy";
    mv.intrinsics = mat3_to(vb.camera.intrinsics());
    mv.rotation = mat3_to(vb.camera.rotation());
    mv.translation = {vb.camera.translation().x(), vb.camera.translation().y(), vb.camera.translation().z()};

    const auto H = static_cast<std::size_t>(g.height()), W = static_cast<std::size_t>(g.width());
    std::vector<float> img(g.size() * 3), conf(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (int c = 0; c < 3; ++c) img[3 * i + c] = static_cast<float>(vb.image.rgb[i][c]);
      conf[i] = vb.pointmap.valid[i] ? static_cast<float>(vb.pointmap.confidence[i]) : 0.0f;
    }
    write_npy(dir / mv.image_file, {H, W, 3}, img);
    write_npy(dir / mv.points_file, {H, W, 3}, pointmap_to_array(vb.pointmap));
    write_npy(dir / mv.confidence_file, {H, W}, conf);
    manifest.views.push_back(mv);
  }
  std::vector<float> m(pair.matches.size() * 4);
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    m[4 * k + 0] = static_cast<float>(pair.matches.ref_pixels[k].x());
    m[4 * k + 1] = static_cast<float>(pair.matches.ref_pixels[k].y());
    m[4 * k + 2] = static_cast<float>(pair.matches.src_pixels[k].x());
    m[4 * k + 3] = static_cast<float>(pair.matches.src_pixels[k].y());
  }
  write_npy(dir / manifest.matches_file, {pair.matches.size(), 4}, m);
  write_manifest(dir / "manifest.json", manifest);
}

// --- results ---------------------------------------------------------------

std::vector<float> pointmap_to_array(const PointMap& pm) {
  std::vector<float> out(pm.grid.size() * 3, nan_f());
  for (std::size_t i = 0; i < pm.grid.size(); ++i) {
    if (!pm.valid[i]) continue;
    for (int c = 0; c < 3; ++c) out[3 * i + c] = static_cast<float>(pm.points[i][c]);
  }
  return out;
}

std::vector<float> normalmap_to_array(const NormalMap& nm) {
  std::vector<float> out(nm.grid.size() * 3, nan_f());
  for (std::size_t i = 0; i < nm.grid.size(); ++i) {
    if (!nm.valid[i]) continue;
    for (int c = 0; c < 3; ++c) out[3 * i + c] = static_cast<float>(nm.normals[i][c]);
  }
  return out;
}

PointMap pointmap_from_array(const NpyArray& arr, const std::string& name) {
  require(arr.shape.size() == 3 && arr.shape[2] == 3, ErrorKind::Shape,
          name + ": expected shape (H, W, 3), got " + shape_string(arr.shape));
  PointMap pm(PixelGrid(static_cast<int>(arr.shape[1]), static_cast<int>(arr.shape[0])));
  for (std::size_t i = 0; i < pm.grid.size(); ++i) {
    const Vec3 p(arr.data[3 * i], arr.data[3 * i + 1], arr.data[3 * i + 2]);
    pm.points[i] = p;
    pm.valid[i] = p.allFinite();
    pm.confidence[i] = pm.valid[i] ? 1.0 : 0.0;
  }
  return pm;
}

void write_alignment_json(const fs::path& path, const AffineAlignment& a, const std::array<double, 2>& s) {
  write_json(path, json{{"scale", a.scale},
                        {"shift", std::array<double, 3>{a.shift.x(), a.shift.y(), a.shift.z()}},
                        {"s_ref", s[0]},
                        {"s_src", s[1]}});
}

AffineAlignment read_alignment_json(const fs::path& path, std::array<double, 2>* s) {
  const json j = read_json(path);
  require(j.contains("scale") && j["scale"].is_number(), ErrorKind::Io, "alignment.json lacks 'scale'");
  const auto shift = json_array<3>(j, "shift");
  AffineAlignment a{j["scale"].get<double>(), Vec3(shift[0], shift[1], shift[2])};
  require(std::isfinite(a.scale) && a.scale > 0.0, ErrorKind::InvalidArgument,
          "alignment.json scale must be positive and finite");
  if (s) {
    (*s)[0] = j.value("s_ref", 1.0);
    (*s)[1] = j.value("s_src", 1.0);
  }
  return a;
}

void write_cameras_json(const fs::path& path, const std::array<CameraModel, 2>& cameras) {
  write_json(path, json{{"views", json::array({camera_json(cameras[0]), camera_json(cameras[1])})}});
}

std::array<CameraModel, 2> read_cameras_json(const fs::path& path) {
  const json j = read_json(path);
  require(j.contains("views") && j["views"].is_array() && j["views"].size() == 2, ErrorKind::Io,
          path.filename().string() + ": expected 2 views");
  return {camera_from_json(j["views"][0]), camera_from_json(j["views"][1])};
}

void write_trace_csv(const fs::path& path, std::span<const TraceRow> trace) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  require(f != nullptr, ErrorKind::Io, "cannot write " + path.string());
  std::fprintf(f, "iter,level,intra,inter,knn,ray,sim,normal,total\n");
  for (const auto& r : trace) {
    const LossTerms& t = r.terms;
    std::fprintf(f, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.level, t.intra, t.inter,
                 t.knn, t.ray, t.sim, t.normal, t.total);
  }
  const bool ok = std::fclose(f) == 0;
  require(ok, ErrorKind::Io, "cannot finish writing " + path.string());
}

void write_ply(const fs::path& path, std::span<const PointMap> clouds, std::span<const Image> colors) {
  require(clouds.size() == colors.size(), ErrorKind::InvalidArgument, "one color image per cloud required");
  std::size_t count = 0;
  for (const auto& c : clouds) count += c.valid_count();

  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << count
         << "\nproperty float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.reserve(out.size() + count * 15);
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    const PointMap& pm = clouds[k];
    const bool has_color = colors[k].grid == pm.grid && colors[k].rgb.size() == pm.grid.size();
    for (std::size_t i = 0; i < pm.grid.size(); ++i) {
      if (!pm.valid[i]) continue;
      for (int c = 0; c < 3; ++c) put_le<float>(out, static_cast<float>(pm.points[i][c]));
      for (int c = 0; c < 3; ++c) {
        const double v = has_color ? colors[k].rgb[i][c] : 0.5;
        const double clamped = std::isfinite(v) ? std::min(1.0, std::max(0.0, v)) : 0.0;
        out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0)));
      }
    }
  }
  write_file(path, out);
}

void save_result(const fs::path& dir, const ResultBundle& r) {
  ensure_dir(dir);
  for (std::size_t v = 0; v < 2; ++v) {
    const std::string tag = view_tag(v);
    const PixelGrid& g = r.points[v].grid;
    require(r.normals[v].grid == g, ErrorKind::Shape, "refined point and normal grids differ");
    const std::vector<std::size_t> shape{static_cast<std::size_t>(g.height()), static_cast<std::size_t>(g.width()), 3};
    write_npy(dir / ("refined_points_" + tag + ".npy"), shape, pointmap_to_array(r.points[v]));
    write_npy(dir / ("refined_normals_" + tag + ".npy"), shape, normalmap_to_array(r.normals[v]));
  }
  write_alignment_json(dir / "alignment.json", r.alignment, r.similarity_scale);
  write_cameras_json(dir / "cameras.json", r.cameras);
  write_trace_csv(dir / "trace.csv", r.trace);
  write_ply(dir / "merged.ply", r.points, r.images);
}

ResultBundle load_result(const fs::path& dir) {
  ResultBundle r;
  for (std::size_t v = 0; v < 2; ++v) {
    const std::string tag = view_tag(v);
    const std::string pname = "refined_points_" + tag + ".npy";
    const std::string nname = "refined_normals_" + tag + ".npy";
    r.points[v] = pointmap_from_array(read_npy(dir / pname), pname);
    const PointMap n = pointmap_from_array(read_npy(dir / nname), nname);
    require(n.grid == r.points[v].grid, ErrorKind::Shape, nname + ": grid differs from " + pname);
    r.normals[v] = NormalMap(n.grid);
    r.normals[v].normals = n.points;
    r.normals[v].valid = n.valid;
    r.images[v] = Image(n.grid);
  }
  r.alignment = read_alignment_json(dir / "alignment.json", &r.similarity_scale);
  r.cameras = read_cameras_json(dir / "cameras.json");
  return r;
}

}  // namespace more
