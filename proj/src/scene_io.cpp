#include "comap/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "comap/error.hpp"
#include "comap/log.hpp"

namespace comap::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

template <typename T>
T parse_num(const std::string& tok, const fs::path& file, size_t line_no) {
  T v{};
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    fail(ErrorKind::kMalformedRecord, file.string() + ":" +
                                          std::to_string(line_no) +
                                          ": bad number '" + tok + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::kMalformedRecord, file.string() + ":" +
                                            std::to_string(line_no) +
                                            ": non-finite value");
    }
  }
  return v;
}

[[noreturn]] void malformed(const fs::path& file, size_t line_no,
                            const std::string& what) {
  fail(ErrorKind::kMalformedRecord,
       file.string() + ":" + std::to_string(line_no) + ": " + what);
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  if (!fs::exists(path)) {
    fail(ErrorKind::kMissingFile, path.string() + " does not exist");
  }
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(ErrorKind::kIoError, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc
                                 : std::ios::out | std::ios::trunc);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) fail(ErrorKind::kIoError, "write failed for " + path.string());
}

struct Intrinsics {
  double fx, fy, cx, cy;
  int width, height;
};

std::map<int, Intrinsics> read_cameras(const fs::path& path) {
  auto in = open_in(path);
  std::map<int, Intrinsics> cams;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() < 4) malformed(path, line_no, "camera record too short");
    const int id = parse_num<int>(tok[0], path, line_no);
    const std::string& model = tok[1];
    Intrinsics k{};
    k.width = parse_num<int>(tok[2], path, line_no);
    k.height = parse_num<int>(tok[3], path, line_no);
    std::vector<double> params;
    for (size_t i = 4; i < tok.size(); ++i) {
      params.push_back(parse_num<double>(tok[i], path, line_no));
    }
    if (model == "PINHOLE") {
      if (params.size() != 4) malformed(path, line_no, "PINHOLE needs 4 params");
      k.fx = params[0];
      k.fy = params[1];
      k.cx = params[2];
      k.cy = params[3];
    } else if (model == "SIMPLE_PINHOLE" || model == "SIMPLE_RADIAL") {
      const size_t want = model == "SIMPLE_PINHOLE" ? 3 : 4;
      if (params.size() != want) {
        malformed(path, line_no, model + " needs " + std::to_string(want) +
                                     " params");
      }
      k.fx = k.fy = params[0];
      k.cx = params[1];
      k.cy = params[2];
      if (model == "SIMPLE_RADIAL") {
        log::warn("radial_distortion_dropped")
            .kv("camera", id)
            .kv("k", params[3]);
      }
    } else {
      fail(ErrorKind::kUnsupportedCameraModel,
           path.string() + ":" + std::to_string(line_no) + ": " + model);
    }
    if (k.width <= 0 || k.height <= 0) {
      malformed(path, line_no, "non-positive image size");
    }
    if (!cams.emplace(id, k).second) malformed(path, line_no, "duplicate camera id");
  }
  return cams;
}

}  // namespace

SceneBundle read_colmap_reconstruction(const fs::path& dir) {
  const auto cams = read_cameras(dir / "cameras.txt");
  SceneBundle bundle;

  {
    const fs::path path = dir / "images.txt";
    auto in = open_in(path);
    std::string line;
    size_t line_no = 0;
    bool expect_points = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line[0] == '#') continue;
      if (expect_points) {
        expect_points = false;
        const auto tok = split_ws(line);
        if (tok.size() % 3 != 0) malformed(path, line_no, "bad POINTS2D list");
        for (const auto& t : tok) parse_num<double>(t, path, line_no);
        continue;
      }
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      if (tok.size() < 10) malformed(path, line_no, "image record too short");
      const int image_id = parse_num<int>(tok[0], path, line_no);
      Eigen::Quaterniond q(parse_num<double>(tok[1], path, line_no),
                           parse_num<double>(tok[2], path, line_no),
                           parse_num<double>(tok[3], path, line_no),
                           parse_num<double>(tok[4], path, line_no));
      if (q.norm() < 1e-12) malformed(path, line_no, "zero quaternion");
      q.normalize();
      const Vec3 t(parse_num<double>(tok[5], path, line_no),
                   parse_num<double>(tok[6], path, line_no),
                   parse_num<double>(tok[7], path, line_no));
      const int camera_id = parse_num<int>(tok[8], path, line_no);
      const auto cam = cams.find(camera_id);
      if (cam == cams.end()) malformed(path, line_no, "unknown camera id");
      const Intrinsics& k = cam->second;
      CameraView view = make_view(image_id, k.fx, k.fy, k.cx, k.cy,
                                  q.toRotationMatrix(), t, k.width, k.height);
      view.name = tok[9];
      try {
        view.validate();
      } catch (const Error& e) {
        malformed(path, line_no, e.what());
      }
      bundle.views.push_back(std::move(view));
      expect_points = true;
    }
  }

  {
    const fs::path path = dir / "points3D.txt";
    auto in = open_in(path);
    std::string line;
    size_t line_no = 0;
    std::set<std::int64_t> seen;
    while (std::getline(in, line)) {
      ++line_no;
      const auto tok = split_ws(line);
      if (tok.empty() || tok[0][0] == '#') continue;
      if (tok.size() < 8 || (tok.size() - 8) % 2 != 0) {
        malformed(path, line_no, "bad point record");
      }
      CloudPoint p;
      p.id = parse_num<std::int64_t>(tok[0], path, line_no);
      if (!seen.insert(p.id).second) malformed(path, line_no, "duplicate point id");
      p.position = Vec3(parse_num<double>(tok[1], path, line_no),
                        parse_num<double>(tok[2], path, line_no),
                        parse_num<double>(tok[3], path, line_no));
      const int r = parse_num<int>(tok[4], path, line_no);
      const int g = parse_num<int>(tok[5], path, line_no);
      const int b = parse_num<int>(tok[6], path, line_no);
      if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
        malformed(path, line_no, "color out of range");
      }
      p.color = Rgb{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                    static_cast<std::uint8_t>(b)};
      parse_num<double>(tok[7], path, line_no);
      p.source = PointSource::kColmap;
      bundle.colmap_points.points.push_back(p);
    }
  }

  if (bundle.colmap_points.empty()) {
    fail(ErrorKind::kMalformedRecord,
         (dir / "points3D.txt").string() + ": reconstruction has no points");
  }
  std::sort(bundle.views.begin(), bundle.views.end(),
            [](const CameraView& a, const CameraView& b) {
              return a.view_id < b.view_id;
            });
  bundle.validate();
  return bundle;
}

void write_colmap_reconstruction(const fs::path& dir,
                                 std::span<const CameraView> views,
                                 const PointCloud& points,
                                 std::span<const std::vector<TrackElement>> tracks) {
  if (!tracks.empty() && tracks.size() != points.size()) {
    fail(ErrorKind::kInvalidArgument, "tracks must parallel points");
  }
  fs::create_directories(dir);

  // Per-view 2D point lists derived from the tracks.
  struct Entry {
    Pixel pixel;
    std::int64_t point_id;
  };
  std::map<int, std::vector<Entry>> image_points;
  std::vector<std::vector<std::pair<int, size_t>>> track_refs(points.size());
  for (size_t i = 0; i < tracks.size(); ++i) {
    const std::int64_t pid =
        points.points[i].id >= 0 ? points.points[i].id : static_cast<std::int64_t>(i + 1);
    for (const auto& el : tracks[i]) {
      auto& list = image_points[el.view_id];
      track_refs[i].emplace_back(el.view_id, list.size());
      list.push_back({el.pixel, pid});
    }
  }

  {
    const fs::path path = dir / "cameras.txt";
    auto out = open_out(path);
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        << "# Number of cameras: " << views.size() << "\n";
    for (const auto& v : views) {
      out << v.view_id << " PINHOLE " << v.width << ' ' << v.height << ' '
          << fmt_double(v.fx) << ' ' << fmt_double(v.fy) << ' '
          << fmt_double(v.cx) << ' ' << fmt_double(v.cy) << '\n';
    }
    finish(out, path);
  }
  {
    const fs::path path = dir / "images.txt";
    auto out = open_out(path);
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
        << "# Number of images: " << views.size() << "\n";
    for (const auto& v : views) {
      const Eigen::Quaterniond q(v.rotation());
      const Vec3 t = v.translation();
      const std::string name =
          v.name.empty() ? "view_" + std::to_string(v.view_id) + ".png" : v.name;
      out << v.view_id << ' ' << fmt_double(q.w()) << ' ' << fmt_double(q.x())
          << ' ' << fmt_double(q.y()) << ' ' << fmt_double(q.z()) << ' '
          << fmt_double(t.x()) << ' ' << fmt_double(t.y()) << ' '
          << fmt_double(t.z()) << ' ' << v.view_id << ' ' << name << '\n';
      const auto it = image_points.find(v.view_id);
      if (it != image_points.end()) {
        bool first = true;
        for (const auto& e : it->second) {
          if (!first) out << ' ';
          first = false;
          out << fmt_double(e.pixel.x) << ' ' << fmt_double(e.pixel.y) << ' '
              << e.point_id;
        }
      }
      out << '\n';
    }
    finish(out, path);
  }
  {
    const fs::path path = dir / "points3D.txt";
    auto out = open_out(path);
    out << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, "
           "POINT2D_IDX)\n"
        << "# Number of points: " << points.size() << "\n";
    for (size_t i = 0; i < points.size(); ++i) {
      const auto& p = points.points[i];
      const std::int64_t pid = p.id >= 0 ? p.id : static_cast<std::int64_t>(i + 1);
      out << pid << ' ' << fmt_double(p.position.x()) << ' '
          << fmt_double(p.position.y()) << ' ' << fmt_double(p.position.z())
          << ' ' << int(p.color.r) << ' ' << int(p.color.g) << ' '
          << int(p.color.b) << " 0";
      for (const auto& [view_id, idx] : track_refs[i]) {
        out << ' ' << view_id << ' ' << idx;
      }
      out << '\n';
    }
    finish(out, path);
  }
}

SceneBundle load_scene(const fs::path& dir, const fs::path& depth_dir,
                       const fs::path& corr_dir) {
  SceneBundle bundle = read_colmap_reconstruction(dir);
  if (!depth_dir.empty() && fs::is_directory(depth_dir)) {
    for (const auto& v : bundle.views) {
      const fs::path p = depth_dir / depth_file_name(v.view_id);
      if (fs::exists(p)) bundle.depth_maps.emplace(v.view_id, read_depth_map(p));
    }
  }
  if (!corr_dir.empty() && fs::is_directory(corr_dir)) {
    bundle.correspondences = read_correspondence_dir(corr_dir, bundle.views);
  }
  bundle.validate();
  return bundle;
}

// --- Correspondences --------------------------------------------------------

fs::path correspondence_file_name(int src_view, int dst_view) {
  return "corr_" + std::to_string(src_view) + "_" + std::to_string(dst_view) +
         ".jsonl";
}

CorrespondenceSet read_correspondences(const fs::path& path,
                                       std::span<const CameraView> views) {
  auto find_view = [&](int id) -> const CameraView* {
    for (const auto& v : views) {
      if (v.view_id == id) return &v;
    }
    return nullptr;
  };

  auto in = open_in(path);
  CorrespondenceSet set;
  bool have_pair = false;
  const CameraView* src = nullptr;
  const CameraView* dst = nullptr;
  std::unordered_set<std::int64_t> src_pixels;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    int src_id = 0;
    int dst_id = 0;
    Match m;
    try {
      j = nlohmann::json::parse(line);
      src_id = j.at("src_view").get<int>();
      dst_id = j.at("dst_view").get<int>();
      m.src = {j.at("sx").get<double>() + 0.5, j.at("sy").get<double>() + 0.5};
      m.dst = {j.at("dx").get<double>() + 0.5, j.at("dy").get<double>() + 0.5};
      m.conf = j.at("conf").get<double>();
    } catch (const nlohmann::json::exception& e) {
      malformed(path, line_no, e.what());
    }
    if (!std::isfinite(m.src.x) || !std::isfinite(m.src.y) ||
        !std::isfinite(m.dst.x) || !std::isfinite(m.dst.y) ||
        !(m.conf >= 0.0 && m.conf <= 1.0)) {
      malformed(path, line_no, "non-finite coordinate or confidence outside [0,1]");
    }
    if (!have_pair) {
      set.src_view = src_id;
      set.dst_view = dst_id;
      src = find_view(src_id);
      dst = find_view(dst_id);
      if (!src || !dst || src_id == dst_id) {
        malformed(path, line_no, "match references unknown or identical views");
      }
      have_pair = true;
    } else if (src_id != set.src_view || dst_id != set.dst_view) {
      malformed(path, line_no, "file mixes view pairs");
    }
    if (!src->contains(m.src) || !dst->contains(m.dst)) {
      fail(ErrorKind::kOutOfBoundsPixel,
           path.string() + ":" + std::to_string(line_no) +
               ": pixel outside image bounds");
    }
    const PixelIndex sp = floor_pixel(m.src);
    const std::int64_t key = static_cast<std::int64_t>(sp.y) * src->width + sp.x;
    if (!src_pixels.insert(key).second) {
      fail(ErrorKind::kDuplicateSourcePixel,
           path.string() + ":" + std::to_string(line_no) +
               ": source pixel listed twice");
    }
    set.matches.push_back(m);
  }
  if (!have_pair) {
    // An empty file carries its pair in the name: corr_<src>_<dst>.jsonl.
    const std::string stem = path.stem().string();
    int a = 0;
    int b = 0;
    if (std::sscanf(stem.c_str(), "corr_%d_%d", &a, &b) == 2) {
      set.src_view = a;
      set.dst_view = b;
    }
  }
  return set;
}

std::vector<CorrespondenceSet> read_correspondence_dir(
    const fs::path& dir, std::span<const CameraView> views) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<CorrespondenceSet> out;
  for (const auto& f : files) {
    auto set = read_correspondences(f, views);
    if (set.src_view == set.dst_view) continue;
    out.push_back(std::move(set));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::pair(a.src_view, a.dst_view) < std::pair(b.src_view, b.dst_view);
  });
  for (size_t i = 1; i < out.size(); ++i) {
    if (out[i].src_view == out[i - 1].src_view &&
        out[i].dst_view == out[i - 1].dst_view) {
      fail(ErrorKind::kMalformedRecord,
           "view pair " + std::to_string(out[i].src_view) + "->" +
               std::to_string(out[i].dst_view) + " appears in several files");
    }
  }
  return out;
}

void write_correspondences(const fs::path& path, const CorrespondenceSet& set) {
  auto out = open_out(path);
  for (const auto& m : set.matches) {
    out << "{\"src_view\":" << set.src_view << ",\"dst_view\":" << set.dst_view
        << ",\"sx\":" << fmt_double(m.src.x - 0.5)
        << ",\"sy\":" << fmt_double(m.src.y - 0.5)
        << ",\"dx\":" << fmt_double(m.dst.x - 0.5)
        << ",\"dy\":" << fmt_double(m.dst.y - 0.5)
        << ",\"conf\":" << fmt_double(m.conf) << "}\n";
  }
  finish(out, path);
}

// --- PLY --------------------------------------------------------------------

void write_ply(const PointCloud& cloud, const fs::path& path, bool binary) {
  auto out = open_out(path, true);
  out << "ply\n"
      << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property uchar source\nend_header\n";
  for (const auto& p : cloud.points) {
    if (binary) {
      const double xyz[3] = {p.position.x(), p.position.y(), p.position.z()};
      const std::uint8_t tail[4] = {p.color.r, p.color.g, p.color.b,
                                    static_cast<std::uint8_t>(p.source)};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      out.write(reinterpret_cast<const char*>(tail), sizeof(tail));
    } else {
      out << fmt_double(p.position.x()) << ' ' << fmt_double(p.position.y())
          << ' ' << fmt_double(p.position.z()) << ' ' << int(p.color.r) << ' '
          << int(p.color.g) << ' ' << int(p.color.b) << ' '
          << int(static_cast<std::uint8_t>(p.source)) << '\n';
    }
  }
  finish(out, path);
}

namespace {

enum class PlyType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

PlyType ply_type(const std::string& name, const fs::path& path) {
  static const std::map<std::string, PlyType> kTypes = {
      {"char", PlyType::kI8},     {"int8", PlyType::kI8},
      {"uchar", PlyType::kU8},    {"uint8", PlyType::kU8},
      {"short", PlyType::kI16},   {"int16", PlyType::kI16},
      {"ushort", PlyType::kU16},  {"uint16", PlyType::kU16},
      {"int", PlyType::kI32},     {"int32", PlyType::kI32},
      {"uint", PlyType::kU32},    {"uint32", PlyType::kU32},
      {"float", PlyType::kF32},   {"float32", PlyType::kF32},
      {"double", PlyType::kF64},  {"float64", PlyType::kF64}};
  const auto it = kTypes.find(name);
  if (it == kTypes.end()) {
    fail(ErrorKind::kMalformedHeader,
         path.string() + ": unsupported PLY property type " + name);
  }
  return it->second;
}

size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kI8:
    case PlyType::kU8: return 1;
    case PlyType::kI16:
    case PlyType::kU16: return 2;
    case PlyType::kI32:
    case PlyType::kU32:
    case PlyType::kF32: return 4;
    case PlyType::kF64: return 8;
  }
  return 0;
}

double ply_decode(PlyType t, const char* p) {
  auto load = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  };
  switch (t) {
    case PlyType::kI8: return load(std::int8_t{});
    case PlyType::kU8: return load(std::uint8_t{});
    case PlyType::kI16: return load(std::int16_t{});
    case PlyType::kU16: return load(std::uint16_t{});
    case PlyType::kI32: return load(std::int32_t{});
    case PlyType::kU32: return load(std::uint32_t{});
    case PlyType::kF32: return load(float{});
    case PlyType::kF64: return load(double{});
  }
  return 0.0;
}

}  // namespace

PointCloud read_ply(const fs::path& path) {
  auto in = open_in(path, true);
  std::string line;
  if (!std::getline(in, line) || line != "ply") {
    fail(ErrorKind::kMalformedHeader, path.string() + ": missing 'ply' magic");
  }
  bool binary = false;
  bool have_format = false;
  bool in_vertex = false;
  bool vertex_seen = false;
  bool vertex_first = true;
  size_t n_vertex = 0;
  std::vector<std::pair<std::string, PlyType>> props;
  while (true) {
    if (!std::getline(in, line)) {
      fail(ErrorKind::kMalformedHeader, path.string() + ": truncated header");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() != 3) fail(ErrorKind::kMalformedHeader, path.string() + ": bad format line");
      if (tok[1] == "ascii") {
        binary = false;
      } else if (tok[1] == "binary_little_endian") {
        binary = true;
      } else {
        fail(ErrorKind::kMalformedHeader,
             path.string() + ": unsupported PLY format " + tok[1]);
      }
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) fail(ErrorKind::kMalformedHeader, path.string() + ": bad element line");
      in_vertex = tok[1] == "vertex";
      if (in_vertex) {
        vertex_seen = true;
        try {
          n_vertex = std::stoull(tok[2]);
        } catch (const std::exception&) {
          fail(ErrorKind::kMalformedHeader, path.string() + ": bad vertex count");
        }
      } else if (!vertex_seen) {
        vertex_first = false;
      }
    } else if (tok[0] == "property") {
      if (!in_vertex) continue;
      if (tok.size() != 3) {
        fail(ErrorKind::kMalformedHeader,
             path.string() + ": list properties are not supported on vertices");
      }
      props.emplace_back(tok[2], ply_type(tok[1], path));
    } else {
      fail(ErrorKind::kMalformedHeader, path.string() + ": unknown header line");
    }
  }
  if (!have_format || !vertex_seen || !vertex_first) {
    fail(ErrorKind::kMalformedHeader,
         path.string() + ": need a format line and a leading vertex element");
  }

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, is = -1;
  for (size_t i = 0; i < props.size(); ++i) {
    const auto& n = props[i].first;
    const int k = static_cast<int>(i);
    if (n == "x") ix = k;
    if (n == "y") iy = k;
    if (n == "z") iz = k;
    if (n == "red") ir = k;
    if (n == "green") ig = k;
    if (n == "blue") ib = k;
    if (n == "source") is = k;
  }
  if (ix < 0 || iy < 0 || iz < 0) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": vertex lacks x/y/z");
  }

  PointCloud cloud;
  cloud.points.reserve(n_vertex);
  std::vector<double> vals(props.size());
  size_t stride = 0;
  for (const auto& p : props) stride += ply_size(p.second);
  std::vector<char> buf(stride);
  for (size_t v = 0; v < n_vertex; ++v) {
    if (binary) {
      if (!in.read(buf.data(), static_cast<std::streamsize>(stride))) {
        fail(ErrorKind::kMalformedRecord,
             path.string() + ": truncated at vertex " + std::to_string(v));
      }
      size_t off = 0;
      for (size_t i = 0; i < props.size(); ++i) {
        vals[i] = ply_decode(props[i].second, buf.data() + off);
        off += ply_size(props[i].second);
      }
    } else {
      if (!std::getline(in, line)) {
        fail(ErrorKind::kMalformedRecord,
             path.string() + ": truncated at vertex " + std::to_string(v));
      }
      const auto tok = split_ws(line);
      if (tok.size() != props.size()) {
        fail(ErrorKind::kMalformedRecord,
             path.string() + ": wrong field count at vertex " + std::to_string(v));
      }
      for (size_t i = 0; i < props.size(); ++i) {
        vals[i] = parse_num<double>(tok[i], path, v + 1);
      }
    }
    CloudPoint p;
    p.position = Vec3(vals[ix], vals[iy], vals[iz]);
    if (!p.position.allFinite()) {
      fail(ErrorKind::kMalformedRecord,
           path.string() + ": non-finite position at vertex " + std::to_string(v));
    }
    auto channel = [&](int idx, std::uint8_t fallback) {
      if (idx < 0) return fallback;
      const double c = vals[idx];
      if (!(c >= 0.0 && c <= 255.0)) {
        fail(ErrorKind::kMalformedRecord,
             path.string() + ": color out of range at vertex " + std::to_string(v));
      }
      return static_cast<std::uint8_t>(c);
    };
    const Rgb def;
    p.color = Rgb{channel(ir, def.r), channel(ig, def.g), channel(ib, def.b)};
    if (is >= 0) {
      const double s = vals[is];
      if (s != 0.0 && s != 1.0 && s != 2.0) {
        fail(ErrorKind::kMalformedRecord,
             path.string() + ": invalid source tag at vertex " + std::to_string(v));
      }
      p.source = static_cast<PointSource>(static_cast<int>(s));
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

// --- PGM --------------------------------------------------------------------

namespace {

// Reads whitespace-separated header tokens, skipping '#' comments.
std::string pnm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) fail(ErrorKind::kMalformedHeader, path.string() + ": truncated header");
  return tok;
}

int pnm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pnm_token(in, path);
  int v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || v <= 0) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": bad header value " + tok);
  }
  return v;
}

void write_pgm(const fs::path& path, int w, int h, int max_value,
               const std::vector<std::uint16_t>& values) {
  auto out = open_out(path, true);
  out << "P5\n" << w << ' ' << h << '\n' << max_value << '\n';
  if (max_value > 255) {
    std::vector<unsigned char> bytes(values.size() * 2);
    for (size_t i = 0; i < values.size(); ++i) {
      bytes[2 * i] = static_cast<unsigned char>(values[i] >> 8);
      bytes[2 * i + 1] = static_cast<unsigned char>(values[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  } else {
    std::vector<unsigned char> bytes(values.begin(), values.end());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  finish(out, path);
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
  auto in = open_in(path, true);
  if (pnm_token(in, path) != "P5") {
    fail(ErrorKind::kMalformedHeader, path.string() + ": not a P5 PGM");
  }
  GrayImage img;
  img.width = pnm_int(in, path);
  img.height = pnm_int(in, path);
  img.max_value = pnm_int(in, path);
  if (img.max_value > 65535) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": maxval too large");
  }
  const size_t n = static_cast<size_t>(img.width) * img.height;
  const size_t bpp = img.max_value > 255 ? 2 : 1;
  std::vector<unsigned char> bytes(n * bpp);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    fail(ErrorKind::kMalformedRecord, path.string() + ": truncated raster");
  }
  img.values.resize(n);
  for (size_t i = 0; i < n; ++i) {
    img.values[i] = bpp == 2 ? static_cast<std::uint16_t>((bytes[2 * i] << 8) |
                                                          bytes[2 * i + 1])
                             : bytes[i];
    if (img.values[i] > img.max_value) {
      fail(ErrorKind::kMalformedRecord, path.string() + ": sample above maxval");
    }
  }
  return img;
}

std::vector<std::uint8_t> covis_visualization(const CovisMap& map) {
  std::vector<std::uint8_t> out(map.counts.size(), 0);
  const int denom = map.n_views - 1;
  if (denom <= 0) return out;
  for (size_t i = 0; i < out.size(); ++i) {
    // Integer half-up rounding of count * 255 / (n - 1).
    const long num = static_cast<long>(map.counts[i]) * 255;
    out[i] = static_cast<std::uint8_t>(
        std::min<long>(255, (2 * num + denom) / (2 * denom)));
  }
  return out;
}

void write_covis_map_image(const CovisMap& map, const fs::path& stem) {
  const fs::path raw = stem.string() + ".pgm";
  const fs::path vis = stem.string() + "_vis.pgm";
  write_pgm(raw, map.width, map.height, 65535, map.counts);
  const auto v8 = covis_visualization(map);
  write_pgm(vis, map.width, map.height, 255,
            std::vector<std::uint16_t>(v8.begin(), v8.end()));
}

CovisMap read_covis_map(const fs::path& path, int view_id, int n_views) {
  const GrayImage img = read_pgm(path);
  CovisMap m = CovisMap::zeros(view_id, img.width, img.height, n_views);
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (img.values[i] > n_views - 1) {
      fail(ErrorKind::kMalformedRecord,
           path.string() + ": count exceeds n_views - 1");
    }
    m.counts[i] = img.values[i];
  }
  return m;
}

// --- PFM --------------------------------------------------------------------

fs::path depth_file_name(int view_id) {
  return "depth_" + std::to_string(view_id) + ".pfm";
}

DepthMap read_depth_map(const fs::path& path) {
  auto in = open_in(path, true);
  std::string magic, dims1, dims2, scale_tok;
  if (!std::getline(in, magic)) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": empty file");
  }
  if (magic != "Pf") {
    fail(ErrorKind::kMalformedHeader,
         path.string() + ": expected single-channel 'Pf' magic");
  }
  std::string line;
  if (!std::getline(in, line)) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": missing dimensions");
  }
  int w = 0, h = 0;
  {
    std::istringstream dims(line);
    std::string extra;
    if (!(dims >> w >> h) || (dims >> extra) || w <= 0 || h <= 0) {
      fail(ErrorKind::kMalformedHeader, path.string() + ": bad dimensions");
    }
  }
  if (!std::getline(in, line)) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": missing scale");
  }
  double scale = 0.0;
  try {
    size_t used = 0;
    scale = std::stod(line, &used);
    if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw 0;
  } catch (...) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": bad scale");
  }
  if (!(scale < 0.0)) {
    fail(ErrorKind::kMalformedHeader,
         path.string() + ": only little-endian PFM (negative scale) is supported");
  }
  const size_t n = static_cast<size_t>(w) * h;
  std::vector<float> raw(n);
  if (!in.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(n * sizeof(float)))) {
    fail(ErrorKind::kIoError, path.string() + ": truncated raster");
  }
  // PFM rows run bottom-up.
  std::vector<float> values(n);
  for (int y = 0; y < h; ++y) {
    std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>(y) * w, w,
                values.begin() + static_cast<std::ptrdiff_t>(h - 1 - y) * w);
  }
  return make_depth_map(w, h, std::move(values));
}

void write_depth_map(const DepthMap& depth, const fs::path& path) {
  auto out = open_out(path, true);
  out << "Pf\n" << depth.width << ' ' << depth.height << "\n-1\n";
  for (int y = depth.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(depth.values.data() +
                                            static_cast<size_t>(y) * depth.width),
              static_cast<std::streamsize>(depth.width * sizeof(float)));
  }
  finish(out, path);
}

}  // namespace comap::io
