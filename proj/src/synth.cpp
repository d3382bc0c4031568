#include "comap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "comap/error.hpp"
#include "comap/log.hpp"
#include "comap/parallel.hpp"
#include "comap/scene_io.hpp"

namespace comap::synth {

using nlohmann::json;

namespace {

constexpr double kRayTMin = 1e-9;

[[noreturn]] void bad_spec(const std::string& msg) {
  fail(ErrorKind::kDegenerateSpec, msg);
}

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    bad_spec(std::string(what) + " must be an array of 3 numbers");
  }
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) bad_spec(std::string(what) + " must be numeric");
    v[k] = j[k].get<double>();
  }
  return v;
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Rgb color_from(const json& j) {
  if (!j.is_array() || j.size() != 3) bad_spec("color must be [r, g, b]");
  Rgb c;
  std::uint8_t* dst[3] = {&c.r, &c.g, &c.b};
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number_integer()) bad_spec("color entries must be integers");
    const int v = j[k].get<int>();
    if (v < 0 || v > 255) bad_spec("color entries must lie in [0, 255]");
    *dst[k] = static_cast<std::uint8_t>(v);
  }
  return c;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    bad_spec(std::string("field '") + key + "' has the wrong type");
  }
}

void validate_spec(const SceneSpec& spec) {
  if (spec.surfaces.empty()) bad_spec("no surfaces");
  for (const auto& s : spec.surfaces) {
    if (!s.a.allFinite() || !s.b.allFinite()) bad_spec("non-finite surface");
    switch (s.kind) {
      case PrimitiveKind::kPlane:
        if (s.b.norm() < 1e-12) bad_spec("plane normal is zero");
        break;
      case PrimitiveKind::kSphere:
        if (!(s.radius > 0.0) || !std::isfinite(s.radius)) {
          bad_spec("sphere radius must be positive");
        }
        break;
      case PrimitiveKind::kBox:
        if (!(s.a.array() < s.b.array()).all()) bad_spec("box min must be < max");
        break;
    }
  }
  const RigSpec& rig = spec.rig;
  if (rig.views < 1) bad_spec("rig needs at least one view");
  if (rig.type == RigType::kOutward360 && !(rig.radius > 0.0)) {
    bad_spec("ring radius must be positive");
  }
  if (spec.width < 1 || spec.height < 1) bad_spec("resolution must be positive");
  if (spec.width > 65535 || spec.height > 65535) bad_spec("resolution too large");
  if (!(spec.fov_deg > 0.0 && spec.fov_deg < 180.0)) bad_spec("fov_deg must lie in (0, 180)");
  if (!(spec.noise_px >= 0.0)) bad_spec("noise_px must be >= 0");
  if (!(spec.dropout >= 0.0 && spec.dropout <= 1.0)) bad_spec("dropout must lie in [0, 1]");
  if (!(spec.depth_scale > 0.0)) bad_spec("depth_scale must be positive");
  if (spec.sparse_stride < 1) bad_spec("sparse_stride must be >= 1");
}

// Independent stream per (a, b) derived from the scene seed.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

}  // namespace

// --- primitives ---------------------------------------------------------------

Primitive Primitive::plane(const Vec3& point, const Vec3& normal, Rgb color) {
  Primitive p;
  p.kind = PrimitiveKind::kPlane;
  p.a = point;
  p.b = normal;
  p.color = color;
  return p;
}

Primitive Primitive::sphere(const Vec3& center, double radius, Rgb color) {
  Primitive p;
  p.kind = PrimitiveKind::kSphere;
  p.a = center;
  p.radius = radius;
  p.color = color;
  return p;
}

Primitive Primitive::box(const Vec3& min, const Vec3& max, Rgb color) {
  Primitive p;
  p.kind = PrimitiveKind::kBox;
  p.a = min;
  p.b = max;
  p.color = color;
  return p;
}

std::optional<double> Primitive::intersect(const Vec3& origin, const Vec3& dir,
                                           double t_min) const {
  switch (kind) {
    case PrimitiveKind::kPlane: {
      const double denom = b.dot(dir);
      if (std::abs(denom) < 1e-15) return std::nullopt;
      const double t = b.dot(a - origin) / denom;
      if (t > t_min) return t;
      return std::nullopt;
    }
    case PrimitiveKind::kSphere: {
      const Vec3 oc = origin - a;
      const double qa = dir.squaredNorm();
      const double qb = oc.dot(dir);
      const double qc = oc.squaredNorm() - radius * radius;
      const double disc = qb * qb - qa * qc;
      if (disc < 0.0) return std::nullopt;
      const double sq = std::sqrt(disc);
      // Numerically stable pair of roots.
      const double q = qb >= 0.0 ? -(qb + sq) : -(qb - sq);
      double t0 = q / qa;
      double t1 = q != 0.0 ? qc / q : t0;
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_min) return t0;
      if (t1 > t_min) return t1;
      return std::nullopt;
    }
    case PrimitiveKind::kBox: {
      double t_near = -std::numeric_limits<double>::infinity();
      double t_far = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k) {
        if (dir[k] == 0.0) {
          if (origin[k] < a[k] || origin[k] > b[k]) return std::nullopt;
          continue;
        }
        double t1 = (a[k] - origin[k]) / dir[k];
        double t2 = (b[k] - origin[k]) / dir[k];
        if (t1 > t2) std::swap(t1, t2);
        t_near = std::max(t_near, t1);
        t_far = std::min(t_far, t2);
      }
      if (t_near > t_far) return std::nullopt;
      if (t_near > t_min) return t_near;
      if (t_far > t_min) return t_far;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

double Primitive::distance(const Vec3& p) const {
  switch (kind) {
    case PrimitiveKind::kPlane:
      return std::abs(b.normalized().dot(p - a));
    case PrimitiveKind::kSphere:
      return std::abs((p - a).norm() - radius);
    case PrimitiveKind::kBox: {
      const Vec3 outside = (a - p).cwiseMax(p - b).cwiseMax(0.0);
      if (outside.squaredNorm() > 0.0) return outside.norm();
      return (p - a).cwiseMin(b - p).minCoeff();
    }
  }
  return 0.0;
}

// --- spec JSON ---------------------------------------------------------------

SceneSpec scene_spec_from_json(const json& j) {
  if (!j.is_object()) bad_spec("scene spec must be a JSON object");
  SceneSpec spec;
  spec.width = get_or<int>(j, "width", spec.width);
  spec.height = get_or<int>(j, "height", spec.height);
  spec.fov_deg = get_or<double>(j, "fov_deg", spec.fov_deg);
  spec.seed = get_or<std::uint64_t>(j, "seed", spec.seed);
  spec.noise_px = get_or<double>(j, "noise_px", spec.noise_px);
  spec.dropout = get_or<double>(j, "dropout", spec.dropout);
  spec.depth_scale = get_or<double>(j, "depth_scale", spec.depth_scale);
  spec.sparse_stride = get_or<int>(j, "sparse_stride", spec.sparse_stride);

  if (auto it = j.find("rig"); it != j.end()) {
    const json& r = *it;
    if (!r.is_object()) bad_spec("rig must be an object");
    const std::string type = get_or<std::string>(r, "type", "forward_facing");
    if (type == "forward_facing") {
      spec.rig.type = RigType::kForwardFacing;
    } else if (type == "outward_360") {
      spec.rig.type = RigType::kOutward360;
    } else {
      bad_spec("unknown rig type '" + type + "'");
    }
    spec.rig.views = get_or<int>(r, "views", spec.rig.views);
    spec.rig.baseline = get_or<double>(r, "baseline", spec.rig.baseline);
    spec.rig.radius = get_or<double>(r, "radius", spec.rig.radius);
    spec.rig.height = get_or<double>(r, "height", spec.rig.height);
    if (auto t = r.find("target"); t != r.end()) spec.rig.target = vec3_from(*t, "rig.target");
  }

  auto surfaces = j.find("surfaces");
  if (surfaces == j.end() || !surfaces->is_array()) bad_spec("surfaces array missing");
  for (const json& s : *surfaces) {
    if (!s.is_object()) bad_spec("surface must be an object");
    const std::string type = get_or<std::string>(s, "type", "");
    Rgb color;
    if (auto c = s.find("color"); c != s.end()) color = color_from(*c);
    auto field = [&](const char* key) -> const json& {
      auto it = s.find(key);
      if (it == s.end()) bad_spec(type + " surface lacks '" + key + "'");
      return *it;
    };
    if (type == "plane") {
      spec.surfaces.push_back(Primitive::plane(vec3_from(field("point"), "point"),
                                               vec3_from(field("normal"), "normal"), color));
    } else if (type == "sphere") {
      const json& radius = field("radius");
      if (!radius.is_number()) bad_spec("sphere radius must be numeric");
      spec.surfaces.push_back(Primitive::sphere(vec3_from(field("center"), "center"),
                                                radius.get<double>(), color));
    } else if (type == "box") {
      spec.surfaces.push_back(Primitive::box(vec3_from(field("min"), "min"),
                                             vec3_from(field("max"), "max"), color));
    } else {
      bad_spec("unknown surface type '" + type + "'");
    }
  }
  validate_spec(spec);
  return spec;
}

json scene_spec_to_json(const SceneSpec& spec) {
  json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["fov_deg"] = spec.fov_deg;
  j["seed"] = spec.seed;
  j["noise_px"] = spec.noise_px;
  j["dropout"] = spec.dropout;
  j["depth_scale"] = spec.depth_scale;
  j["sparse_stride"] = spec.sparse_stride;
  json rig;
  rig["type"] = spec.rig.type == RigType::kForwardFacing ? "forward_facing" : "outward_360";
  rig["views"] = spec.rig.views;
  rig["baseline"] = spec.rig.baseline;
  rig["radius"] = spec.rig.radius;
  rig["height"] = spec.rig.height;
  if (spec.rig.target) rig["target"] = vec3_to(*spec.rig.target);
  j["rig"] = rig;
  json surfaces = json::array();
  for (const auto& s : spec.surfaces) {
    json o;
    switch (s.kind) {
      case PrimitiveKind::kPlane:
        o["type"] = "plane";
        o["point"] = vec3_to(s.a);
        o["normal"] = vec3_to(s.b);
        break;
      case PrimitiveKind::kSphere:
        o["type"] = "sphere";
        o["center"] = vec3_to(s.a);
        o["radius"] = s.radius;
        break;
      case PrimitiveKind::kBox:
        o["type"] = "box";
        o["min"] = vec3_to(s.a);
        o["max"] = vec3_to(s.b);
        break;
    }
    o["color"] = json::array({s.color.r, s.color.g, s.color.b});
    surfaces.push_back(o);
  }
  j["surfaces"] = surfaces;
  return j;
}

SceneSpec read_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kMissingFile, "cannot open scene spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::kMalformedRecord, path.string() + ": " + e.what());
  }
  return scene_spec_from_json(j);
}

// --- rig and ray casting --------------------------------------------------------

std::vector<CameraView> make_rig(const SceneSpec& spec) {
  validate_spec(spec);
  const double half_fov = spec.fov_deg * std::numbers::pi / 360.0;
  const double f = 0.5 * spec.width / std::tan(half_fov);
  const double cx = 0.5 * spec.width;
  const double cy = 0.5 * spec.height;
  const Vec3 down = Vec3::UnitY();
  const RigSpec& rig = spec.rig;

  std::vector<CameraView> views;
  views.reserve(rig.views);
  for (int i = 0; i < rig.views; ++i) {
    CameraView v;
    if (rig.type == RigType::kForwardFacing) {
      const Vec3 eye((i - 0.5 * (rig.views - 1)) * rig.baseline, 0.0, 0.0);
      if (rig.target) {
        v = look_at_view(i, f, f, cx, cy, eye, *rig.target, down, spec.width, spec.height);
      } else {
        v = make_view(i, f, f, cx, cy, Mat3::Identity(), -eye, spec.width, spec.height);
      }
    } else {
      const Vec3 target = rig.target.value_or(Vec3::Zero());
      const double angle = 2.0 * std::numbers::pi * i / rig.views;
      const Vec3 eye = target + Vec3(rig.radius * std::sin(angle), rig.height,
                                     -rig.radius * std::cos(angle));
      v = look_at_view(i, f, f, cx, cy, eye, target, down, spec.width, spec.height);
    }
    v.name = "view_" + std::to_string(i) + ".png";
    views.push_back(std::move(v));
  }
  return views;
}

std::optional<Hit> cast_ray(const std::vector<Primitive>& surfaces,
                            const Vec3& origin, const Vec3& dir) {
  std::optional<Hit> best;
  for (size_t s = 0; s < surfaces.size(); ++s) {
    const auto t = surfaces[s].intersect(origin, dir, kRayTMin);
    if (t && (!best || *t < best->t)) best = Hit{*t, static_cast<int>(s)};
  }
  return best;
}

bool visible_from(const std::vector<Primitive>& surfaces, const CameraView& view,
                  const Vec3& p) {
  if (!project(view, p)) return false;
  const Vec3 origin = view.center();
  const Vec3 delta = p - origin;
  const double dist = delta.norm();
  const auto hit = cast_ray(surfaces, origin, delta / dist);
  return !hit || hit->t >= dist - kOcclusionTolerance;
}

double distance_to_surfaces(const std::vector<Primitive>& surfaces, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : surfaces) best = std::min(best, s.distance(p));
  return best;
}

// --- scene generation ---------------------------------------------------------

namespace {

ViewTruth render_truth(const std::vector<Primitive>& surfaces, const CameraView& view) {
  ViewTruth t;
  t.width = view.width;
  t.height = view.height;
  const size_t n = static_cast<size_t>(view.width) * view.height;
  t.hit.assign(n, 0);
  t.point.assign(n, Vec3::Zero());
  t.surface.assign(n, -1);
  std::vector<float> depth(n, 0.0f);
  for (int y = 0; y < view.height; ++y) {
    for (int x = 0; x < view.width; ++x) {
      const Ray ray = pixel_ray(view, pixel_center({x, y}));
      const auto hit = cast_ray(surfaces, ray.origin, ray.direction);
      if (!hit) continue;
      const size_t k = t.index(x, y);
      const Vec3 p = ray.origin + hit->t * ray.direction;
      const double z = view.to_camera(p).z();
      if (!(z > 0.0)) continue;
      t.hit[k] = 1;
      t.point[k] = p;
      t.surface[k] = hit->surface;
      depth[k] = static_cast<float>(z);
    }
  }
  t.depth = make_depth_map(view.width, view.height, std::move(depth));
  return t;
}

}  // namespace

SyntheticScene generate_scene(const SceneSpec& spec, int threads) {
  validate_spec(spec);
  SyntheticScene scene;
  scene.spec = spec;
  scene.bundle.views = make_rig(spec);
  const auto& views = scene.bundle.views;
  const size_t n_views = views.size();

  scene.truth.resize(n_views);
  parallel_for(n_views, threads, [&](size_t i) {
    scene.truth[i] = render_truth(spec.surfaces, views[i]);
  });

  for (size_t i = 0; i < n_views; ++i) {
    const ViewTruth& t = scene.truth[i];
    if (std::none_of(t.hit.begin(), t.hit.end(), [](std::uint8_t h) { return h != 0; })) {
      bad_spec("view " + std::to_string(views[i].view_id) + " sees no surface");
    }
    std::vector<float> scaled(t.depth.values);
    for (float& d : scaled) d = static_cast<float>(d * spec.depth_scale);
    scene.bundle.depth_maps[views[i].view_id] =
        make_depth_map(t.width, t.height, std::move(scaled));
  }

  // Sparse points on a stride grid, observed by every view that sees them.
  struct Candidate {
    Vec3 point;
    Rgb color;
    std::vector<TrackObservation> track;
  };
  std::vector<std::vector<Candidate>> per_view(n_views);
  parallel_for(n_views, threads, [&](size_t i) {
    const ViewTruth& t = scene.truth[i];
    const int s = spec.sparse_stride;
    for (int y = s / 2; y < t.height; y += s) {
      for (int x = s / 2; x < t.width; x += s) {
        const size_t k = t.index(x, y);
        if (!t.hit[k]) continue;
        Candidate c;
        c.point = t.point[k];
        c.color = spec.surfaces[t.surface[k]].color;
        for (size_t j = 0; j < n_views; ++j) {
          if (j != i && !visible_from(spec.surfaces, views[j], c.point)) continue;
          const auto proj = project(views[j], c.point);
          if (!proj) continue;
          c.track.push_back({views[j].view_id, proj->pixel()});
        }
        per_view[i].push_back(std::move(c));
      }
    }
  });

  bool any_multi = false;
  for (const auto& cands : per_view) {
    for (const auto& c : cands) any_multi |= c.track.size() >= 2;
  }
  for (const auto& cands : per_view) {
    for (const auto& c : cands) {
      if (c.track.empty() || (any_multi && c.track.size() < 2)) continue;
      CloudPoint p;
      p.position = c.point;
      p.color = c.color;
      p.source = PointSource::kColmap;
      p.id = static_cast<std::int64_t>(scene.bundle.colmap_points.size()) + 1;
      scene.bundle.colmap_points.points.push_back(p);
      scene.tracks.push_back(c.track);
    }
  }
  if (scene.bundle.colmap_points.empty()) bad_spec("no sparse points visible");
  log::info("synth_scene")
      .kv("views", n_views)
      .kv("sparse_points", scene.bundle.colmap_points.size());
  return scene;
}

std::vector<CorrespondenceSet> oracle_correspondences(const SyntheticScene& scene,
                                                      double noise_px,
                                                      double dropout,
                                                      std::uint64_t seed,
                                                      int threads) {
  const auto& views = scene.bundle.views;
  const size_t n = views.size();
  std::vector<std::vector<CorrespondenceSet>> per_src(n);
  parallel_for(n, threads, [&](size_t i) {
    const ViewTruth& t = scene.truth[i];
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      CorrespondenceSet set;
      set.src_view = views[i].view_id;
      set.dst_view = views[j].view_id;
      auto rng = derived_rng(seed, i, j);
      std::normal_distribution<double> noise(0.0, 1.0);
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      for (int y = 0; y < t.height; ++y) {
        for (int x = 0; x < t.width; ++x) {
          const size_t k = t.index(x, y);
          if (!t.hit[k]) continue;
          const Vec3& p = t.point[k];
          if (!visible_from(scene.spec.surfaces, views[j], p)) continue;
          const auto proj = project(views[j], p);
          Pixel dst = proj->pixel();
          // Draws happen for every visible pixel so streams stay aligned
          // regardless of the outcome.
          const double nx = noise(rng);
          const double ny = noise(rng);
          const double u = coin(rng);
          if (noise_px > 0.0) {
            dst.x += noise_px * nx;
            dst.y += noise_px * ny;
            if (!views[j].contains(dst)) continue;
          }
          if (dropout > 0.0 && u < dropout) continue;
          set.matches.push_back({pixel_center({x, y}), dst, 1.0});
        }
      }
      per_src[i].push_back(std::move(set));
    }
  });
  std::vector<CorrespondenceSet> out;
  for (auto& sets : per_src) {
    for (auto& s : sets) out.push_back(std::move(s));
  }
  return out;
}

std::vector<CovisMap> oracle_covis_map(const SyntheticScene& scene) {
  const auto& views = scene.bundle.views;
  const int n = static_cast<int>(views.size());
  std::vector<CovisMap> maps;
  for (int i = 0; i < n; ++i) {
    const ViewTruth& t = scene.truth[i];
    CovisMap m = CovisMap::zeros(views[i].view_id, t.width, t.height, n);
    for (int y = 0; y < t.height; ++y) {
      for (int x = 0; x < t.width; ++x) {
        const size_t k = t.index(x, y);
        if (!t.hit[k]) continue;
        int count = 0;
        for (int j = 0; j < n; ++j) {
          if (j != i && visible_from(scene.spec.surfaces, views[j], t.point[k])) ++count;
        }
        m.at(x, y) = static_cast<std::uint16_t>(count);
      }
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

std::vector<double> oracle_nearest_neighbor(const std::vector<Vec3>& cloud,
                                            const std::vector<Vec3>& queries) {
  if (cloud.empty()) fail(ErrorKind::kEmptyInput, "oracle_nearest_neighbor: empty cloud");
  std::vector<double> out;
  out.reserve(queries.size());
  for (const Vec3& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& c : cloud) best = std::min(best, (c - q).squaredNorm());
    out.push_back(std::sqrt(best));
  }
  return out;
}

void write_scene(const SyntheticScene& scene,
                 const std::vector<CorrespondenceSet>& correspondences,
                 const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "sparse", ec);
  fs::create_directories(dir / "depth", ec);
  fs::create_directories(dir / "corr", ec);
  if (ec) fail(ErrorKind::kIoError, "cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::vector<io::TrackElement>> tracks;
  tracks.reserve(scene.tracks.size());
  for (const auto& track : scene.tracks) {
    std::vector<io::TrackElement> t;
    for (const auto& o : track) t.push_back({o.view_id, o.pixel});
    tracks.push_back(std::move(t));
  }
  io::write_colmap_reconstruction(dir / "sparse", scene.bundle.views,
                                  scene.bundle.colmap_points, tracks);
  for (const auto& [id, depth] : scene.bundle.depth_maps) {
    io::write_depth_map(depth, dir / "depth" / io::depth_file_name(id));
  }
  for (const auto& set : correspondences) {
    io::write_correspondences(dir / "corr" / io::correspondence_file_name(set.src_view, set.dst_view),
                              set);
  }

  json gt;
  gt["spec"] = scene_spec_to_json(scene.spec);
  json views = json::array();
  for (const auto& v : scene.bundle.views) {
    json o;
    o["view_id"] = v.view_id;
    o["fx"] = v.fx;
    o["fy"] = v.fy;
    o["cx"] = v.cx;
    o["cy"] = v.cy;
    o["width"] = v.width;
    o["height"] = v.height;
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) m.push_back(v.world_to_camera(r, c));
    }
    o["world_to_camera"] = m;
    views.push_back(o);
  }
  gt["views"] = views;
  std::ofstream out(dir / "ground_truth.json");
  out << gt.dump(2) << '\n';
  if (!out) fail(ErrorKind::kIoError, "cannot write ground_truth.json");
}

}  // namespace comap::synth
