#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "comap/camera.hpp"
#include "comap/covis_map.hpp"
#include "comap/point_cloud.hpp"
#include "comap/scene.hpp"

namespace comap::synth {

enum class PrimitiveKind { kPlane, kSphere, kBox };

// Plane: point + normal (infinite, two-sided). Sphere: center + radius.
// Box: axis-aligned min/max corners.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kPlane;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::UnitZ();
  double radius = 1.0;
  Rgb color;

  static Primitive plane(const Vec3& point, const Vec3& normal, Rgb color = {});
  static Primitive sphere(const Vec3& center, double radius, Rgb color = {});
  static Primitive box(const Vec3& min, const Vec3& max, Rgb color = {});

  // Smallest t > t_min with origin + t * dir on the surface.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir,
                                  double t_min) const;
  // Euclidean distance from p to the surface.
  double distance(const Vec3& p) const;
};

enum class RigType { kForwardFacing, kOutward360 };

struct RigSpec {
  RigType type = RigType::kForwardFacing;
  int views = 3;
  // Forward-facing: cameras along +x, spaced by baseline, looking down +z
  // unless a target is given.
  double baseline = 0.3;
  // Ring rig: cameras on a horizontal circle around the target.
  double radius = 4.0;
  double height = 0.0;
  std::optional<Vec3> target;
};

struct SceneSpec {
  std::vector<Primitive> surfaces;
  RigSpec rig;
  int width = 80;
  int height = 60;
  double fov_deg = 60.0;  // horizontal
  std::uint64_t seed = 0;
  double noise_px = 0.0;
  double dropout = 0.0;
  // Multiplier applied to written depth maps, mimicking scale-ambiguous
  // monocular depth.
  double depth_scale = 1.0;
  // Pixel stride for the sparse reconstruction points.
  int sparse_stride = 8;
};

SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec read_scene_spec(const std::filesystem::path& path);

// Analytic ray casting result for one view.
struct ViewTruth {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> hit;      // per pixel
  std::vector<Vec3> point;            // world point per hit pixel
  std::vector<int> surface;           // primitive index, -1 on miss
  DepthMap depth;                     // exact camera-frame depth

  size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

struct TrackObservation {
  int view_id = 0;
  Pixel pixel;
};

struct SyntheticScene {
  SceneSpec spec;
  // Views, sparse points and depth maps (depth_scale applied).
  SceneBundle bundle;
  std::vector<ViewTruth> truth;
  // Observations of each sparse point, parallel to bundle.colmap_points.
  std::vector<std::vector<TrackObservation>> tracks;
};

std::vector<CameraView> make_rig(const SceneSpec& spec);

// Nearest surface hit along a ray; t is the ray parameter.
struct Hit {
  double t = 0.0;
  int surface = -1;
};
std::optional<Hit> cast_ray(const std::vector<Primitive>& surfaces,
                            const Vec3& origin, const Vec3& dir);

inline constexpr double kOcclusionTolerance = 1e-6;

// True when p lies in view's frustum and nothing is hit before it.
bool visible_from(const std::vector<Primitive>& surfaces, const CameraView& view,
                  const Vec3& p);

SyntheticScene generate_scene(const SceneSpec& spec, int threads = 1);

// Ground-truth matches from each hit pixel center into every view that sees
// the same surface point, with Gaussian noise on the destination and
// Bernoulli dropout. Sets are ordered by (src, dst).
std::vector<CorrespondenceSet> oracle_correspondences(const SyntheticScene& scene,
                                                      double noise_px,
                                                      double dropout,
                                                      std::uint64_t seed,
                                                      int threads = 1);

// Covisibility maps by direct per-pixel visibility counting.
std::vector<CovisMap> oracle_covis_map(const SyntheticScene& scene);

// Exact O(|queries| * |cloud|) nearest distances.
std::vector<double> oracle_nearest_neighbor(const std::vector<Vec3>& cloud,
                                            const std::vector<Vec3>& queries);

// Distance from p to the nearest surface of the scene.
double distance_to_surfaces(const std::vector<Primitive>& surfaces, const Vec3& p);

// COLMAP text + depth/depth_<id>.pfm + corr/corr_<i>_<j>.jsonl +
// ground_truth.json.
void write_scene(const SyntheticScene& scene,
                 const std::vector<CorrespondenceSet>& correspondences,
                 const std::filesystem::path& dir);

}  // namespace comap::synth
