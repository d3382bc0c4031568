#pragma once

#include <span>
#include <utility>
#include <vector>

#include "comap/camera.hpp"
#include "comap/covis_map.hpp"
#include "comap/point_cloud.hpp"
#include "comap/scene.hpp"

namespace comap {

// Dense correspondences triangulated jointly per source pixel. Views are
// visited by ascending id; pixels consumed by an accepted triangulation are
// not reused by later ones.
PointCloud triangulate_corrs(const SceneBundle& bundle,
                             double gate_px = kDefaultGatePx);

// P_C plus every triangulated point whose nearest P_C neighbor is farther
// than epsilon (strict).
PointCloud merge_clouds(const PointCloud& base, const PointCloud& triangulated,
                        double epsilon);

// Default epsilon: half the median nearest-neighbor spacing of `base`.
double default_epsilon(const PointCloud& base);

struct CloudSplit {
  PointCloud low;
  PointCloud high;
};

// A point is low-uncertainty when some view sees it in-frustum on a pixel
// with count >= 1. Maps are aligned one-to-one with views.
CloudSplit split_by_covis(const PointCloud& cloud,
                          std::span<const CameraView> views,
                          std::span<const CovisMap> maps);

inline constexpr int kDefaultStride = 4;

// Unprojects valid depth pixels on a stride grid into the camera frame of
// `view`, split by the pixel's covisibility count (>= 1 low, 0 high).
CloudSplit unproject_depth(const CameraView& view, const DepthMap& depth,
                           const CovisMap& map, int stride = kDefaultStride);

struct FitStats {
  size_t pair_count = 0;
  double rms_residual = 0.0;
  double inlier_fraction = 0.0;
};

// Per-axis scale and offset taking monocular-depth points onto multiview
// geometry, in the camera frame of `frame_view`.
struct ScaleTransform {
  Vec3 scale = Vec3::Ones();
  Vec3 offset = Vec3::Zero();
  int frame_view = 0;
  FitStats stats;

  Vec3 apply(const Vec3& cam) const { return scale.cwiseProduct(cam) + offset; }
};

inline constexpr size_t kMinScalePairs = 10;

struct ScalePair {
  Vec3 depth_point;   // camera frame
  Vec3 target_point;  // camera frame
};

// Pairs each P_u^low point (projected into `view`) with the depth point
// unprojected at the same integer pixel. Points lying behind other P_u^low
// points in this view (nearest per pixel, 5% slack over the 3x3
// neighborhood) are not paired.
std::vector<ScalePair> pair_for_scale(const PointCloud& depth_low,
                                      const PointCloud& multiview_low,
                                      const CameraView& view);

// Three independent 1-D least squares, one 3-sigma rejection round, refit.
// An axis whose depth coordinates have no spread is fitted without offset.
ScaleTransform fit_scale_pairs(std::span<const ScalePair> pairs, int frame_view,
                               bool with_offset = true);

ScaleTransform fit_scale(const PointCloud& depth_low,
                         const PointCloud& multiview_low,
                         const CameraView& view, bool with_offset = true);

// Camera-frame depth points -> scaled world points tagged mono.
PointCloud apply_scale(const ScaleTransform& t, const PointCloud& depth_high,
                       const CameraView& view);

// Low cloud, then mono clouds in order; a mono point closer than
// dedup_radius to any already kept point is dropped.
PointCloud assemble_final(const PointCloud& multiview_low,
                          std::span<const PointCloud> mono_per_view,
                          double dedup_radius);

}  // namespace comap
