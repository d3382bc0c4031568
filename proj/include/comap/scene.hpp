#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "comap/camera.hpp"
#include "comap/point_cloud.hpp"

namespace comap {

// Per-pixel metric depth in the camera frame, rows top-down.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  float at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const {
    return valid[static_cast<size_t>(y) * width + x] != 0;
  }
};

// Builds a map whose valid mask marks strictly positive finite entries.
DepthMap make_depth_map(int width, int height, std::vector<float> values);

struct Match {
  // Pixel coordinates in the image frame used by project(): integer pixel i
  // spans [i, i+1).
  Pixel src;
  Pixel dst;
  double conf = 1.0;
};

struct CorrespondenceSet {
  int src_view = 0;
  int dst_view = 0;
  std::vector<Match> matches;
};

struct SceneBundle {
  std::vector<CameraView> views;
  PointCloud colmap_points;
  std::map<int, DepthMap> depth_maps;
  std::vector<CorrespondenceSet> correspondences;

  const CameraView& view(int view_id) const;
  // Position of the view with this id in `views`.
  size_t view_index(int view_id) const;
  // Throws InvalidArgument if a bundle invariant is violated.
  void validate() const;
};

}  // namespace comap
