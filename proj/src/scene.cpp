#include "comap/scene.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "comap/error.hpp"

namespace comap {

std::vector<Vec3> PointCloud::positions() const {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position);
  return out;
}

size_t PointCloud::count(PointSource source) const {
  size_t n = 0;
  for (const auto& p : points) n += p.source == source ? 1 : 0;
  return n;
}

Bounds compute_bounds(const std::vector<Vec3>& points) {
  Bounds b;
  if (points.empty()) return b;
  b.min = Vec3::Constant(std::numeric_limits<double>::infinity());
  b.max = -b.min;
  for (const auto& p : points) {
    b.min = b.min.cwiseMin(p);
    b.max = b.max.cwiseMax(p);
  }
  return b;
}

DepthMap make_depth_map(int width, int height, std::vector<float> values) {
  if (width < 0 || height < 0 ||
      values.size() != static_cast<size_t>(width) * height) {
    fail(ErrorKind::kDimensionMismatch, "depth values do not match dimensions");
  }
  DepthMap d;
  d.width = width;
  d.height = height;
  d.valid.resize(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    d.valid[i] = std::isfinite(values[i]) && values[i] > 0.0f ? 1 : 0;
  }
  d.values = std::move(values);
  return d;
}

const CameraView& SceneBundle::view(int view_id) const {
  return views[view_index(view_id)];
}

size_t SceneBundle::view_index(int view_id) const {
  for (size_t i = 0; i < views.size(); ++i) {
    if (views[i].view_id == view_id) return i;
  }
  fail(ErrorKind::kInvalidArgument,
       "unknown view id " + std::to_string(view_id));
}

void SceneBundle::validate() const {
  std::set<int> ids;
  for (const auto& v : views) {
    v.validate();
    if (!ids.insert(v.view_id).second) {
      fail(ErrorKind::kInvalidArgument,
           "duplicate view id " + std::to_string(v.view_id));
    }
  }
  for (const auto& c : correspondences) {
    if (c.src_view == c.dst_view || !ids.count(c.src_view) ||
        !ids.count(c.dst_view)) {
      fail(ErrorKind::kInvalidArgument,
           "correspondence set " + std::to_string(c.src_view) + "->" +
               std::to_string(c.dst_view) + " references invalid views");
    }
  }
  for (const auto& [id, depth] : depth_maps) {
    if (!ids.count(id)) {
      fail(ErrorKind::kInvalidArgument,
           "depth map for unknown view " + std::to_string(id));
    }
    const auto& v = view(id);
    if (depth.width != v.width || depth.height != v.height) {
      fail(ErrorKind::kDimensionMismatch,
           "depth map dimensions differ from view " + std::to_string(id));
    }
  }
}

}  // namespace comap
