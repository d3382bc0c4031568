#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "comap/camera.hpp"

namespace comap {

enum class PointSource : std::uint8_t {
  kColmap = 0,
  kTriangulated = 1,
  kMono = 2,
};

struct Rgb {
  std::uint8_t r = 127;
  std::uint8_t g = 127;
  std::uint8_t b = 127;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct CloudPoint {
  Vec3 position = Vec3::Zero();
  Rgb color;
  PointSource source = PointSource::kColmap;
  // Reconstruction point id, -1 when the point has none.
  std::int64_t id = -1;
  // Provenance; not serialized to PLY.
  std::optional<int> origin_view;
  std::optional<PixelIndex> origin_pixel;
};

struct PointCloud {
  std::vector<CloudPoint> points;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void append(const PointCloud& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
  }
  std::vector<Vec3> positions() const;
  size_t count(PointSource source) const;
};

// Axis-aligned bounds; both corners are zero for an empty input.
struct Bounds {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
};

Bounds compute_bounds(const std::vector<Vec3>& points);

}  // namespace comap
