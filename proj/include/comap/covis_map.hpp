#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "comap/camera.hpp"
#include "comap/scene.hpp"

namespace comap {

// Per-pixel count of the other views holding a correspondence for that pixel.
struct CovisMap {
  int view_id = 0;
  int width = 0;
  int height = 0;
  int n_views = 1;
  // Row-major, y * width + x.
  std::vector<std::uint16_t> counts;

  static CovisMap zeros(int view_id, int width, int height, int n_views);

  std::uint16_t at(int x, int y) const {
    return counts[static_cast<size_t>(y) * width + x];
  }
  std::uint16_t& at(int x, int y) {
    return counts[static_cast<size_t>(y) * width + x];
  }
  int max_count() const;

  friend bool operator==(const CovisMap&, const CovisMap&) = default;
};

struct SceneCovisScore {
  double score = 0.0;
  std::vector<double> per_view_means;
};

// Integer pixel holding a correspondence endpoint.
inline PixelIndex match_pixel(const Pixel& p) { return floor_pixel(p); }

// counts(x, y) = number of destination views with at least one match from
// pixel (x, y) at confidence >= min_conf.
CovisMap build_covis_map(const CameraView& view,
                         std::span<const CorrespondenceSet> matches,
                         int n_views, double min_conf = 0.0);

inline constexpr int kDefaultKernelRadius = 1;

// Opening of every level set {count >= t} with a (2r+1)^2 square, recomposed
// as the sum of the opened masks.
CovisMap refine_covis_map(const CovisMap& map, int kernel_radius);

SceneCovisScore scene_covis_score(std::span<const CovisMap> maps);

// Count at the integer pixel containing a continuous coordinate.
int covis_at(const CovisMap& map, const Pixel& pixel);

}  // namespace comap
