#include "comap/covis_map.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "comap/error.hpp"

namespace comap {

CovisMap CovisMap::zeros(int view_id, int width, int height, int n_views) {
  CovisMap m;
  m.view_id = view_id;
  m.width = width;
  m.height = height;
  m.n_views = n_views;
  m.counts.assign(static_cast<size_t>(width) * height, 0);
  return m;
}

int CovisMap::max_count() const {
  if (counts.empty()) return 0;
  return *std::max_element(counts.begin(), counts.end());
}

CovisMap build_covis_map(const CameraView& view,
                         std::span<const CorrespondenceSet> matches,
                         int n_views, double min_conf) {
  if (n_views < 1) fail(ErrorKind::kInvalidArgument, "n_views must be >= 1");
  std::set<int> dst_views;
  for (const auto& set : matches) {
    if (set.src_view != view.view_id) {
      fail(ErrorKind::kViewIdMismatch,
           "correspondence source view " + std::to_string(set.src_view) +
               " != " + std::to_string(view.view_id));
    }
    if (set.dst_view == view.view_id || !dst_views.insert(set.dst_view).second) {
      fail(ErrorKind::kViewIdMismatch,
           "destination view " + std::to_string(set.dst_view) +
               " repeated or equal to source");
    }
  }
  if (static_cast<int>(dst_views.size()) > n_views - 1) {
    fail(ErrorKind::kInconsistentN,
         "more destination views than n_views - 1");
  }

  CovisMap map = CovisMap::zeros(view.view_id, view.width, view.height, n_views);
  std::vector<std::uint8_t> hit(map.counts.size());
  for (const auto& set : matches) {
    std::fill(hit.begin(), hit.end(), 0);
    for (const auto& m : set.matches) {
      if (m.conf < min_conf) continue;
      const PixelIndex p = match_pixel(m.src);
      if (p.x < 0 || p.y < 0 || p.x >= view.width || p.y >= view.height) {
        fail(ErrorKind::kOutOfBoundsPixel, "match source outside view");
      }
      hit[static_cast<size_t>(p.y) * view.width + p.x] = 1;
    }
    for (size_t i = 0; i < hit.size(); ++i) map.counts[i] += hit[i];
  }
  return map;
}

namespace {

using Mask = std::vector<std::uint8_t>;

// Separable square min/max filter. Pixels outside the image are ignored.
Mask filter_square(const Mask& in, int w, int h, int r, bool erode) {
  const auto combine = [erode](std::uint8_t a, std::uint8_t b) {
    return erode ? std::min(a, b) : std::max(a, b);
  };
  Mask tmp(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = in[static_cast<size_t>(y) * w + x];
      for (int k = std::max(0, x - r); k <= std::min(w - 1, x + r); ++k) {
        v = combine(v, in[static_cast<size_t>(y) * w + k]);
      }
      tmp[static_cast<size_t>(y) * w + x] = v;
    }
  }
  Mask out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = tmp[static_cast<size_t>(y) * w + x];
      for (int k = std::max(0, y - r); k <= std::min(h - 1, y + r); ++k) {
        v = combine(v, tmp[static_cast<size_t>(k) * w + x]);
      }
      out[static_cast<size_t>(y) * w + x] = v;
    }
  }
  return out;
}

}  // namespace

CovisMap refine_covis_map(const CovisMap& map, int kernel_radius) {
  if (kernel_radius < 0) {
    fail(ErrorKind::kInvalidArgument, "kernel_radius must be >= 0");
  }
  if (kernel_radius == 0) return map;

  CovisMap out = CovisMap::zeros(map.view_id, map.width, map.height, map.n_views);
  const int top = map.max_count();
  Mask level(map.counts.size());
  for (int t = 1; t <= top; ++t) {
    for (size_t i = 0; i < level.size(); ++i) level[i] = map.counts[i] >= t;
    const Mask eroded =
        filter_square(level, map.width, map.height, kernel_radius, true);
    const Mask opened =
        filter_square(eroded, map.width, map.height, kernel_radius, false);
    for (size_t i = 0; i < opened.size(); ++i) out.counts[i] += opened[i];
  }
  return out;
}

SceneCovisScore scene_covis_score(std::span<const CovisMap> maps) {
  if (maps.empty()) fail(ErrorKind::kEmptyInput, "no covisibility maps");
  const int n = maps.front().n_views;
  SceneCovisScore out;
  for (const auto& m : maps) {
    if (m.n_views != n) {
      fail(ErrorKind::kInconsistentN, "maps disagree on n_views");
    }
    double mean = 0.0;
    if (n > 1 && !m.counts.empty()) {
      double sum = 0.0;
      for (auto c : m.counts) sum += c;
      mean = sum / (static_cast<double>(m.counts.size()) * (n - 1));
    }
    out.per_view_means.push_back(mean);
  }
  double total = 0.0;
  for (double v : out.per_view_means) total += v;
  out.score = total / static_cast<double>(out.per_view_means.size());
  return out;
}

int covis_at(const CovisMap& map, const Pixel& pixel) {
  if (!(pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < map.width &&
        pixel.y < map.height)) {
    fail(ErrorKind::kOutOfBounds, "pixel outside covisibility map");
  }
  const PixelIndex p = floor_pixel(pixel);
  return map.at(p.x, p.y);
}

}  // namespace comap
