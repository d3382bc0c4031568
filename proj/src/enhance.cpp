#include "comap/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>

#include "comap/error.hpp"
#include "comap/log.hpp"
#include "comap/spatial_index.hpp"

namespace comap {

namespace {

// Relative depth slack when testing a projected point against its 3x3
// neighborhood in the z-buffer.
constexpr double kOcclusionSlack = 0.05;
// Squared spread below which an axis is fitted without offset.
constexpr double kMinRelativeSpread = 1e-12;

std::int64_t pixel_key(const PixelIndex& p, int width) {
  return static_cast<std::int64_t>(p.y) * width + p.x;
}

bool in_image(const PixelIndex& p, const CameraView& v) {
  return p.x >= 0 && p.y >= 0 && p.x < v.width && p.y < v.height;
}

}  // namespace

PointCloud triangulate_corrs(const SceneBundle& bundle, double gate_px) {
  if (bundle.views.size() < 2 || bundle.correspondences.empty()) {
    fail(ErrorKind::kNoCorrespondences,
         "triangulation needs >= 2 views and correspondence sets");
  }
  if (!(gate_px > 0.0)) fail(ErrorKind::kInvalidArgument, "gate_px must be > 0");

  struct Target {
    size_t view_index;
    Pixel pixel;
  };
  struct Source {
    Pixel pixel;
    std::vector<Target> targets;
  };
  // Per source view: source pixel key -> observations, ordered by key.
  std::vector<std::map<std::int64_t, Source>> sources(bundle.views.size());
  for (const auto& set : bundle.correspondences) {
    const size_t si = bundle.view_index(set.src_view);
    const size_t di = bundle.view_index(set.dst_view);
    const CameraView& sv = bundle.views[si];
    for (const auto& m : set.matches) {
      const PixelIndex sp = floor_pixel(m.src);
      if (!in_image(sp, sv)) {
        fail(ErrorKind::kOutOfBoundsPixel, "match source outside view");
      }
      auto& src = sources[si][pixel_key(sp, sv.width)];
      src.pixel = m.src;
      // One observation per destination view; repeated matches keep the first.
      const bool seen = std::any_of(src.targets.begin(), src.targets.end(),
                                    [di](const Target& t) { return t.view_index == di; });
      if (!seen) src.targets.push_back({di, m.dst});
    }
  }

  std::vector<std::vector<std::uint8_t>> consumed(bundle.views.size());
  for (size_t i = 0; i < bundle.views.size(); ++i) {
    consumed[i].assign(
        static_cast<size_t>(bundle.views[i].width) * bundle.views[i].height, 0);
  }

  // Visit source views by ascending id.
  std::vector<size_t> order(bundle.views.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return bundle.views[a].view_id < bundle.views[b].view_id;
  });

  PointCloud out;
  size_t rejected = 0;
  size_t degenerate = 0;
  std::vector<Observation> obs;
  std::vector<std::pair<size_t, PixelIndex>> marks;
  for (size_t si : order) {
    const CameraView& sv = bundle.views[si];
    for (auto& [key, src] : sources[si]) {
      if (consumed[si][static_cast<size_t>(key)]) continue;
      std::sort(src.targets.begin(), src.targets.end(),
                [&](const Target& a, const Target& b) {
                  return bundle.views[a.view_index].view_id <
                         bundle.views[b.view_index].view_id;
                });
      obs.clear();
      marks.clear();
      obs.push_back({&sv, src.pixel});
      marks.emplace_back(si, floor_pixel(src.pixel));
      for (const auto& t : src.targets) {
        const CameraView& dv = bundle.views[t.view_index];
        const PixelIndex dp = floor_pixel(t.pixel);
        if (!in_image(dp, dv)) continue;
        if (consumed[t.view_index][static_cast<size_t>(pixel_key(dp, dv.width))]) {
          continue;
        }
        obs.push_back({&dv, t.pixel});
        marks.emplace_back(t.view_index, dp);
      }
      if (obs.size() < 2) continue;

      std::optional<Triangulation> tri;
      try {
        tri = triangulate(obs, gate_px);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerateGeometry) throw;
        ++degenerate;
        continue;
      }
      if (!tri) {
        ++rejected;
        continue;
      }
      for (const auto& [vi, p] : marks) {
        consumed[vi][static_cast<size_t>(pixel_key(p, bundle.views[vi].width))] = 1;
      }
      CloudPoint cp;
      cp.position = tri->point;
      cp.source = PointSource::kTriangulated;
      cp.origin_view = sv.view_id;
      cp.origin_pixel = floor_pixel(src.pixel);
      out.points.push_back(cp);
    }
  }
  log::info("triangulate_corrs")
      .kv("accepted", out.size())
      .kv("rejected", rejected)
      .kv("degenerate", degenerate);
  return out;
}

double default_epsilon(const PointCloud& base) {
  return 0.5 * median_nn_spacing(base.positions());
}

PointCloud merge_clouds(const PointCloud& base, const PointCloud& triangulated,
                        double epsilon) {
  if (base.empty()) fail(ErrorKind::kEmptyBase, "P_C is empty");
  if (!(epsilon >= 0.0)) fail(ErrorKind::kInvalidArgument, "epsilon must be >= 0");
  const KdTree tree(base.positions());
  PointCloud out = base;
  for (const auto& p : triangulated.points) {
    if (tree.nearest(p.position).distance > epsilon) out.points.push_back(p);
  }
  return out;
}

CloudSplit split_by_covis(const PointCloud& cloud,
                          std::span<const CameraView> views,
                          std::span<const CovisMap> maps) {
  if (views.size() != maps.size()) {
    fail(ErrorKind::kMapViewMismatch, "maps and views differ in count");
  }
  for (size_t k = 0; k < views.size(); ++k) {
    if (maps[k].view_id != views[k].view_id ||
        maps[k].width != views[k].width || maps[k].height != views[k].height) {
      fail(ErrorKind::kMapViewMismatch,
           "map " + std::to_string(k) + " does not belong to its view");
    }
  }
  CloudSplit out;
  for (const auto& p : cloud.points) {
    bool low = false;
    for (size_t k = 0; k < views.size() && !low; ++k) {
      const auto proj = project(views[k], p.position);
      if (proj && covis_at(maps[k], proj->pixel()) >= 1) low = true;
    }
    (low ? out.low : out.high).points.push_back(p);
  }
  return out;
}

CloudSplit unproject_depth(const CameraView& view, const DepthMap& depth,
                           const CovisMap& map, int stride) {
  if (stride < 1) fail(ErrorKind::kInvalidArgument, "stride must be >= 1");
  if (depth.width != view.width || depth.height != view.height ||
      map.width != view.width || map.height != view.height) {
    fail(ErrorKind::kDimensionMismatch,
         "depth/map dimensions differ from view " + std::to_string(view.view_id));
  }
  if (map.view_id != view.view_id) {
    fail(ErrorKind::kViewIdMismatch, "covisibility map belongs to another view");
  }
  CloudSplit out;
  for (int y = 0; y < view.height; y += stride) {
    for (int x = 0; x < view.width; x += stride) {
      if (!depth.is_valid(x, y)) continue;
      CloudPoint p;
      p.position = unproject_to_camera(view, pixel_center({x, y}), depth.at(x, y));
      p.source = PointSource::kMono;
      p.origin_view = view.view_id;
      p.origin_pixel = PixelIndex{x, y};
      (map.at(x, y) >= 1 ? out.low : out.high).points.push_back(p);
    }
  }
  return out;
}

std::vector<ScalePair> pair_for_scale(const PointCloud& depth_low,
                                      const PointCloud& multiview_low,
                                      const CameraView& view) {
  std::unordered_map<std::int64_t, size_t> by_pixel;
  for (size_t i = 0; i < depth_low.size(); ++i) {
    const auto& p = depth_low.points[i];
    if (!p.origin_pixel) continue;
    if (p.origin_view && *p.origin_view != view.view_id) {
      fail(ErrorKind::kFrameMismatch, "depth point from another view");
    }
    by_pixel.emplace(pixel_key(*p.origin_pixel, view.width), i);
  }

  struct Projected {
    PixelIndex pixel;
    double depth;
    size_t index;
  };
  std::vector<Projected> projected;
  std::unordered_map<std::int64_t, double> zbuffer;
  for (size_t i = 0; i < multiview_low.size(); ++i) {
    const auto proj = project(view, multiview_low.points[i].position);
    if (!proj) continue;
    const PixelIndex px = floor_pixel(proj->pixel());
    projected.push_back({px, proj->depth, i});
    auto [it, inserted] = zbuffer.emplace(pixel_key(px, view.width), proj->depth);
    if (!inserted) it->second = std::min(it->second, proj->depth);
  }

  std::vector<ScalePair> pairs;
  for (const auto& p : projected) {
    const auto it = by_pixel.find(pixel_key(p.pixel, view.width));
    if (it == by_pixel.end()) continue;
    // Points hidden behind nearer P_u^low geometry in this view would pair
    // with the depth of the occluder.
    if (p.depth > zbuffer.at(pixel_key(p.pixel, view.width))) continue;
    double nearest = p.depth;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const PixelIndex q{p.pixel.x + dx, p.pixel.y + dy};
        if (!in_image(q, view)) continue;
        const auto z = zbuffer.find(pixel_key(q, view.width));
        if (z != zbuffer.end()) nearest = std::min(nearest, z->second);
      }
    }
    if (p.depth > nearest * (1.0 + kOcclusionSlack)) continue;
    pairs.push_back({depth_low.points[it->second].position,
                     view.to_camera(multiview_low.points[p.index].position)});
  }
  return pairs;
}

namespace {

struct AxisFit {
  Vec3 scale;
  Vec3 offset;
};

AxisFit fit_axes(std::span<const ScalePair> pairs, const std::vector<size_t>& use,
                 bool with_offset) {
  AxisFit fit{Vec3::Ones(), Vec3::Zero()};
  const double n = static_cast<double>(use.size());
  for (int a = 0; a < 3; ++a) {
    double mean_d = 0.0, mean_u = 0.0;
    if (with_offset) {
      for (size_t i : use) {
        mean_d += pairs[i].depth_point(a);
        mean_u += pairs[i].target_point(a);
      }
      mean_d /= n;
      mean_u /= n;
    }
    double sdd = 0.0, sdu = 0.0, raw = 0.0;
    for (size_t i : use) {
      const double d = pairs[i].depth_point(a) - mean_d;
      const double u = pairs[i].target_point(a) - mean_u;
      sdd += d * d;
      sdu += d * u;
      raw += pairs[i].depth_point(a) * pairs[i].depth_point(a);
    }
    // An axis without spread (a fronto-parallel plane along z) cannot
    // separate scale from offset; fit the scale through the origin.
    if (with_offset && !(sdd > kMinRelativeSpread * raw)) {
      sdd = raw;
      sdu = 0.0;
      for (size_t i : use) sdu += pairs[i].depth_point(a) * pairs[i].target_point(a);
      mean_d = mean_u = 0.0;
    }
    if (!(sdd > 0.0)) {
      fail(ErrorKind::kInsufficientPairs,
           "depth points are all zero along axis " + std::to_string(a));
    }
    fit.scale(a) = sdu / sdd;
    fit.offset(a) = mean_u - fit.scale(a) * mean_d;
  }
  return fit;
}

std::vector<double> residuals(std::span<const ScalePair> pairs, const AxisFit& f) {
  std::vector<double> r(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    r[i] = (f.scale.cwiseProduct(pairs[i].depth_point) + f.offset -
            pairs[i].target_point)
               .norm();
  }
  return r;
}

}  // namespace

ScaleTransform fit_scale_pairs(std::span<const ScalePair> pairs, int frame_view,
                               bool with_offset) {
  if (pairs.size() < kMinScalePairs) {
    fail(ErrorKind::kInsufficientPairs,
         std::to_string(pairs.size()) + " pairs, need " +
             std::to_string(kMinScalePairs));
  }
  std::vector<size_t> all(pairs.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  AxisFit fit = fit_axes(pairs, all, with_offset);

  const auto r = residuals(pairs, fit);
  double ss = 0.0;
  for (double v : r) ss += v * v;
  const double sigma = std::sqrt(ss / static_cast<double>(r.size()));
  std::vector<size_t> inliers;
  for (size_t i = 0; i < r.size(); ++i) {
    if (r[i] <= 3.0 * sigma) inliers.push_back(i);
  }
  if (inliers.size() < kMinScalePairs) {
    fail(ErrorKind::kInsufficientPairs, "too few pairs survive 3-sigma rejection");
  }
  if (inliers.size() < all.size()) fit = fit_axes(pairs, inliers, with_offset);

  if (!(fit.scale.array() > 0.0).all()) {
    fail(ErrorKind::kNonPositiveScale,
         "fitted scale is not positive for view " + std::to_string(frame_view));
  }

  const auto final_r = residuals(pairs, fit);
  double inlier_ss = 0.0;
  for (size_t i : inliers) inlier_ss += final_r[i] * final_r[i];

  ScaleTransform t;
  t.scale = fit.scale;
  t.offset = fit.offset;
  t.frame_view = frame_view;
  t.stats.pair_count = pairs.size();
  t.stats.rms_residual = std::sqrt(inlier_ss / static_cast<double>(inliers.size()));
  t.stats.inlier_fraction =
      static_cast<double>(inliers.size()) / static_cast<double>(pairs.size());
  return t;
}

ScaleTransform fit_scale(const PointCloud& depth_low,
                         const PointCloud& multiview_low,
                         const CameraView& view, bool with_offset) {
  const auto pairs = pair_for_scale(depth_low, multiview_low, view);
  return fit_scale_pairs(pairs, view.view_id, with_offset);
}

PointCloud apply_scale(const ScaleTransform& t, const PointCloud& depth_high,
                       const CameraView& view) {
  if (t.frame_view != view.view_id) {
    fail(ErrorKind::kFrameMismatch,
         "transform fitted in view " + std::to_string(t.frame_view) +
             ", applied in view " + std::to_string(view.view_id));
  }
  PointCloud out;
  out.points.reserve(depth_high.size());
  for (const auto& p : depth_high.points) {
    if (p.origin_view && *p.origin_view != view.view_id) {
      fail(ErrorKind::kFrameMismatch, "depth point from another view");
    }
    CloudPoint q = p;
    q.position = view.to_world(t.apply(p.position));
    q.source = PointSource::kMono;
    out.points.push_back(q);
  }
  return out;
}

PointCloud assemble_final(const PointCloud& multiview_low,
                          std::span<const PointCloud> mono_per_view,
                          double dedup_radius) {
  if (!(dedup_radius >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "dedup_radius must be >= 0");
  }
  PointCloud out = multiview_low;
  if (dedup_radius == 0.0) {
    for (const auto& c : mono_per_view) out.append(c);
    return out;
  }
  RadiusGrid grid(dedup_radius);
  for (const auto& p : out.points) grid.insert(p.position);
  for (const auto& c : mono_per_view) {
    for (const auto& p : c.points) {
      if (grid.any_within(p.position)) continue;
      grid.insert(p.position);
      out.points.push_back(p);
    }
  }
  return out;
}

}  // namespace comap
