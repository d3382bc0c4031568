#include "comap/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "comap/error.hpp"

namespace comap {

namespace {
constexpr std::uint32_t kLeafSize = 16;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorKind::kInvalidArgument, "too many points for KdTree");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()), 0);
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, 0, 0.0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi(axis) == lo(axis)) return id;  // all coincident

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a](axis) < points_[b](axis);
                   });
  const double split = points_[order_[mid]](axis);
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t node_id, const Vec3& q, size_t skip,
                    Neighbor& best, double& best_sq) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      if (idx == skip) continue;
      const double d = (points_[idx] - q).squaredNorm();
      if (d < best_sq || (d == best_sq && idx < best.index)) {
        best_sq = d;
        best.index = idx;
      }
    }
    return;
  }
  // Left subtree holds coordinates <= split, right holds >= split.
  const double diff = q(node.axis) - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, skip, best, best_sq);
  if (diff * diff <= best_sq) search(far, q, skip, best, best_sq);
}

Neighbor KdTree::nearest(const Vec3& query, size_t skip) const {
  Neighbor best;
  if (points_.empty()) return best;
  double best_sq = std::numeric_limits<double>::infinity();
  best.index = points_.size();
  search(0, query, skip, best, best_sq);
  if (best.index < points_.size()) {
    best.distance = (points_[best.index] - query).norm();
  }
  return best;
}

RadiusGrid::RadiusGrid(double radius) : radius_(radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    fail(ErrorKind::kInvalidArgument, "RadiusGrid radius must be positive");
  }
}

size_t RadiusGrid::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
  h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
  return static_cast<size_t>(h);
}

RadiusGrid::Key RadiusGrid::key_of(const Vec3& p) const {
  // Cells slightly wider than the radius keep every neighbor strictly closer
  // than the radius within the 3x3x3 block despite division rounding.
  const double cell = radius_ * (1.0 + 1e-7);
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)),
          static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

void RadiusGrid::insert(const Vec3& p) { cells_[key_of(p)].push_back(p); }

bool RadiusGrid::any_within(const Vec3& q) const {
  const Key k = key_of(q);
  for (std::int64_t dx = -1; dx <= 1; ++dx) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        const auto it = cells_.find({k.x + dx, k.y + dy, k.z + dz});
        if (it == cells_.end()) continue;
        for (const auto& p : it->second) {
          if ((p - q).norm() < radius_) return true;
        }
      }
    }
  }
  return false;
}

double median_nn_spacing(const std::vector<Vec3>& points) {
  if (points.size() < 2) return 0.0;
  const KdTree tree(points);
  std::vector<double> d(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    d[i] = tree.nearest(points[i], i).distance;
  }
  const size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + mid, d.end());
  if (d.size() % 2 == 1) return d[mid];
  const double upper = d[mid];
  const double lower = *std::max_element(d.begin(), d.begin() + mid);
  return 0.5 * (lower + upper);
}

}  // namespace comap
