#pragma once

#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "comap/camera.hpp"

namespace comap {

struct Neighbor {
  size_t index = 0;
  double distance = std::numeric_limits<double>::infinity();
};

// Static 3-d tree with exact nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  // Nearest stored point; `skip` excludes one stored index (use size() for
  // none). Distance is infinite when nothing qualifies.
  Neighbor nearest(const Vec3& query, size_t skip) const;
  Neighbor nearest(const Vec3& query) const { return nearest(query, size()); }

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);
  void search(std::int32_t node, const Vec3& q, size_t skip, Neighbor& best,
              double& best_sq) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

// Hash grid supporting insertion and exact "any point strictly closer than
// radius" queries.
class RadiusGrid {
 public:
  explicit RadiusGrid(double radius);

  void insert(const Vec3& p);
  bool any_within(const Vec3& q) const;

 private:
  struct Key {
    std::int64_t x, y, z;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    size_t operator()(const Key& k) const;
  };

  Key key_of(const Vec3& p) const;

  double radius_;
  std::unordered_map<Key, std::vector<Vec3>, KeyHash> cells_;
};

// Median over points of the distance to their nearest other point; 0 for
// fewer than two points.
double median_nn_spacing(const std::vector<Vec3>& points);

}  // namespace comap
