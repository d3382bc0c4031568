#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace comap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Continuous image coordinate. Integer pixel (i, j) covers [i, i+1) x [j, j+1),
// so its center sits at (i + 0.5, j + 0.5).
struct Pixel {
  double x = 0.0;
  double y = 0.0;
};

struct PixelIndex {
  int x = 0;
  int y = 0;

  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

inline PixelIndex floor_pixel(const Pixel& p) {
  return {static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y))};
}

inline Pixel pixel_center(const PixelIndex& p) {
  return {p.x + 0.5, p.y + 0.5};
}

struct CameraView {
  int view_id = 0;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  // World-to-camera rigid transform.
  Mat4 world_to_camera = Mat4::Identity();
  int width = 0;
  int height = 0;
  // Image file name as carried by the reconstruction (may be empty).
  std::string name;

  Mat3 K() const;
  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Vec3 center() const { return -rotation().transpose() * translation(); }

  Vec3 to_camera(const Vec3& world) const {
    return rotation() * world + translation();
  }
  Vec3 to_world(const Vec3& cam) const {
    return rotation().transpose() * (cam - translation());
  }

  bool contains(const Pixel& p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x < width && p.y < height;
  }

  // Throws InvalidArgument when intrinsics or rotation violate the camera
  // invariants.
  void validate() const;
};

// Builds a view from a world-to-camera rotation and translation.
CameraView make_view(int view_id, double fx, double fy, double cx, double cy,
                     const Mat3& rotation, const Vec3& translation, int width,
                     int height);

// Camera at `eye` looking at `target`. The image y axis (pointing down the
// image) follows `down` projected off the viewing direction, so down = +y
// reproduces the identity orientation.
CameraView look_at_view(int view_id, double fx, double fy, double cx,
                        double cy, const Vec3& eye, const Vec3& target,
                        const Vec3& down, int width, int height);

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

Ray pixel_ray(const CameraView& view, const Pixel& pixel);

struct Projection {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;

  Pixel pixel() const { return {x, y}; }
};

// Projection without the image-bounds test; absent only behind the camera.
std::optional<Projection> project_unbounded(const CameraView& view,
                                            const Vec3& p);

// Pixel and depth when p is in front of the camera and lands inside
// [0, W) x [0, H).
std::optional<Projection> project(const CameraView& view, const Vec3& p);

Vec3 unproject_to_camera(const CameraView& view, const Pixel& pixel,
                         double depth);
Vec3 unproject(const CameraView& view, const Pixel& pixel, double depth);

double reprojection_error(const CameraView& view, const Vec3& p,
                          const Pixel& pixel);

struct Observation {
  const CameraView* view = nullptr;
  Pixel pixel;
};

struct Triangulation {
  Vec3 point;
  std::vector<double> errors;
};

inline constexpr double kDefaultGatePx = 2.0;
inline constexpr double kParallelRayTolerance = 1e-10;

// Joint multi-view DLT followed by one Gauss-Newton step on reprojection
// error. Absent when any view has the point behind it or any error exceeds
// the gate.
std::optional<Triangulation> triangulate(std::span<const Observation> obs,
                                         double gate_px = kDefaultGatePx);

}  // namespace comap
