#include "comap/camera.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "comap/error.hpp"

namespace comap {

Mat3 CameraView::K() const {
  Mat3 k = Mat3::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

void CameraView::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    fail(ErrorKind::kInvalidArgument,
         "view " + std::to_string(view_id) + ": focal lengths must be positive");
  }
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    fail(ErrorKind::kInvalidArgument,
         "view " + std::to_string(view_id) +
             ": principal point outside the image");
  }
  const Mat3 r = rotation();
  if (!(r * r.transpose()).isApprox(Mat3::Identity(), 1e-8) ||
      std::abs(r.determinant() - 1.0) > 1e-8) {
    fail(ErrorKind::kInvalidArgument,
         "view " + std::to_string(view_id) + ": rotation is not proper");
  }
  const Eigen::RowVector4d last_row = world_to_camera.row(3);
  if (last_row != Eigen::RowVector4d(0, 0, 0, 1)) {
    fail(ErrorKind::kInvalidArgument,
         "view " + std::to_string(view_id) + ": transform is not rigid");
  }
}

CameraView make_view(int view_id, double fx, double fy, double cx, double cy,
                     const Mat3& rotation, const Vec3& translation, int width,
                     int height) {
  CameraView v;
  v.view_id = view_id;
  v.fx = fx;
  v.fy = fy;
  v.cx = cx;
  v.cy = cy;
  v.world_to_camera.setIdentity();
  v.world_to_camera.topLeftCorner<3, 3>() = rotation;
  v.world_to_camera.topRightCorner<3, 1>() = translation;
  v.width = width;
  v.height = height;
  return v;
}

CameraView look_at_view(int view_id, double fx, double fy, double cx,
                        double cy, const Vec3& eye, const Vec3& target,
                        const Vec3& down, int width, int height) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = down.cross(z);
  if (x.norm() < 1e-12) {
    fail(ErrorKind::kInvalidArgument, "look_at: down vector parallel to view");
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 cam_to_world;
  cam_to_world.col(0) = x;
  cam_to_world.col(1) = y;
  cam_to_world.col(2) = z;
  const Mat3 r = cam_to_world.transpose();
  return make_view(view_id, fx, fy, cx, cy, r, -r * eye, width, height);
}

Ray pixel_ray(const CameraView& view, const Pixel& pixel) {
  const Vec3 cam((pixel.x - view.cx) / view.fx, (pixel.y - view.cy) / view.fy,
                 1.0);
  return {view.center(), (view.rotation().transpose() * cam).normalized()};
}

std::optional<Projection> project_unbounded(const CameraView& view,
                                            const Vec3& p) {
  const Vec3 c = view.to_camera(p);
  if (!(c.z() > 0.0)) return std::nullopt;
  return Projection{view.fx * c.x() / c.z() + view.cx,
                    view.fy * c.y() / c.z() + view.cy, c.z()};
}

std::optional<Projection> project(const CameraView& view, const Vec3& p) {
  auto proj = project_unbounded(view, p);
  if (!proj || !view.contains(proj->pixel())) return std::nullopt;
  return proj;
}

Vec3 unproject_to_camera(const CameraView& view, const Pixel& pixel,
                         double depth) {
  if (!(depth > 0.0)) {
    fail(ErrorKind::kNonPositiveDepth,
         "depth must be positive, got " + std::to_string(depth));
  }
  return {(pixel.x - view.cx) / view.fx * depth,
          (pixel.y - view.cy) / view.fy * depth, depth};
}

Vec3 unproject(const CameraView& view, const Pixel& pixel, double depth) {
  return view.to_world(unproject_to_camera(view, pixel, depth));
}

double reprojection_error(const CameraView& view, const Vec3& p,
                          const Pixel& pixel) {
  const auto proj = project_unbounded(view, p);
  if (!proj) {
    fail(ErrorKind::kBehindCamera,
         "point is behind view " + std::to_string(view.view_id));
  }
  return std::hypot(proj->x - pixel.x, proj->y - pixel.y);
}

namespace {

bool rays_degenerate(std::span<const Observation> obs) {
  std::vector<Ray> rays;
  rays.reserve(obs.size());
  for (const auto& o : obs) rays.push_back(pixel_ray(*o.view, o.pixel));

  double max_angle = 0.0;
  double max_baseline = 0.0;
  for (size_t a = 0; a < rays.size(); ++a) {
    for (size_t b = a + 1; b < rays.size(); ++b) {
      const double angle =
          std::atan2(rays[a].direction.cross(rays[b].direction).norm(),
                     rays[a].direction.dot(rays[b].direction));
      max_angle = std::max(max_angle, angle);
      max_baseline =
          std::max(max_baseline, (rays[a].origin - rays[b].origin).norm());
    }
  }
  return max_angle < kParallelRayTolerance || max_baseline < 1e-12;
}

// Homogeneous DLT on normalized image coordinates, solved in a frame centered
// on the camera centers and scaled by their spread so the result does not
// depend on the world frame.
Vec3 dlt(std::span<const Observation> obs) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& o : obs) centroid += o.view->center();
  centroid /= static_cast<double>(obs.size());
  double spread = 0.0;
  for (const auto& o : obs) spread += (o.view->center() - centroid).norm();
  spread /= static_cast<double>(obs.size());
  if (!(spread > 0.0)) spread = 1.0;
  Mat4 frame = Mat4::Identity();
  frame.topLeftCorner<3, 3>() *= spread;
  frame.topRightCorner<3, 1>() = centroid;

  Eigen::MatrixXd a(2 * obs.size(), 4);
  for (size_t k = 0; k < obs.size(); ++k) {
    const CameraView& v = *obs[k].view;
    const double u = (obs[k].pixel.x - v.cx) / v.fx;
    const double w = (obs[k].pixel.y - v.cy) / v.fy;
    const Eigen::Matrix<double, 3, 4> p = v.world_to_camera.topRows<3>() * frame;
    a.row(2 * k) = u * p.row(2) - p.row(0);
    a.row(2 * k + 1) = w * p.row(2) - p.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d x = svd.matrixV().col(3);
  return spread * x.head<3>() / x(3) + centroid;
}

// One Gauss-Newton step on the summed squared pixel residuals.
std::optional<Vec3> gauss_newton_step(std::span<const Observation> obs,
                                      const Vec3& x) {
  Mat3 jtj = Mat3::Zero();
  Vec3 jtr = Vec3::Zero();
  for (const auto& o : obs) {
    const CameraView& v = *o.view;
    const Vec3 c = v.to_camera(x);
    if (!(c.z() > 0.0)) return std::nullopt;
    const double iz = 1.0 / c.z();
    Eigen::Matrix<double, 2, 3> d_cam;
    d_cam << v.fx * iz, 0.0, -v.fx * c.x() * iz * iz,  //
        0.0, v.fy * iz, -v.fy * c.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> j = d_cam * v.rotation();
    const Vec2 r(v.fx * c.x() * iz + v.cx - o.pixel.x,
                 v.fy * c.y() * iz + v.cy - o.pixel.y);
    jtj += j.transpose() * j;
    jtr += j.transpose() * r;
  }
  const Eigen::LDLT<Mat3> ldlt(jtj);
  if (ldlt.info() != Eigen::Success) return x;
  const Vec3 delta = ldlt.solve(-jtr);
  if (!delta.allFinite()) return x;
  return x + delta;
}

}  // namespace

std::optional<Triangulation> triangulate(std::span<const Observation> obs,
                                         double gate_px) {
  if (obs.size() < 2) {
    fail(ErrorKind::kInvalidArgument, "triangulation needs >= 2 observations");
  }
  for (size_t a = 0; a < obs.size(); ++a) {
    for (size_t b = a + 1; b < obs.size(); ++b) {
      if (obs[a].view->view_id == obs[b].view->view_id) {
        fail(ErrorKind::kInvalidArgument,
             "triangulation observations must come from distinct views");
      }
    }
  }
  if (rays_degenerate(obs)) {
    fail(ErrorKind::kDegenerateGeometry, "observation rays are parallel");
  }

  Vec3 x = dlt(obs);
  if (!x.allFinite()) return std::nullopt;
  const auto refined = gauss_newton_step(obs, x);
  if (!refined) return std::nullopt;
  x = *refined;

  Triangulation out{x, {}};
  out.errors.reserve(obs.size());
  for (const auto& o : obs) {
    const auto proj = project_unbounded(*o.view, x);
    if (!proj) return std::nullopt;
    const double err = std::hypot(proj->x - o.pixel.x, proj->y - o.pixel.y);
    if (!(err <= gate_px)) return std::nullopt;
    out.errors.push_back(err);
  }
  return out;
}

}  // namespace comap
