#include "gs/camera.hpp"

#include <cmath>

namespace gs {

Eigen::Matrix3d quat_to_matrix(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Eigen::Vector4d quat_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

CameraView default_frontal(int width, int height, double orbit_radius, double focal_scale) {
  if (width <= 0 || height <= 0)
    fail(ErrorKind::invalid_argument, "default_frontal: image dimensions must be positive");
  if (orbit_radius <= 0)
    fail(ErrorKind::invalid_argument, "default_frontal: orbit radius must be positive");
  CameraView v;
  v.R << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  v.t = {0, 0, orbit_radius};
  v.fx = v.fy = focal_scale * double(std::min(width, height));
  v.cx = width / 2.0;
  v.cy = height / 2.0;
  v.width = width;
  v.height = height;
  return v;
}

CameraView rotate_view(const CameraView& base, double pitch, double yaw) {
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Eigen::Matrix3d Rx, Ry;
  Rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
  Ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  Eigen::Matrix3d Q = Ry * Rx;
  CameraView out = base;
  out.R = base.R * Q.transpose();
  return out;
}

std::vector<Viewpoint> sample_viewpoints(const ViewpointDistribution& dist, int k,
                                         std::uint64_t seed, std::uint64_t t) {
  if (k < 0) fail(ErrorKind::invalid_argument, "sample_viewpoints: k must be non-negative");
  std::vector<Viewpoint> out((size_t(k)));
  for (int i = 0; i < k; ++i) {
    rng::Stream s(seed, t, std::uint64_t(i));
    out[size_t(i)].pitch = s.uniform(0, dist.pitch_lo, dist.pitch_hi);
    out[size_t(i)].yaw = s.uniform(1, dist.yaw_lo, dist.yaw_hi);
  }
  return out;
}

std::vector<Viewpoint> grid_viewpoints(const ViewpointDistribution& dist, int rows, int cols) {
  if (rows <= 0 || cols <= 0)
    fail(ErrorKind::invalid_argument, "grid_viewpoints: rows and cols must be positive");
  auto axis = [](double lo, double hi, int n, int i) {
    if (n == 1) return (lo + hi) / 2.0;
    return lo + (hi - lo) * double(i) / double(n - 1);
  };
  std::vector<Viewpoint> out;
  out.reserve(size_t(rows) * size_t(cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.push_back({axis(dist.pitch_lo, dist.pitch_hi, rows, r),
                     axis(dist.yaw_lo, dist.yaw_hi, cols, c)});
  return out;
}

Scene apply_pose(const Scene& scene, const Pose& pose) {
  if (std::abs(pose.q.norm() - 1.0) > 1e-9)
    fail(ErrorKind::invalid_argument, "apply_pose: pose quaternion must be unit length");
  const Eigen::Matrix3d R = quat_to_matrix(pose.q);
  Scene out = scene;
  for (auto& p : out.prims) {
    p.mean = R * p.mean + pose.t;
    // unit * unit stays unit to roundoff; renormalizing would break the
    // field-exact identity-pose contract
    p.rotation = quat_multiply(pose.q, p.rotation);
  }
  return out;
}

Pose inverse_pose(const Pose& pose) {
  Pose inv;
  inv.q = {pose.q[0], -pose.q[1], -pose.q[2], -pose.q[3]};
  inv.t = -(quat_to_matrix(inv.q) * pose.t);
  return inv;
}

}  // namespace gs
