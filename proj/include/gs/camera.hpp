#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "gs/scene.hpp"

namespace gs {

// World-to-camera map x_cam = R x + t plus pinhole intrinsics.
struct CameraView {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  Eigen::Vector3d position() const { return -R.transpose() * t; }
};

struct Pose {
  Eigen::Vector4d q{1, 0, 0, 0};  // w x y z, unit
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

struct ViewpointDistribution {
  double pitch_lo = -0.5, pitch_hi = 0.5;
  double yaw_lo = -0.5, yaw_hi = 0.5;
};

struct Viewpoint {
  double pitch = 0, yaw = 0;
};

Eigen::Matrix3d quat_to_matrix(const Eigen::Vector4d& q);
Eigen::Vector4d quat_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b);

// Camera on the +z axis at the orbit radius, looking at the origin with
// image y running down; focal length scales with resolution.
CameraView default_frontal(int width, int height, double orbit_radius = 4.0,
                           double focal_scale = 1.25);

// Orbit the camera about the origin: yaw about world y, then pitch about
// world x; intrinsics and distance are preserved.
CameraView rotate_view(const CameraView& base, double pitch, double yaw);

// k draws from the substream addressed by (seed, iteration t, sample k).
std::vector<Viewpoint> sample_viewpoints(const ViewpointDistribution& dist, int k,
                                         std::uint64_t seed, std::uint64_t t);

// Row-major (pitch row, yaw column) lattice including the range endpoints;
// a single row or column sits at the midpoint.
std::vector<Viewpoint> grid_viewpoints(const ViewpointDistribution& dist, int rows, int cols);

// Rigid transform of every primitive: means moved, rotations left-composed.
Scene apply_pose(const Scene& scene, const Pose& pose);

Pose inverse_pose(const Pose& pose);

}  // namespace gs
