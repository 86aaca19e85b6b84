#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gs/camera.hpp"
#include "gs/scene.hpp"

namespace gs {

constexpr double kShC0 = 0.28209479177387814;  // 1/(2*sqrt(pi))
constexpr double kShC1 = 0.4886025119029199;
constexpr double kAlphaFloor = 1.0 / 255.0;
constexpr double kAlphaCap = 0.999;
constexpr double kEarlyStopT = 1e-4;
constexpr double kNearPlane = 1e-4;
constexpr double kCovDilation = 0.3;

struct Image {
  int width = 0, height = 0;
  std::vector<double> data;  // row-major H x W x 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(size_t(w) * size_t(h) * 3, 0.0) {}
  double& at(int y, int x, int c) { return data[(size_t(y) * size_t(width) + size_t(x)) * 3 + size_t(c)]; }
  double at(int y, int x, int c) const {
    return data[(size_t(y) * size_t(width) + size_t(x)) * 3 + size_t(c)];
  }
};

enum class ParamClass { dc_color, ac_color, position, rotation, scale, opacity };

const char* param_class_name(ParamClass c);
ParamClass param_class_from_name(const std::string& name);
// Components per primitive for a class (ac_color depends on sh_bands).
int param_class_width(ParamClass c, int sh_bands);

struct SplatProjection {
  bool visible = false;
  double depth = 0;
  Eigen::Vector3d mean_cam = Eigen::Vector3d::Zero();
  Eigen::Vector2d screen = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2 = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d cov2_inv = Eigen::Matrix2d::Identity();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();      // post-clamp
  Eigen::Vector3d color_pre = Eigen::Vector3d::Zero();  // pre-clamp
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();       // SH view direction
  double radius = 0;  // 3-sigma support in pixels
};

struct Contribution {
  std::uint32_t prim;
  double alpha;
  double gauss;  // exp(-0.5 d^T cov2_inv d)
  double trans;  // transmittance before this contribution
  bool capped;
};

struct SplatIntermediate {
  std::vector<SplatProjection> splats;
  std::vector<std::uint32_t> order;    // visible primitives, sorted by (depth, index)
  std::vector<std::uint32_t> offsets;  // per-pixel CSR, size h*w+1
  std::vector<Contribution> entries;
  std::vector<double> t_final;  // per-pixel remaining transmittance
};

struct RenderResult {
  Image image;
  SplatIntermediate inter;
};

Eigen::Matrix3d build_covariance(const Eigen::Vector4d& rotation, const Eigen::Vector3d& scale);

// nullopt = culled behind the near plane.
std::optional<Eigen::Matrix2d> project_covariance(const Eigen::Matrix3d& sigma,
                                                  const Eigen::Vector3d& mean_cam,
                                                  const Eigen::Matrix3d& W, double focal,
                                                  double dilation = kCovDilation);

Eigen::Vector3d sh_to_color(const Eigen::Vector3d& sh_dc);

RenderResult render(const Scene& scene, const CameraView& view, const Pose& pose = {});

// dL/dImage -> per-primitive gradient rows for one parameter class.
Eigen::MatrixXd render_backward(const Scene& scene, const CameraView& view, const Pose& pose,
                                const SplatIntermediate& inter, const Image& dL_dImage,
                                ParamClass pclass);

using LossFn = std::function<double(const Image&)>;

Eigen::MatrixXd fd_gradient(const Scene& scene, const CameraView& view, const Pose& pose,
                            const LossFn& loss, ParamClass pclass, double h);

// Resize sh_rest rows to match `bands` (new rows zero).
void set_sh_bands(Scene& scene, int bands);

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

}  // namespace gs
