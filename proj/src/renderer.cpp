#include "gs/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace gs {

const char* param_class_name(ParamClass c) {
  switch (c) {
    case ParamClass::dc_color: return "dc_color";
    case ParamClass::ac_color: return "ac_color";
    case ParamClass::position: return "position";
    case ParamClass::rotation: return "rotation";
    case ParamClass::scale: return "scale";
    case ParamClass::opacity: return "opacity";
  }
  fail(ErrorKind::invalid_argument, "bad param class enum");
}

ParamClass param_class_from_name(const std::string& name) {
  if (name == "dc_color") return ParamClass::dc_color;
  if (name == "ac_color") return ParamClass::ac_color;
  if (name == "position") return ParamClass::position;
  if (name == "rotation") return ParamClass::rotation;
  if (name == "scale") return ParamClass::scale;
  if (name == "opacity") return ParamClass::opacity;
  fail(ErrorKind::invalid_argument, "unknown param class: " + name);
}

int param_class_width(ParamClass c, int sh_bands) {
  switch (c) {
    case ParamClass::dc_color: return 3;
    case ParamClass::ac_color: return 3 * std::max(0, sh_bands - 1);
    case ParamClass::position: return 3;
    case ParamClass::rotation: return 4;
    case ParamClass::scale: return 3;
    case ParamClass::opacity: return 1;
  }
  return 0;
}

Eigen::Matrix3d build_covariance(const Eigen::Vector4d& rotation, const Eigen::Vector3d& scale) {
  Eigen::Matrix3d R = quat_to_matrix(rotation / rotation.norm());
  Eigen::Matrix3d M = R * scale.asDiagonal();
  return M * M.transpose();
}

std::optional<Eigen::Matrix2d> project_covariance(const Eigen::Matrix3d& sigma,
                                                  const Eigen::Vector3d& mean_cam,
                                                  const Eigen::Matrix3d& W, double focal,
                                                  double dilation) {
  const double z = mean_cam[2];
  if (z <= kNearPlane) return std::nullopt;
  const double x = mean_cam[0], y = mean_cam[1];
  Eigen::Matrix<double, 2, 3> J;
  J << focal / z, 0, -focal * x / (z * z), 0, focal / z, -focal * y / (z * z);
  Eigen::Matrix3d cov_cam = W * sigma * W.transpose();
  Eigen::Matrix2d out = J * cov_cam * J.transpose();
  out += dilation * Eigen::Matrix2d::Identity();
  return out;
}

Eigen::Vector3d sh_to_color(const Eigen::Vector3d& sh_dc) {
  Eigen::Vector3d c = kShC0 * sh_dc + Eigen::Vector3d::Constant(0.5);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

namespace {

// Band-1 real SH basis evaluated at a unit direction, paired with sh_rest
// rows in storage order.
inline void sh1_basis(const Eigen::Vector3d& dir, double* basis, int rows) {
  if (rows > 0) basis[0] = -kShC1 * dir[1];
  if (rows > 1) basis[1] = kShC1 * dir[2];
  if (rows > 2) basis[2] = -kShC1 * dir[0];
}

struct FrameCache {
  Eigen::Matrix3d r_pose;
  Eigen::Matrix3d v;  // view.R * r_pose
  Eigen::Vector3d cam_pos;
};

FrameCache make_frame(const CameraView& view, const Pose& pose) {
  FrameCache f;
  f.r_pose = quat_to_matrix(pose.q / pose.q.norm());
  f.v = view.R * f.r_pose;
  f.cam_pos = view.position();
  return f;
}

void project_all(const Scene& scene, const CameraView& view, const Pose& pose,
                 SplatIntermediate& inter) {
  const FrameCache fr = make_frame(view, pose);
  const size_t n = scene.prims.size();
  inter.splats.assign(n, {});
  const int rest_rows = std::max(0, scene.sh_bands - 1);
  for (size_t i = 0; i < n; ++i) {
    const GaussianPrimitive& p = scene.prims[i];
    const bool finite = p.mean.allFinite() && p.rotation.allFinite() && p.scale.allFinite() &&
                        std::isfinite(p.opacity) && p.sh_dc.allFinite();
    if (!finite)
      fail(ErrorKind::runtime_abort, "render: non-finite parameter in primitive " + std::to_string(i));
    for (const auto& row : p.sh_rest)
      if (!row.allFinite())
        fail(ErrorKind::runtime_abort, "render: non-finite parameter in primitive " + std::to_string(i));

    SplatProjection& s = inter.splats[i];
    const Eigen::Vector3d posed = fr.r_pose * p.mean + pose.t;
    s.mean_cam = view.R * posed + view.t;
    const double z = s.mean_cam[2];
    if (z <= kNearPlane) continue;

    Eigen::Matrix3d sigma = build_covariance(p.rotation, p.scale);
    auto cov2 = project_covariance(sigma, s.mean_cam, fr.v, view.fx);
    if (!cov2) continue;
    s.cov2 = *cov2;
    const double det = s.cov2.determinant();
    if (!(det > 0) || !s.cov2.allFinite()) continue;
    s.cov2_inv = s.cov2.inverse();
    s.depth = z;
    s.screen = {view.fx * s.mean_cam[0] / z + view.cx, view.fy * s.mean_cam[1] / z + view.cy};
    // opacity at or below the alpha floor can never contribute
    if (p.opacity <= kAlphaFloor) continue;
    const double lam_max =
        0.5 * (s.cov2(0, 0) + s.cov2(1, 1)) +
        std::sqrt(std::max(0.0, 0.25 * (s.cov2(0, 0) - s.cov2(1, 1)) * (s.cov2(0, 0) - s.cov2(1, 1)) +
                                    s.cov2(0, 1) * s.cov2(0, 1)));
    // support radius: at least 3 sigma, widened so the bounding box only
    // excludes contributions already below the alpha floor
    const double q_floor = 2.0 * std::log(255.0 * p.opacity);
    s.radius = std::sqrt(std::max(9.0, q_floor)) * std::sqrt(std::max(lam_max, 0.0));

    s.dir = (posed - fr.cam_pos).normalized();
    Eigen::Vector3d pre = kShC0 * p.sh_dc + Eigen::Vector3d::Constant(0.5);
    if (rest_rows > 0) {
      double basis[3] = {0, 0, 0};
      sh1_basis(s.dir, basis, std::min(rest_rows, 3));
      for (int r = 0; r < std::min(rest_rows, 3); ++r) pre += basis[r] * p.sh_rest[size_t(r)];
    }
    s.color_pre = pre;
    s.color = pre.cwiseMax(0.0).cwiseMin(1.0);
    s.visible = true;
  }

  inter.order.clear();
  for (size_t i = 0; i < n; ++i)
    if (inter.splats[i].visible) inter.order.push_back(std::uint32_t(i));
  std::sort(inter.order.begin(), inter.order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double da = inter.splats[a].depth, db = inter.splats[b].depth;
    if (da != db) return da < db;
    return a < b;
  });
}

}  // namespace

RenderResult render(const Scene& scene, const CameraView& view, const Pose& pose) {
  if (view.width <= 0 || view.height <= 0)
    fail(ErrorKind::invalid_argument, "render: view has no pixels");
  RenderResult res;
  res.image = Image(view.width, view.height);
  SplatIntermediate& inter = res.inter;
  project_all(scene, view, pose, inter);

  const int w = view.width, h = view.height;
  const size_t npx = size_t(w) * size_t(h);

  // two-pass CSR binning; per-pixel slices end up in depth order
  auto bbox = [&](const SplatProjection& s, int& x0, int& x1, int& y0, int& y1) {
    x0 = std::max(0, int(std::floor(s.screen[0] - s.radius)));
    x1 = std::min(w - 1, int(std::ceil(s.screen[0] + s.radius)));
    y0 = std::max(0, int(std::floor(s.screen[1] - s.radius)));
    y1 = std::min(h - 1, int(std::ceil(s.screen[1] + s.radius)));
    return x0 <= x1 && y0 <= y1;
  };
  std::vector<std::uint32_t> cand_off(npx + 1, 0);
  for (std::uint32_t idx : inter.order) {
    int x0, x1, y0, y1;
    if (!bbox(inter.splats[idx], x0, x1, y0, y1)) continue;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) ++cand_off[size_t(y) * size_t(w) + size_t(x) + 1];
  }
  for (size_t px = 0; px < npx; ++px) cand_off[px + 1] += cand_off[px];
  std::vector<std::uint32_t> cand(cand_off[npx]);
  std::vector<std::uint32_t> cursor(cand_off.begin(), cand_off.end() - 1);
  for (std::uint32_t idx : inter.order) {
    int x0, x1, y0, y1;
    if (!bbox(inter.splats[idx], x0, x1, y0, y1)) continue;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) cand[cursor[size_t(y) * size_t(w) + size_t(x)]++] = idx;
  }

  inter.offsets.assign(npx + 1, 0);
  inter.entries.clear();
  inter.t_final.assign(npx, 1.0);

  for (size_t px = 0; px < npx; ++px) {
    const int y = int(px / size_t(w));
    const int x = int(px % size_t(w));
    const double pcx = x + 0.5, pcy = y + 0.5;
    double T = 1.0;
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    inter.offsets[px] = std::uint32_t(inter.entries.size());
    for (std::uint32_t ci = cand_off[px]; ci < cand_off[px + 1]; ++ci) {
      const std::uint32_t idx = cand[ci];
      const SplatProjection& s = inter.splats[idx];
      const Eigen::Vector2d d(pcx - s.screen[0], pcy - s.screen[1]);
      const double q = d.dot(s.cov2_inv * d);
      if (q < 0) continue;
      const double g = std::exp(-0.5 * q);
      double alpha = scene.prims[idx].opacity * g;
      bool capped = false;
      if (alpha > kAlphaCap) {
        alpha = kAlphaCap;
        capped = true;
      }
      if (alpha < kAlphaFloor) continue;
      inter.entries.push_back({idx, alpha, g, T, capped});
      acc += s.color * (alpha * T);
      T *= 1.0 - alpha;
      if (T < kEarlyStopT) break;
    }
    inter.t_final[px] = T;
    acc += T * scene.background;
    for (int c = 0; c < 3; ++c) res.image.data[px * 3 + size_t(c)] = acc[c];
  }
  inter.offsets[npx] = std::uint32_t(inter.entries.size());
  return res;
}

namespace {

// d(quat_to_matrix)/dq at q (no normalization), times a cotangent matrix.
Eigen::Vector4d quat_rotation_pullback(const Eigen::Vector4d& q, const Eigen::Matrix3d& dR) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d Dw, Dx, Dy, Dz;
  Dw << 0, -z, y, z, 0, -x, -y, x, 0;
  Dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  Dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  Dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  return 2.0 * Eigen::Vector4d(dR.cwiseProduct(Dw).sum(), dR.cwiseProduct(Dx).sum(),
                               dR.cwiseProduct(Dy).sum(), dR.cwiseProduct(Dz).sum());
}

}  // namespace

Eigen::MatrixXd render_backward(const Scene& scene, const CameraView& view, const Pose& pose,
                                const SplatIntermediate& inter, const Image& dL_dImage,
                                ParamClass pclass) {
  const int rest_rows = std::max(0, scene.sh_bands - 1);
  if (pclass == ParamClass::ac_color && rest_rows == 0)
    fail(ErrorKind::invalid_argument, "render_backward: ac_color requires sh_bands >= 2");
  if (dL_dImage.width != view.width || dL_dImage.height != view.height)
    fail(ErrorKind::invalid_argument, "render_backward: dL_dImage dimensions mismatch");

  const size_t n = scene.prims.size();
  const int width_cols = param_class_width(pclass, scene.sh_bands);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(Eigen::Index(n), width_cols);

  const bool need_geom = pclass == ParamClass::position || pclass == ParamClass::rotation ||
                         pclass == ParamClass::scale;
  const bool need_color = pclass == ParamClass::dc_color || pclass == ParamClass::ac_color ||
                          (pclass == ParamClass::position && rest_rows > 0);

  // per-primitive accumulators, combined after the pixel-major sweep
  std::vector<Eigen::Vector2d> g_screen;
  std::vector<Eigen::Matrix2d> g_cov2;
  std::vector<Eigen::Vector3d> g_color;
  if (need_geom) {
    g_screen.assign(n, Eigen::Vector2d::Zero());
    g_cov2.assign(n, Eigen::Matrix2d::Zero());
  }
  if (need_color) g_color.assign(n, Eigen::Vector3d::Zero());

  const int w = view.width, h = view.height;
  const size_t npx = size_t(w) * size_t(h);
  for (size_t px = 0; px < npx; ++px) {
    const std::uint32_t lo = inter.offsets[px], hi = inter.offsets[px + 1];
    if (lo == hi) continue;
    const int y = int(px / size_t(w));
    const int x = int(px % size_t(w));
    const Eigen::Vector3d gpx(dL_dImage.at(y, x, 0), dL_dImage.at(y, x, 1), dL_dImage.at(y, x, 2));
    const double pcx = x + 0.5, pcy = y + 0.5;

    Eigen::Vector3d suffix = inter.t_final[px] * scene.background;
    for (std::uint32_t e = hi; e-- > lo;) {
      const Contribution& ct = inter.entries[e];
      const SplatProjection& s = inter.splats[ct.prim];
      const Eigen::Vector3d& c = s.color;
      const double a = ct.alpha, T = ct.trans;

      if (need_color) g_color[ct.prim] += gpx * (a * T);

      if (pclass == ParamClass::opacity || need_geom) {
        const Eigen::Vector3d dC_dalpha = T * c - suffix / (1.0 - a);
        const double dL_dalpha = gpx.dot(dC_dalpha);
        if (!ct.capped) {
          if (pclass == ParamClass::opacity) {
            grad(ct.prim, 0) += dL_dalpha * ct.gauss;
          } else {
            const double dL_dG = dL_dalpha * scene.prims[ct.prim].opacity;
            const Eigen::Vector2d d(pcx - s.screen[0], pcy - s.screen[1]);
            const Eigen::Vector2d u = s.cov2_inv * d;
            g_screen[ct.prim] += (dL_dG * ct.gauss) * u;
            g_cov2[ct.prim] += (0.5 * dL_dG * ct.gauss) * (u * u.transpose());
          }
        }
      }
      suffix += c * (a * T);
    }
  }

  if (pclass == ParamClass::dc_color || pclass == ParamClass::ac_color) {
    for (size_t i = 0; i < n; ++i) {
      const SplatProjection& s = inter.splats[i];
      if (!s.visible) continue;
      Eigen::Vector3d masked = g_color[i];
      for (int c = 0; c < 3; ++c)
        if (s.color_pre[c] < 0.0 || s.color_pre[c] > 1.0) masked[c] = 0.0;
      if (pclass == ParamClass::dc_color) {
        grad.row(Eigen::Index(i)) = (kShC0 * masked).transpose();
      } else {
        double basis[3] = {0, 0, 0};
        sh1_basis(s.dir, basis, std::min(rest_rows, 3));
        for (int r = 0; r < rest_rows; ++r) {
          const double b = r < 3 ? basis[r] : 0.0;
          for (int c = 0; c < 3; ++c) grad(Eigen::Index(i), 3 * r + c) = b * masked[c];
        }
      }
    }
    return grad;
  }
  if (pclass == ParamClass::opacity) return grad;

  const FrameCache fr = make_frame(view, pose);
  for (size_t i = 0; i < n; ++i) {
    const SplatProjection& s = inter.splats[i];
    if (!s.visible) continue;
    const GaussianPrimitive& p = scene.prims[i];
    const double fx = view.fx, fy = view.fy;
    const double xc = s.mean_cam[0], yc = s.mean_cam[1], z = s.mean_cam[2];
    Eigen::Matrix<double, 2, 3> J;
    J << fx / z, 0, -fx * xc / (z * z), 0, fy / z, -fy * yc / (z * z);

    const Eigen::Matrix2d U = 0.5 * (g_cov2[i] + g_cov2[i].transpose());

    if (pclass == ParamClass::position) {
      const Eigen::Matrix3d sigma = build_covariance(p.rotation, p.scale);
      const Eigen::Matrix3d M = fr.v * sigma * fr.v.transpose();
      const Eigen::Matrix<double, 2, 3> dL_dJ = 2.0 * U * J * M;
      Eigen::Vector3d gmc = J.transpose() * g_screen[i];
      gmc[0] += dL_dJ(0, 2) * (-fx / (z * z));
      gmc[1] += dL_dJ(1, 2) * (-fy / (z * z));
      gmc[2] += dL_dJ(0, 0) * (-fx / (z * z)) + dL_dJ(0, 2) * (2 * fx * xc / (z * z * z)) +
                dL_dJ(1, 1) * (-fy / (z * z)) + dL_dJ(1, 2) * (2 * fy * yc / (z * z * z));
      Eigen::Vector3d gm = fr.v.transpose() * gmc;

      if (rest_rows > 0) {
        Eigen::Vector3d masked = g_color[i];
        for (int c = 0; c < 3; ++c)
          if (s.color_pre[c] < 0.0 || s.color_pre[c] > 1.0) masked[c] = 0.0;
        Eigen::Vector3d g_dir = Eigen::Vector3d::Zero();
        // basis gradients wrt dir: rows pair with sh_rest order
        if (rest_rows > 0) g_dir[1] += -kShC1 * masked.dot(p.sh_rest[0]);
        if (rest_rows > 1) g_dir[2] += kShC1 * masked.dot(p.sh_rest[1]);
        if (rest_rows > 2) g_dir[0] += -kShC1 * masked.dot(p.sh_rest[2]);
        const Eigen::Vector3d posed = fr.r_pose * p.mean + pose.t;
        const Eigen::Vector3d rel = posed - fr.cam_pos;
        const double rlen = rel.norm();
        if (rlen > 0) {
          const Eigen::Vector3d dhat = rel / rlen;
          const Eigen::Vector3d gw = (g_dir - dhat * dhat.dot(g_dir)) / rlen;
          gm += fr.r_pose.transpose() * gw;
        }
      }
      grad.row(Eigen::Index(i)) = gm.transpose();
    } else {
      const Eigen::Matrix3d dL_dM = J.transpose() * U * J;
      const Eigen::Matrix3d dL_dSigma = fr.v.transpose() * dL_dM * fr.v;
      const Eigen::Vector4d qn = p.rotation / p.rotation.norm();
      const Eigen::Matrix3d R = quat_to_matrix(qn);
      if (pclass == ParamClass::scale) {
        for (int k = 0; k < 3; ++k) {
          const Eigen::Vector3d rk = R.col(k);
          grad(Eigen::Index(i), k) = 2.0 * p.scale[k] * rk.dot(dL_dSigma * rk);
        }
      } else {  // rotation
        const Eigen::Vector3d s2 = p.scale.cwiseProduct(p.scale);
        const Eigen::Matrix3d dL_dR =
            (dL_dSigma + dL_dSigma.transpose()) * R * s2.asDiagonal();
        Eigen::Vector4d gq = quat_rotation_pullback(qn, dL_dR);
        const double qnorm = p.rotation.norm();
        gq = (gq - qn * qn.dot(gq)) / qnorm;
        grad.row(Eigen::Index(i)) = gq.transpose();
      }
    }
  }
  return grad;
}

Eigen::MatrixXd fd_gradient(const Scene& scene, const CameraView& view, const Pose& pose,
                            const LossFn& loss, ParamClass pclass, double h) {
  if (!(h > 0)) fail(ErrorKind::invalid_argument, "fd_gradient: h must be positive");
  const int rest_rows = std::max(0, scene.sh_bands - 1);
  if (pclass == ParamClass::ac_color && rest_rows == 0)
    fail(ErrorKind::invalid_argument, "fd_gradient: ac_color requires sh_bands >= 2");
  const size_t n = scene.prims.size();
  const int cols = param_class_width(pclass, scene.sh_bands);
  Eigen::MatrixXd grad(Eigen::Index(n), cols);

  Scene work = scene;
  auto param_ref = [&](GaussianPrimitive& p, int j) -> double& {
    switch (pclass) {
      case ParamClass::dc_color: return p.sh_dc[j];
      case ParamClass::ac_color: return p.sh_rest[size_t(j / 3)][j % 3];
      case ParamClass::position: return p.mean[j];
      case ParamClass::rotation: return p.rotation[j];
      case ParamClass::scale: return p.scale[j];
      case ParamClass::opacity: return p.opacity;
    }
    fail(ErrorKind::invalid_argument, "bad param class enum");
  };

  for (size_t i = 0; i < n; ++i) {
    for (int j = 0; j < cols; ++j) {
      double& slot = param_ref(work.prims[i], j);
      const double orig = slot;
      const double step = h * std::max(1.0, std::abs(orig));
      slot = orig + step;
      const double fp = loss(render(work, view, pose).image);
      slot = orig - step;
      const double fm = loss(render(work, view, pose).image);
      slot = orig;
      grad(Eigen::Index(i), j) = (fp - fm) / (2.0 * step);
    }
  }
  return grad;
}

void set_sh_bands(Scene& scene, int bands) {
  if (bands < 1 || bands > 4) fail(ErrorKind::invalid_argument, "set_sh_bands: bands must be 1..4");
  scene.sh_bands = bands;
  for (auto& p : scene.prims) p.sh_rest.resize(size_t(bands - 1), Eigen::Vector3d::Zero());
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::runtime_abort, "cannot open for write: " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        row[size_t(x) * 3 + size_t(c)] = (unsigned char)std::floor(v * 255.0 + 0.5);
      }
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!os) fail(ErrorKind::runtime_abort, "write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open image: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    fail(ErrorKind::parse, "unsupported PPM header in " + path);
  is.get();
  Image img(w, h);
  std::vector<unsigned char> buf(size_t(w) * size_t(h) * 3);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!is) fail(ErrorKind::parse, "truncated PPM payload in " + path);
  for (size_t i = 0; i < buf.size(); ++i) img.data[i] = double(buf[i]) / 255.0;
  return img;
}

}  // namespace gs
