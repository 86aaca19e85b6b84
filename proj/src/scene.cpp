#include "gs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace gs {

const char* region_name(Region r) {
  switch (r) {
    case Region::eyes: return "eyes";
    case Region::forehead: return "forehead";
    case Region::nose: return "nose";
    case Region::lips: return "lips";
    case Region::other: return "other";
  }
  fail(ErrorKind::invalid_argument, "bad region enum");
}

Region region_from_name(const std::string& name) {
  if (name == "eyes") return Region::eyes;
  if (name == "forehead") return Region::forehead;
  if (name == "nose") return Region::nose;
  if (name == "lips") return Region::lips;
  if (name == "other") return Region::other;
  fail(ErrorKind::invalid_argument, "unknown region label: " + name);
}

static bool finite3(const Eigen::Vector3d& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

void validate_scene(const Scene& scene) {
  if (scene.schema_version != 1)
    fail(ErrorKind::version, "unsupported schema_version " + std::to_string(scene.schema_version));
  if (scene.sh_bands < 1 || scene.sh_bands > 4)
    fail(ErrorKind::validation, "sh_bands must be in [1,4], got " + std::to_string(scene.sh_bands));
  if (!finite3(scene.background))
    fail(ErrorKind::validation, "background must be finite");
  if (scene.prims.empty())
    fail(ErrorKind::validation, "scene has no primitives");
  for (size_t i = 0; i < scene.prims.size(); ++i) {
    const auto& p = scene.prims[i];
    const std::string where = "primitive " + std::to_string(i) + ": ";
    if (!finite3(p.mean)) fail(ErrorKind::validation, where + "non-finite mean");
    if (!p.rotation.allFinite()) fail(ErrorKind::validation, where + "non-finite rotation");
    if (std::abs(p.rotation.norm() - 1.0) > 1e-9)
      fail(ErrorKind::validation, where + "rotation is not unit length");
    if (!finite3(p.scale) || p.scale.minCoeff() <= 0.0)
      fail(ErrorKind::validation, where + "scale must be strictly positive");
    if (!std::isfinite(p.opacity) || p.opacity < 0.0 || p.opacity > 1.0)
      fail(ErrorKind::validation, where + "opacity outside [0,1]");
    if (!finite3(p.sh_dc)) fail(ErrorKind::validation, where + "non-finite sh_dc");
    if ((int)p.sh_rest.size() != scene.sh_bands - 1)
      fail(ErrorKind::validation, where + "sh_rest row count does not match sh_bands");
    for (const auto& row : p.sh_rest)
      if (!finite3(row)) fail(ErrorKind::validation, where + "non-finite sh_rest");
  }
}

// ---------------------------------------------------------------------------
// synthesis

namespace {

// head_like places primitives on a fixed ellipsoid scaffold with labeled
// feature clusters; the seed drives only the per-identity color signature.
// Tuned so identities separate under the surrogate embedder while staying
// reachable by bounded color perturbations.
namespace head {
constexpr double ax[3] = {0.72, 1.0, 0.78};
constexpr double frac_eyes = 0.08, frac_forehead = 0.14, frac_nose = 0.07, frac_lips = 0.08;
constexpr double eye_cx = 0.30, eye_cy = 0.25, eye_cz = 0.92, eye_spread = 0.10;
constexpr double fore_cy = 0.62, fore_cz = 0.75, fore_spread = 0.22;
constexpr double nose_cy = 0.02, nose_cz = 1.0, nose_spread = 0.09;
constexpr double lip_cy = -0.42, lip_cz = 0.88, lip_spread = 0.10;
constexpr double front_min_z = 0.15;
constexpr double base_dc[3] = {-1.33, -1.34, -1.35};
constexpr double palette_amp = 0.225;
constexpr double field_amp = 0.02;
constexpr double noise_amp = 0.005;
constexpr double decor_amp = 0.1;
constexpr double decor_eyes[3] = {0.0, 0.0, 0.4};
constexpr double decor_lips[3] = {0.5, 0.1, 0.1};
constexpr double decor_forehead[3] = {0.3, 0.25, 0.2};
constexpr double decor_nose[3] = {0.25, 0.15, 0.1};
constexpr double scale_base = 0.135, scale_sigma = 0.25, scale_normal_frac = 0.45;
constexpr double opacity_lo = 0.85, opacity_hi = 0.97;
constexpr std::uint64_t scaffold_key = 777;  // shared across all seeds
}  // namespace head

Eigen::Vector3d randn3(const rng::Stream& s) {
  return {s.normal(0), s.normal(1), s.normal(2)};
}

Eigen::Vector4d quat_from_columns(const Eigen::Vector3d& xl, const Eigen::Vector3d& yl,
                                  const Eigen::Vector3d& zl) {
  Eigen::Matrix3d R;
  R.col(0) = xl;
  R.col(1) = yl;
  R.col(2) = zl;
  double tr = 1.0 + R(0, 0) + R(1, 1) + R(2, 2);
  Eigen::Vector4d q{1, 0, 0, 0};
  if (tr > 1e-8) {
    double w = std::sqrt(tr) / 2.0;
    q = {w, (R(2, 1) - R(1, 2)) / (4 * w), (R(0, 2) - R(2, 0)) / (4 * w),
         (R(1, 0) - R(0, 1)) / (4 * w)};
  } else {
    // 180-degree case: pick the dominant diagonal axis
    int k = 0;
    if (R(1, 1) > R(k, k)) k = 1;
    if (R(2, 2) > R(k, k)) k = 2;
    int a = k, b = (k + 1) % 3, c = (k + 2) % 3;
    double r = std::sqrt(std::max(0.0, 1.0 + R(a, a) - R(b, b) - R(c, c)));
    if (r > 1e-12) {
      Eigen::Vector4d t = Eigen::Vector4d::Zero();
      t[1 + a] = r / 2.0;
      t[0] = (R(c, b) - R(b, c)) / (2 * r);
      t[1 + b] = (R(b, a) + R(a, b)) / (2 * r);
      t[1 + c] = (R(c, a) + R(a, c)) / (2 * r);
      q = t;
    }
  }
  return q / q.norm();
}

Eigen::Vector4d quat_align_z(const Eigen::Vector3d& zl) {
  Eigen::Vector3d up(0, 1, 0);
  if (std::abs(zl.dot(up)) > 0.95) up = Eigen::Vector3d(1, 0, 0);
  Eigen::Vector3d xl = up.cross(zl).normalized();
  Eigen::Vector3d yl = zl.cross(xl);
  return quat_from_columns(xl, yl, zl);
}

Eigen::Vector3d cluster_dir(const Eigen::Vector3d& center, double spread, std::uint64_t prim,
                            bool front) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    rng::Stream s(head::scaffold_key, 1, prim, attempt);
    Eigen::Vector3d v = center.normalized() + spread * randn3(s);
    v.normalize();
    if (!front || v[2] >= head::front_min_z) return v;
  }
}

Eigen::Vector3d free_dir(std::uint64_t prim) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    rng::Stream s(head::scaffold_key, 1, prim, attempt);
    Eigen::Vector3d v = randn3(s);
    double n = v.norm();
    if (n > 1e-8) return v / n;
  }
}

Scene synth_head(std::uint64_t seed, int n) {
  const int n_eyes = std::max(1, int(head::frac_eyes * n));
  const int n_fore = std::max(1, int(head::frac_forehead * n));
  const int n_nose = std::max(1, int(head::frac_nose * n));
  const int n_lips = std::max(1, int(head::frac_lips * n));
  int n_other = n - (n_eyes + n_fore + n_nose + n_lips);
  if (n_other < 0) n_other = 0;

  struct Slot {
    Region region;
    Eigen::Vector3d dir;
  };
  std::vector<Slot> slots;
  slots.reserve(size_t(n_eyes + n_fore + n_nose + n_lips + n_other));
  const Eigen::Vector3d eye_l(-head::eye_cx, head::eye_cy, head::eye_cz);
  const Eigen::Vector3d eye_r(head::eye_cx, head::eye_cy, head::eye_cz);
  for (int i = 0; i < n_eyes; ++i)
    slots.push_back({Region::eyes,
                     cluster_dir(i % 2 ? eye_r : eye_l, head::eye_spread, slots.size(), true)});
  for (int i = 0; i < n_fore; ++i)
    slots.push_back({Region::forehead,
                     cluster_dir({0, head::fore_cy, head::fore_cz}, head::fore_spread,
                                 slots.size(), true)});
  for (int i = 0; i < n_nose; ++i)
    slots.push_back({Region::nose,
                     cluster_dir({0, head::nose_cy, head::nose_cz}, head::nose_spread,
                                 slots.size(), true)});
  for (int i = 0; i < n_lips; ++i)
    slots.push_back({Region::lips,
                     cluster_dir({0, head::lip_cy, head::lip_cz}, head::lip_spread,
                                 slots.size(), true)});
  for (int i = 0; i < n_other; ++i) slots.push_back({Region::other, free_dir(slots.size())});

  const Eigen::Vector3d axes(head::ax[0], head::ax[1], head::ax[2]);

  rng::Stream palette(seed, 10);
  Eigen::Vector3d pal;
  for (int c = 0; c < 3; ++c) pal[c] = head::palette_amp * palette.uniform(std::uint64_t(c), -1.0, 1.0);
  rng::Stream field(seed, 11);
  Eigen::Matrix3d W;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double mag = field.uniform(std::uint64_t(3 * r + c), 0.8, 2.2);
      double sgn = field.uniform(9 + std::uint64_t(3 * r + c)) < 0.5 ? -1.0 : 1.0;
      W(r, c) = mag * sgn;
    }
  rng::Stream phase(seed, 12);
  Eigen::Vector3d ph;
  const double two_pi = 6.283185307179586476925286766559;
  for (int c = 0; c < 3; ++c) ph[c] = phase.uniform(c, 0.0, two_pi);

  Scene scene;
  scene.sh_bands = 1;
  scene.background = Eigen::Vector3d::Zero();
  scene.prims.resize(slots.size());
  for (size_t i = 0; i < slots.size(); ++i) {
    GaussianPrimitive& p = scene.prims[i];
    p.region = slots[i].region;
    p.mean = slots[i].dir.cwiseProduct(axes);

    Eigen::Vector3d nrm = (p.mean.array() / (axes.array() * axes.array())).matrix().normalized();
    p.rotation = quat_align_z(nrm);

    rng::Stream sc(head::scaffold_key, 2, i);
    for (int c = 0; c < 3; ++c) p.scale[c] = head::scale_base * std::exp(head::scale_sigma * sc.normal(c));
    p.scale[2] *= head::scale_normal_frac;

    rng::Stream op(head::scaffold_key, 3, i);
    p.opacity = op.uniform(0, head::opacity_lo, head::opacity_hi);

    Eigen::Vector3d dc(head::base_dc[0], head::base_dc[1], head::base_dc[2]);
    dc += pal;
    Eigen::Vector3d sins = (W * p.mean + ph).array().sin();
    dc += head::field_amp * sins;
    const double* decor = nullptr;
    switch (p.region) {
      case Region::eyes: decor = head::decor_eyes; break;
      case Region::lips: decor = head::decor_lips; break;
      case Region::forehead: decor = head::decor_forehead; break;
      case Region::nose: decor = head::decor_nose; break;
      case Region::other: break;
    }
    if (decor)
      for (int c = 0; c < 3; ++c) dc[c] += head::decor_amp * decor[c];
    rng::Stream nz(seed, 13, i);
    for (int c = 0; c < 3; ++c) dc[c] += head::noise_amp * nz.uniform(c, -1.0, 1.0);
    p.sh_dc = dc;
  }
  return scene;
}

Scene synth_blob(std::uint64_t seed, int n) {
  Scene scene;
  scene.sh_bands = 1;
  scene.background = Eigen::Vector3d::Zero();
  scene.prims.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive& p = scene.prims[size_t(i)];
    rng::Stream s(seed, 20, std::uint64_t(i));
    for (int c = 0; c < 3; ++c) p.mean[c] = s.uniform(c, -1.0, 1.0);
    rng::Stream sq(seed, 21, std::uint64_t(i));
    Eigen::Vector4d q{sq.normal(0), sq.normal(1), sq.normal(2), sq.normal(3)};
    double qn = q.norm();
    p.rotation = qn > 1e-8 ? Eigen::Vector4d(q / qn) : Eigen::Vector4d(1, 0, 0, 0);
    rng::Stream ss(seed, 22, std::uint64_t(i));
    for (int c = 0; c < 3; ++c) p.scale[c] = 0.1 * std::exp(0.3 * ss.normal(c));
    rng::Stream so(seed, 23, std::uint64_t(i));
    p.opacity = so.uniform(0, 0.2, 0.95);
    rng::Stream sd(seed, 24, std::uint64_t(i));
    for (int c = 0; c < 3; ++c) p.sh_dc[c] = sd.uniform(c, -1.5, 1.5);
    p.region = Region::other;
  }
  return scene;
}

}  // namespace

Scene synth_scene(std::uint64_t seed, int n, Layout layout) {
  if (n <= 0) fail(ErrorKind::invalid_argument, "synth_scene: n must be positive");
  Scene scene = layout == Layout::head_like ? synth_head(seed, n) : synth_blob(seed, n);
  validate_scene(scene);
  return scene;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_scene(const Scene& scene, std::ostream& os) {
  os << "gsscene " << scene.schema_version << "\n";
  os << "sh_bands " << scene.sh_bands << "\n";
  os << "background " << fmt_double(scene.background[0]) << ' ' << fmt_double(scene.background[1])
     << ' ' << fmt_double(scene.background[2]) << "\n";
  os << "count " << scene.prims.size() << "\n";
  for (const auto& p : scene.prims) {
    os << "p";
    for (int c = 0; c < 3; ++c) os << ' ' << fmt_double(p.mean[c]);
    for (int c = 0; c < 4; ++c) os << ' ' << fmt_double(p.rotation[c]);
    for (int c = 0; c < 3; ++c) os << ' ' << fmt_double(p.scale[c]);
    os << ' ' << fmt_double(p.opacity);
    for (int c = 0; c < 3; ++c) os << ' ' << fmt_double(p.sh_dc[c]);
    for (const auto& row : p.sh_rest)
      for (int c = 0; c < 3; ++c) os << ' ' << fmt_double(row[c]);
    os << ' ' << region_name(p.region) << "\n";
  }
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::runtime_abort, "cannot open for write: " + path);
  save_scene(scene, os);
  if (!os) fail(ErrorKind::runtime_abort, "write failed: " + path);
}

namespace {

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  fail(ErrorKind::parse, "scene parse error at line " + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& tok, int line, const char* what) {
  try {
    size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) parse_fail(line, std::string("bad number for ") + what);
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    parse_fail(line, std::string("bad number for ") + what);
  }
}

}  // namespace

Scene load_scene(std::istream& is) {
  Scene scene;
  std::string line;
  int lineno = 0;

  auto next_line = [&]() -> std::string& {
    if (!std::getline(is, line)) parse_fail(lineno + 1, "unexpected end of file");
    ++lineno;
    return line;
  };

  {
    std::istringstream ss(next_line());
    std::string magic;
    int ver = -1;
    if (!(ss >> magic >> ver) || magic != "gsscene") parse_fail(lineno, "missing gsscene header");
    if (ver != 1) fail(ErrorKind::version, "unsupported scene schema_version " + std::to_string(ver));
    scene.schema_version = ver;
  }
  {
    std::istringstream ss(next_line());
    std::string key;
    if (!(ss >> key >> scene.sh_bands) || key != "sh_bands") parse_fail(lineno, "expected sh_bands");
  }
  {
    std::istringstream ss(next_line());
    std::string key, a, b, c;
    if (!(ss >> key >> a >> b >> c) || key != "background") parse_fail(lineno, "expected background");
    scene.background = {parse_double(a, lineno, "background"), parse_double(b, lineno, "background"),
                        parse_double(c, lineno, "background")};
  }
  size_t count = 0;
  {
    std::istringstream ss(next_line());
    std::string key;
    long long c = -1;
    if (!(ss >> key >> c) || key != "count" || c < 0) parse_fail(lineno, "expected count");
    count = size_t(c);
  }
  const int rest_rows = std::max(0, scene.sh_bands - 1);
  scene.prims.resize(count);
  for (size_t i = 0; i < count; ++i) {
    std::istringstream ss(next_line());
    std::vector<std::string> toks;
    for (std::string t; ss >> t;) toks.push_back(t);
    const size_t expect = 1 + 3 + 4 + 3 + 1 + 3 + size_t(rest_rows) * 3 + 1;
    if (toks.size() != expect || toks[0] != "p")
      parse_fail(lineno, "primitive record has wrong field count");
    size_t k = 1;
    GaussianPrimitive& p = scene.prims[i];
    for (int c = 0; c < 3; ++c) p.mean[c] = parse_double(toks[k++], lineno, "mean");
    for (int c = 0; c < 4; ++c) p.rotation[c] = parse_double(toks[k++], lineno, "rotation");
    for (int c = 0; c < 3; ++c) p.scale[c] = parse_double(toks[k++], lineno, "scale");
    p.opacity = parse_double(toks[k++], lineno, "opacity");
    for (int c = 0; c < 3; ++c) p.sh_dc[c] = parse_double(toks[k++], lineno, "sh_dc");
    p.sh_rest.resize(size_t(rest_rows));
    for (int r = 0; r < rest_rows; ++r)
      for (int c = 0; c < 3; ++c) p.sh_rest[size_t(r)][c] = parse_double(toks[k++], lineno, "sh_rest");
    try {
      p.region = region_from_name(toks[k]);
    } catch (const Error&) {
      parse_fail(lineno, "unknown region label: " + toks[k]);
    }
  }
  validate_scene(scene);
  return scene;
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open scene file: " + path);
  return load_scene(is);
}

std::vector<int> select_region(const Scene& scene, const std::vector<std::string>& labels) {
  if (labels.empty()) fail(ErrorKind::invalid_argument, "select_region: no labels given");
  bool all = false;
  std::set<Region> want;
  for (const auto& l : labels) {
    if (l == "all") {
      all = true;
      continue;
    }
    want.insert(region_from_name(l));
  }
  std::vector<int> out;
  for (size_t i = 0; i < scene.prims.size(); ++i)
    if (all || want.count(scene.prims[i].region)) out.push_back(int(i));
  return out;
}

}  // namespace gs
