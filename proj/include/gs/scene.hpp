#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gs/common.hpp"

namespace gs {

enum class Region { eyes, forehead, nose, lips, other };

const char* region_name(Region r);
Region region_from_name(const std::string& name);

struct GaussianPrimitive {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector4d rotation{1, 0, 0, 0};  // w x y z, unit
  Eigen::Vector3d scale{1, 1, 1};        // strictly positive
  double opacity = 1.0;                  // [0,1]
  Eigen::Vector3d sh_dc = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> sh_rest;  // (bands-1) RGB rows
  Region region = Region::other;
};

struct Scene {
  int schema_version = 1;
  int sh_bands = 1;  // 1..4
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  std::vector<GaussianPrimitive> prims;
};

enum class Layout { blob, head_like };

// Throws Error{validation} naming the first offending primitive index.
void validate_scene(const Scene& scene);

Scene synth_scene(std::uint64_t seed, int n, Layout layout);

void save_scene(const Scene& scene, std::ostream& os);
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(std::istream& is);
Scene load_scene(const std::string& path);

// Sorted unique primitive indices whose region label is in `labels`;
// the label "all" selects every primitive.
std::vector<int> select_region(const Scene& scene, const std::vector<std::string>& labels);

// Flat view of one color-like parameter block for a set of primitives,
// with enough bookkeeping to scatter values back.
struct ColorTensor {
  Eigen::MatrixXd values;     // rows x 3
  Eigen::MatrixXd reference;  // frozen copy of the initial values
  std::vector<int> index_map; // row -> primitive index
};

}  // namespace gs
