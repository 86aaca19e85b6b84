#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gs/attack.hpp"
#include "gs/camera.hpp"
#include "gs/embedder.hpp"
#include "gs/scene.hpp"

namespace gs {

struct GalleryEntry {
  std::string id;
  Eigen::VectorXd e;
};

struct Gallery {
  std::vector<GalleryEntry> entries;
};

struct ScorePairs {
  std::vector<double> pos, neg;
};

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// 1-based rank of the best same-identity entry under cosine distance,
// stable tie-break by gallery position.
int rank_of(const Gallery& gallery, const Eigen::VectorXd& query, const std::string& true_id);

double accuracy_at_k(const std::vector<int>& ranks, int k);

struct EerResult {
  double tau = 0;
  double eer = 0;
  double far = 0;
  double frr = 0;
};

// Threshold scan over the observed scores plus a sentinel; at a strict
// FAR/FRR sign change the crossing is linearly interpolated. Ties toward
// the lower threshold.
EerResult calibrate_eer(const std::vector<double>& pos, const std::vector<double>& neg);

bool matches_identity(const Gallery& gallery, const Eigen::VectorXd& e, const std::string& id,
                      double tau);

struct Query {
  std::string id;
  Eigen::VectorXd e;
};

double match_rate(const Gallery& gallery, const std::vector<Query>& queries, double tau);

// Mean SSIM (11x11 Gaussian window, sigma 1.5, valid positions, per-channel
// average); inputs must have matching dimensions.
double ssim(const Image& a, const Image& b);

// 10*log10(1/MSE) for [0,1] images; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

struct RotationGridReport {
  int rows = 0, cols = 0;
  double tau = 0;
  std::vector<double> sims;   // row-major, max similarity against the refs
  std::vector<char> match;    // sims >= tau
  std::vector<int> histogram; // 20 bins over [-1,1]
};

RotationGridReport rotation_grid_report(const Scene& scene, const CameraView& base_view,
                                        const SurrogateEmbedder& emb,
                                        const std::vector<Eigen::VectorXd>& refs,
                                        const ViewpointDistribution& dist, int rows, int cols,
                                        double tau);

struct Protocol {
  std::vector<std::string> ids;
  std::vector<Scene> scenes;
  Gallery gallery;
  ScorePairs pairs;
  int per_id_views = 0;
};

struct ProtocolConfig {
  std::uint64_t seed = 42;
  int n_identities = 10;
  int per_id_views = 22;
  double jitter = 0.012;  // photometric dc noise std
  int synth_n = 400;
  ViewpointDistribution dist{-0.7, 0.7, -0.7, 0.7};
  // identification queries are drawn tighter than the verification gallery
  ViewpointDistribution query_dist{-0.5, 0.5, -0.5, 0.5};
};

// Seeded identities rendered over jittered viewpoints with photometric
// noise; pairs collect all same-id / cross-id gallery similarities.
Protocol build_synthetic_protocol(const ProtocolConfig& cfg, const SurrogateEmbedder& emb,
                                  const CameraView& base_view);

// Fresh jittered query renders of one identity (no photometric noise),
// seeded apart from the gallery stream.
std::vector<Eigen::VectorXd> query_embeddings(const Scene& scene, const CameraView& base_view,
                                              const ViewpointDistribution& dist,
                                              std::uint64_t seed, int id_index, int count,
                                              const SurrogateEmbedder& emb);

void save_gallery(const Gallery& gallery, const std::string& path);
Gallery load_gallery(const std::string& path);

// key/value metric lines with a config fingerprint header.
void write_report(const std::string& path, std::uint64_t config_hash,
                  const std::vector<std::pair<std::string, std::string>>& rows);

}  // namespace gs
