#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "gs/renderer.hpp"

namespace gs {

constexpr int kAlignSize = 112;
constexpr int kEmbedDim = 512;

enum class EmbedderArch { A, B };

// Seeded stand-in for a pretrained verifier: avg-pool, affine, tanh, affine,
// L2 normalize. Arch A and B differ in pooling and widths.
struct SurrogateEmbedder {
  EmbedderArch arch = EmbedderArch::A;
  std::uint64_t seed = 0;
  int pool = 8;
  int grid = 14;  // kAlignSize / pool
  int in_dim = 588;
  int hidden = 1024;
  Eigen::MatrixXd W1, W2;
  Eigen::VectorXd b1, b2;
};

SurrogateEmbedder make_embedder(EmbedderArch arch, std::uint64_t seed);

// Center-crop to the largest centered square, bilinear-resize to 112x112
// with half-pixel sample centers. Identity for 112x112 input.
Image align(const Image& img);

// Transpose of align for gradient flow back to the rendered image.
Image align_backward(int orig_width, int orig_height, const Image& dL_dAligned);

struct EmbedCache {
  Eigen::VectorXd pooled;
  Eigen::VectorXd h;   // tanh activations
  Eigen::VectorXd z2;  // pre-normalization output
  double norm = 0;
};

Eigen::VectorXd embed(const SurrogateEmbedder& emb, const Image& aligned,
                      EmbedCache* cache = nullptr);

// dL/dEmbedding -> dL/dAlignedImage, including the normalization Jacobian.
Image embed_backward(const SurrogateEmbedder& emb, const EmbedCache& cache,
                     const Eigen::VectorXd& dL_dE);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

Eigen::VectorXd reference_embedding(const Scene& scene, const CameraView& view,
                                    const SurrogateEmbedder& emb);

}  // namespace gs
