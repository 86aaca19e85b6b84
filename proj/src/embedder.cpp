#include "gs/embedder.hpp"

#include <cmath>

namespace gs {

SurrogateEmbedder make_embedder(EmbedderArch arch, std::uint64_t seed) {
  SurrogateEmbedder e;
  e.arch = arch;
  e.seed = seed;
  if (arch == EmbedderArch::A) {
    e.pool = 8;
    e.hidden = 1024;
  } else {
    e.pool = 16;
    e.hidden = 768;
  }
  e.grid = kAlignSize / e.pool;
  e.in_dim = e.grid * e.grid * 3;

  const double s1 = 1.0 / std::sqrt(double(e.in_dim));
  const double s2 = 1.0 / std::sqrt(double(e.hidden));
  const std::uint64_t arch_tag = arch == EmbedderArch::A ? 0xA0 : 0xB0;
  rng::Stream w1(seed, arch_tag, 1), bs1(seed, arch_tag, 2), w2(seed, arch_tag, 3),
      bs2(seed, arch_tag, 4);

  e.W1.resize(e.hidden, e.in_dim);
  for (int r = 0; r < e.hidden; ++r)
    for (int c = 0; c < e.in_dim; ++c)
      e.W1(r, c) = s1 * w1.normal(std::uint64_t(r) * std::uint64_t(e.in_dim) + std::uint64_t(c));
  e.b1.resize(e.hidden);
  for (int r = 0; r < e.hidden; ++r) e.b1[r] = s1 * bs1.normal(std::uint64_t(r));
  e.W2.resize(kEmbedDim, e.hidden);
  for (int r = 0; r < kEmbedDim; ++r)
    for (int c = 0; c < e.hidden; ++c)
      e.W2(r, c) = s2 * w2.normal(std::uint64_t(r) * std::uint64_t(e.hidden) + std::uint64_t(c));
  e.b2.resize(kEmbedDim);
  for (int r = 0; r < kEmbedDim; ++r) e.b2[r] = s2 * bs2.normal(std::uint64_t(r));
  return e;
}

namespace {

struct ResampleTap {
  int i0, i1;
  double w0, w1;
};

// Half-pixel-center bilinear taps from src length n to kAlignSize.
std::vector<ResampleTap> resample_taps(int n) {
  std::vector<ResampleTap> taps(kAlignSize);
  const double scale = double(n) / double(kAlignSize);
  for (int i = 0; i < kAlignSize; ++i) {
    double src = (double(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > double(n - 1)) src = double(n - 1);
    int i0 = int(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    int i1 = std::min(i0 + 1, n - 1);
    double f = src - double(i0);
    taps[size_t(i)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Image align(const Image& img) {
  if (img.width <= 0 || img.height <= 0)
    fail(ErrorKind::invalid_argument, "align: empty image");
  const int side = std::min(img.width, img.height);
  const int ox = (img.width - side) / 2;
  const int oy = (img.height - side) / 2;
  const auto taps = resample_taps(side);
  Image out(kAlignSize, kAlignSize);
  for (int y = 0; y < kAlignSize; ++y) {
    const ResampleTap& ty = taps[size_t(y)];
    for (int x = 0; x < kAlignSize; ++x) {
      const ResampleTap& tx = taps[size_t(x)];
      for (int c = 0; c < 3; ++c) {
        const double v00 = img.at(oy + ty.i0, ox + tx.i0, c);
        const double v01 = img.at(oy + ty.i0, ox + tx.i1, c);
        const double v10 = img.at(oy + ty.i1, ox + tx.i0, c);
        const double v11 = img.at(oy + ty.i1, ox + tx.i1, c);
        out.at(y, x, c) = ty.w0 * (tx.w0 * v00 + tx.w1 * v01) + ty.w1 * (tx.w0 * v10 + tx.w1 * v11);
      }
    }
  }
  return out;
}

Image align_backward(int orig_width, int orig_height, const Image& dL_dAligned) {
  if (dL_dAligned.width != kAlignSize || dL_dAligned.height != kAlignSize)
    fail(ErrorKind::invalid_argument, "align_backward: gradient must be 112x112");
  const int side = std::min(orig_width, orig_height);
  const int ox = (orig_width - side) / 2;
  const int oy = (orig_height - side) / 2;
  const auto taps = resample_taps(side);
  Image out(orig_width, orig_height);
  for (int y = 0; y < kAlignSize; ++y) {
    const ResampleTap& ty = taps[size_t(y)];
    for (int x = 0; x < kAlignSize; ++x) {
      const ResampleTap& tx = taps[size_t(x)];
      for (int c = 0; c < 3; ++c) {
        const double g = dL_dAligned.at(y, x, c);
        out.at(oy + ty.i0, ox + tx.i0, c) += ty.w0 * tx.w0 * g;
        out.at(oy + ty.i0, ox + tx.i1, c) += ty.w0 * tx.w1 * g;
        out.at(oy + ty.i1, ox + tx.i0, c) += ty.w1 * tx.w0 * g;
        out.at(oy + ty.i1, ox + tx.i1, c) += ty.w1 * tx.w1 * g;
      }
    }
  }
  return out;
}

Eigen::VectorXd embed(const SurrogateEmbedder& emb, const Image& aligned, EmbedCache* cache) {
  if (aligned.width != kAlignSize || aligned.height != kAlignSize)
    fail(ErrorKind::invalid_argument, "embed: input must be an aligned 112x112 image");
  const int g = emb.grid, p = emb.pool;
  Eigen::VectorXd pooled(emb.in_dim);
  const double inv = 1.0 / double(p * p);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int y = gy * p; y < (gy + 1) * p; ++y)
          for (int x = gx * p; x < (gx + 1) * p; ++x) acc += aligned.at(y, x, c);
        pooled[(gy * g + gx) * 3 + c] = acc * inv;
      }
  Eigen::VectorXd z1 = emb.W1 * pooled + emb.b1;
  Eigen::VectorXd h = z1.array().tanh();
  Eigen::VectorXd z2 = emb.W2 * h + emb.b2;
  const double nrm = z2.norm();
  if (!(nrm > 1e-12)) fail(ErrorKind::runtime_abort, "embed: degenerate embedding norm");
  if (cache) {
    cache->pooled = pooled;
    cache->h = h;
    cache->z2 = z2;
    cache->norm = nrm;
  }
  return z2 / nrm;
}

Image embed_backward(const SurrogateEmbedder& emb, const EmbedCache& cache,
                     const Eigen::VectorXd& dL_dE) {
  if (dL_dE.size() != kEmbedDim)
    fail(ErrorKind::invalid_argument, "embed_backward: gradient dimension mismatch");
  const Eigen::VectorXd ehat = cache.z2 / cache.norm;
  const Eigen::VectorXd dz2 = (dL_dE - ehat * ehat.dot(dL_dE)) / cache.norm;
  const Eigen::VectorXd dh = emb.W2.transpose() * dz2;
  const Eigen::VectorXd dz1 = (1.0 - cache.h.array().square()).matrix().cwiseProduct(dh);
  const Eigen::VectorXd dp = emb.W1.transpose() * dz1;

  const int g = emb.grid, p = emb.pool;
  const double inv = 1.0 / double(p * p);
  Image out(kAlignSize, kAlignSize);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx)
      for (int c = 0; c < 3; ++c) {
        const double v = dp[(gy * g + gx) * 3 + c] * inv;
        for (int y = gy * p; y < (gy + 1) * p; ++y)
          for (int x = gx * p; x < (gx + 1) * p; ++x) out.at(y, x, c) = v;
      }
  return out;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    fail(ErrorKind::invalid_argument, "cosine_similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0) || !(nb > 0))
    fail(ErrorKind::invalid_argument, "cosine_similarity: zero-norm input");
  return a.dot(b) / (na * nb);
}

Eigen::VectorXd reference_embedding(const Scene& scene, const CameraView& view,
                                    const SurrogateEmbedder& emb) {
  return embed(emb, align(render(scene, view).image));
}

}  // namespace gs
