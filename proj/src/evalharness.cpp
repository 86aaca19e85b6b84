#include "gs/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

namespace gs {

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return 1.0 - cosine_similarity(a, b);
}

int rank_of(const Gallery& gallery, const Eigen::VectorXd& query, const std::string& true_id) {
  if (gallery.entries.empty()) fail(ErrorKind::invalid_argument, "rank_of: empty gallery");
  std::vector<double> dist(gallery.entries.size());
  bool seen = false;
  for (size_t i = 0; i < gallery.entries.size(); ++i) {
    dist[i] = cosine_distance(query, gallery.entries[i].e);
    seen = seen || gallery.entries[i].id == true_id;
  }
  if (!seen) fail(ErrorKind::invalid_argument, "rank_of: identity not in gallery: " + true_id);
  int best = 0;
  bool have = false;
  for (size_t p = 0; p < gallery.entries.size(); ++p) {
    if (gallery.entries[p].id != true_id) continue;
    int rank = 1;
    for (size_t j = 0; j < gallery.entries.size(); ++j) {
      if (j == p) continue;
      if (dist[j] < dist[p] || (dist[j] == dist[p] && j < p)) ++rank;
    }
    if (!have || rank < best) {
      best = rank;
      have = true;
    }
  }
  return best;
}

double accuracy_at_k(const std::vector<int>& ranks, int k) {
  if (k < 1) fail(ErrorKind::invalid_argument, "accuracy_at_k: k must be >= 1");
  if (ranks.empty()) fail(ErrorKind::invalid_argument, "accuracy_at_k: no ranks");
  size_t hit = 0;
  for (int r : ranks)
    if (r <= k) ++hit;
  return double(hit) / double(ranks.size());
}

EerResult calibrate_eer(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty())
    fail(ErrorKind::invalid_argument, "calibrate_eer: need both positive and negative scores");
  std::set<double> cand_set(pos.begin(), pos.end());
  cand_set.insert(neg.begin(), neg.end());
  std::vector<double> cand(cand_set.begin(), cand_set.end());
  if (cand.size() == 1) {
    const double tau = cand[0];
    double far = 0, frr = 0;
    for (double s : neg) far += s >= tau ? 1.0 : 0.0;
    for (double s : pos) frr += s < tau ? 1.0 : 0.0;
    far /= double(neg.size());
    frr /= double(pos.size());
    return {tau, (far + frr) / 2.0, far, frr};
  }
  cand.push_back(cand.back() + 1.0);  // sentinel above all scores

  auto far_at = [&](double tau) {
    size_t c = 0;
    for (double s : neg)
      if (s >= tau) ++c;
    return double(c) / double(neg.size());
  };
  auto frr_at = [&](double tau) {
    size_t c = 0;
    for (double s : pos)
      if (s < tau) ++c;
    return double(c) / double(pos.size());
  };

  EerResult best;
  double best_abs = std::numeric_limits<double>::infinity();
  std::vector<double> fars(cand.size()), frrs(cand.size());
  for (size_t i = 0; i < cand.size(); ++i) {
    fars[i] = far_at(cand[i]);
    frrs[i] = frr_at(cand[i]);
    const double d = fars[i] - frrs[i];
    if (std::abs(d) < best_abs) {
      best_abs = std::abs(d);
      best = {cand[i], (fars[i] + frrs[i]) / 2.0, fars[i], frrs[i]};
    }
  }
  for (size_t i = 0; i + 1 < cand.size(); ++i) {
    const double d0 = fars[i] - frrs[i];
    const double d1 = fars[i + 1] - frrs[i + 1];
    if (d0 > 0 && d1 < 0) {
      const double t = d0 / (d0 - d1);
      const double tau = cand[i] + t * (cand[i + 1] - cand[i]);
      const double far = fars[i] + t * (fars[i + 1] - fars[i]);
      const double frr = frrs[i] + t * (frrs[i + 1] - frrs[i]);
      if (std::abs(far - frr) < best_abs) {
        best_abs = std::abs(far - frr);
        best = {tau, (far + frr) / 2.0, far, frr};
      }
    }
  }
  return best;
}

bool matches_identity(const Gallery& gallery, const Eigen::VectorXd& e, const std::string& id,
                      double tau) {
  bool seen = false;
  double bestv = -2.0;
  for (const auto& g : gallery.entries) {
    if (g.id != id) continue;
    seen = true;
    bestv = std::max(bestv, cosine_similarity(e, g.e));
  }
  if (!seen) fail(ErrorKind::invalid_argument, "matches_identity: identity not in gallery: " + id);
  return bestv >= tau;
}

double match_rate(const Gallery& gallery, const std::vector<Query>& queries, double tau) {
  if (queries.empty()) fail(ErrorKind::invalid_argument, "match_rate: no queries");
  size_t hit = 0;
  for (const auto& q : queries)
    if (matches_identity(gallery, q.e, q.id, tau)) ++hit;
  return double(hit) / double(queries.size());
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;  // (K1*L)^2, L=1
constexpr double kSsimC2 = 0.03 * 0.03;

const double* ssim_kernel() {
  static double k[kSsimWindow * kSsimWindow];
  static bool init = false;
  if (!init) {
    double sum = 0;
    const int half = kSsimWindow / 2;
    for (int y = 0; y < kSsimWindow; ++y)
      for (int x = 0; x < kSsimWindow; ++x) {
        const double dx = x - half, dy = y - half;
        k[y * kSsimWindow + x] = std::exp(-(dx * dx + dy * dy) / (2 * kSsimSigma * kSsimSigma));
        sum += k[y * kSsimWindow + x];
      }
    for (double& v : k) v /= sum;
    init = true;
  }
  return k;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.width < kSsimWindow || a.height < kSsimWindow)
    fail(ErrorKind::invalid_argument, "ssim: images must match and be at least 11x11");
  const double* ker = ssim_kernel();
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    size_t count = 0;
    for (int y = 0; y + kSsimWindow <= a.height; ++y) {
      for (int x = 0; x + kSsimWindow <= a.width; ++x) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int wy = 0; wy < kSsimWindow; ++wy)
          for (int wx = 0; wx < kSsimWindow; ++wx) {
            const double w = ker[wy * kSsimWindow + wx];
            const double va = a.at(y + wy, x + wx, c);
            const double vb = b.at(y + wy, x + wx, c);
            mx += w * va;
            my += w * vb;
            mxx += w * va * va;
            myy += w * vb * vb;
            mxy += w * va * vb;
          }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        const double val = ((2 * mx * my + kSsimC1) * (2 * cov + kSsimC2)) /
                           ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
        acc += val;
        ++count;
      }
    }
    total += acc / double(count);
  }
  return total / 3.0;
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.data.empty())
    fail(ErrorKind::invalid_argument, "psnr: images must match and be non-empty");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

RotationGridReport rotation_grid_report(const Scene& scene, const CameraView& base_view,
                                        const SurrogateEmbedder& emb,
                                        const std::vector<Eigen::VectorXd>& refs,
                                        const ViewpointDistribution& dist, int rows, int cols,
                                        double tau) {
  if (refs.empty()) fail(ErrorKind::invalid_argument, "rotation_grid_report: no references");
  RotationGridReport rep;
  rep.rows = rows;
  rep.cols = cols;
  rep.tau = tau;
  rep.histogram.assign(20, 0);
  const auto grid = grid_viewpoints(dist, rows, cols);
  for (const auto& vp : grid) {
    const CameraView v = rotate_view(base_view, vp.pitch, vp.yaw);
    const Eigen::VectorXd e = embed(emb, align(render(scene, v).image));
    double best = -2.0;
    for (const auto& r : refs) best = std::max(best, cosine_similarity(e, r));
    rep.sims.push_back(best);
    rep.match.push_back(best >= tau ? 1 : 0);
    int bin = int(std::floor((best + 1.0) / 0.1));
    bin = std::clamp(bin, 0, 19);
    ++rep.histogram[size_t(bin)];
  }
  return rep;
}

Protocol build_synthetic_protocol(const ProtocolConfig& cfg, const SurrogateEmbedder& emb,
                                  const CameraView& base_view) {
  if (cfg.n_identities < 1 || cfg.per_id_views < 1)
    fail(ErrorKind::invalid_argument, "protocol: identities and views must be positive");
  Protocol proto;
  proto.per_id_views = cfg.per_id_views;
  for (int i = 0; i < cfg.n_identities; ++i) {
    const std::uint64_t scene_seed = cfg.seed * 1000 + std::uint64_t(i);
    Scene scene = synth_scene(scene_seed, cfg.synth_n, Layout::head_like);
    const std::string id = "id" + std::to_string(i);
    proto.ids.push_back(id);

    for (int v = 0; v < cfg.per_id_views; ++v) {
      rng::Stream vs(cfg.seed, 1000 + std::uint64_t(i), std::uint64_t(v));
      Viewpoint vp;
      vp.pitch = vs.uniform(0, cfg.dist.pitch_lo, cfg.dist.pitch_hi);
      vp.yaw = vs.uniform(1, cfg.dist.yaw_lo, cfg.dist.yaw_hi);
      Scene jittered = scene;
      if (cfg.jitter > 0) {
        rng::Stream ns(cfg.seed, 2000 + std::uint64_t(i), std::uint64_t(v));
        for (size_t p = 0; p < jittered.prims.size(); ++p)
          for (int c = 0; c < 3; ++c)
            jittered.prims[p].sh_dc[c] += cfg.jitter * ns.normal(3 * p + std::uint64_t(c));
      }
      const CameraView view = rotate_view(base_view, vp.pitch, vp.yaw);
      proto.gallery.entries.push_back({id, embed(emb, align(render(jittered, view).image))});
    }
    proto.scenes.push_back(std::move(scene));
  }
  const auto& es = proto.gallery.entries;
  for (size_t i = 0; i < es.size(); ++i)
    for (size_t j = i + 1; j < es.size(); ++j) {
      const double s = cosine_similarity(es[i].e, es[j].e);
      (es[i].id == es[j].id ? proto.pairs.pos : proto.pairs.neg).push_back(s);
    }
  return proto;
}

std::vector<Eigen::VectorXd> query_embeddings(const Scene& scene, const CameraView& base_view,
                                              const ViewpointDistribution& dist,
                                              std::uint64_t seed, int id_index, int count,
                                              const SurrogateEmbedder& emb) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(size_t(count));
  for (int v = 0; v < count; ++v) {
    rng::Stream vs(seed, 3000 + std::uint64_t(id_index), std::uint64_t(v));
    const double pitch = vs.uniform(0, dist.pitch_lo, dist.pitch_hi);
    const double yaw = vs.uniform(1, dist.yaw_lo, dist.yaw_hi);
    const CameraView view = rotate_view(base_view, pitch, yaw);
    out.push_back(embed(emb, align(render(scene, view).image)));
  }
  return out;
}

void save_gallery(const Gallery& gallery, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::runtime_abort, "cannot open for write: " + path);
  os << "gsgal 1 " << gallery.entries.size() << " " << kEmbedDim << "\n";
  for (const auto& g : gallery.entries) {
    if (g.e.size() != kEmbedDim)
      fail(ErrorKind::invalid_argument, "save_gallery: embedding dimension mismatch");
    os << g.id << "\n";
    float buf[kEmbedDim];
    for (int i = 0; i < kEmbedDim; ++i) buf[i] = float(g.e[i]);
    os.write(reinterpret_cast<const char*>(buf), sizeof buf);
  }
  std::ofstream idx(path + ".idx", std::ios::binary);
  idx << "count " << gallery.entries.size() << "\ndim " << kEmbedDim << "\n";
  for (const auto& g : gallery.entries) idx << g.id << "\n";
  if (!os || !idx) fail(ErrorKind::runtime_abort, "write failed: " + path);
}

Gallery load_gallery(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open gallery: " + path);
  std::string magic;
  int version = 0;
  size_t count = 0;
  int dim = 0;
  is >> magic >> version >> count >> dim;
  if (magic != "gsgal") fail(ErrorKind::parse, "bad gallery header in " + path);
  if (version != 1) fail(ErrorKind::version, "unsupported gallery version in " + path);
  if (dim != kEmbedDim) fail(ErrorKind::parse, "unexpected gallery dim in " + path);
  is.get();
  Gallery g;
  g.entries.resize(count);
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(is, g.entries[i].id))
      fail(ErrorKind::parse, "truncated gallery id in " + path);
    float buf[kEmbedDim];
    is.read(reinterpret_cast<char*>(buf), sizeof buf);
    if (!is) fail(ErrorKind::parse, "truncated gallery payload in " + path);
    g.entries[i].e.resize(kEmbedDim);
    for (int k = 0; k < kEmbedDim; ++k) g.entries[i].e[k] = double(buf[k]);
  }
  return g;
}

void write_report(const std::string& path, std::uint64_t config_hash,
                  const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::runtime_abort, "cannot open for write: " + path);
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)config_hash);
  os << "config_hash " << hex << "\n";
  for (const auto& [k, v] : rows) os << k << " " << v << "\n";
  if (!os) fail(ErrorKind::runtime_abort, "write failed: " + path);
}

}  // namespace gs
