#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <vector>

#include "gs/camera.hpp"
#include "gs/embedder.hpp"
#include "gs/evalharness.hpp"
#include "gs/renderer.hpp"
#include "gs/scene.hpp"

using namespace gs;

namespace {

Eigen::VectorXd unit(std::initializer_list<double> v) {
  Eigen::VectorXd e(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double x : v) e[i++] = x;
  return e.normalized();
}

int brute_rank(const Gallery& g, const Eigen::VectorXd& q, const std::string& id) {
  std::vector<size_t> order(g.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return cosine_distance(q, g.entries[a].e) < cosine_distance(q, g.entries[b].e);
  });
  for (size_t r = 0; r < order.size(); ++r)
    if (g.entries[order[r]].id == id) return int(r) + 1;
  return -1;
}

Image fill(int w, int h, double r, double g, double b) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

}  // namespace

TEST_CASE("cosine_distance endpoints") {
  Eigen::VectorXd a = unit({1, 0, 0, 0});
  Eigen::VectorXd b = unit({0, 1, 0, 0});
  CHECK(cosine_distance(a, a) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_distance(a, -a) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cosine_distance(a, b) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rank_of basics and tie handling") {
  Gallery g;
  g.entries.push_back({"alice", unit({1, 0, 0})});
  g.entries.push_back({"bob", unit({0, 1, 0})});
  g.entries.push_back({"carol", unit({0, 0, 1})});
  g.entries.push_back({"bob", unit({1, 1, 0})});

  CHECK(rank_of(g, unit({1, 0, 0}), "alice") == 1);
  CHECK(rank_of(g, unit({0, 1, 0}), "carol") > 1);
  CHECK_THROWS_AS(rank_of(g, unit({1, 0, 0}), "dave"), Error);

  // all entries equidistant from the query: stable order decides
  Gallery ties;
  ties.entries.push_back({"x", unit({1, 0, 0, 0})});
  ties.entries.push_back({"y", unit({0, 1, 0, 0})});
  ties.entries.push_back({"z", unit({0, 0, 1, 0})});
  Eigen::VectorXd q = unit({0, 0, 0, 1});
  CHECK(rank_of(ties, q, "x") == 1);
  CHECK(rank_of(ties, q, "y") == 2);
  CHECK(rank_of(ties, q, "z") == 3);
}

TEST_CASE("rank_of agrees with the brute-force oracle") {
  rng::Stream st(77);
  std::uint64_t word = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + int(st.uniform(word++, 0.0, 199.0));
    const int dim = 8;
    Gallery g;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd e(dim);
      for (int d = 0; d < dim; ++d) e[d] = st.normal(word++);
      e.normalize();
      g.entries.push_back({"id" + std::to_string(int(st.uniform(word++, 0.0, 6.0))), e});
    }
    Eigen::VectorXd q(dim);
    for (int d = 0; d < dim; ++d) q[d] = st.normal(word++);
    q.normalize();
    const std::string& target = g.entries[size_t(st.uniform(word++, 0.0, double(n - 1)))].id;
    CHECK(rank_of(g, q, target) == brute_rank(g, q, target));
  }
}

TEST_CASE("accuracy_at_k counts and stays monotone") {
  std::vector<int> perfect{1, 1, 1, 1};
  CHECK(accuracy_at_k(perfect, 1) == 1.0);
  CHECK(accuracy_at_k(perfect, 50) == 1.0);

  std::vector<int> mixed{1, 3, 7};
  CHECK(accuracy_at_k(mixed, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(accuracy_at_k(mixed, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(accuracy_at_k(mixed, 7) == 1.0);

  double prev = 0;
  for (int k = 1; k <= 10; ++k) {
    double a = accuracy_at_k(mixed, k);
    CHECK(a >= prev);
    prev = a;
  }
  CHECK_THROWS_AS(accuracy_at_k({}, 1), Error);
}

TEST_CASE("calibrate_eer separable scores give zero error") {
  EerResult r = calibrate_eer({0.8, 0.9}, {0.1, 0.2});
  CHECK(r.eer == 0.0);
  CHECK(r.far == 0.0);
  CHECK(r.frr == 0.0);
  CHECK(r.tau > 0.2);
  CHECK(r.tau <= 0.8 + 1e-12);
}

TEST_CASE("calibrate_eer crossing matches an exhaustive scan") {
  std::vector<double> pos{0.6, 0.4}, neg{0.5, 0.3};
  EerResult r = calibrate_eer(pos, neg);
  CHECK(r.eer == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.tau == doctest::Approx(0.5).epsilon(1e-12));

  double best = 1e9, best_eer = 0;
  for (int i = 0; i <= 10000; ++i) {
    double tau = i * 1e-4;
    double far = 0, frr = 0;
    for (double s : neg) far += s >= tau ? 1 : 0;
    for (double s : pos) frr += s < tau ? 1 : 0;
    far /= double(neg.size());
    frr /= double(pos.size());
    if (std::abs(far - frr) < best) {
      best = std::abs(far - frr);
      best_eer = (far + frr) / 2;
    }
  }
  CHECK(r.eer == doctest::Approx(best_eer).epsilon(1e-9));
}

TEST_CASE("calibrate_eer degenerate inputs") {
  EerResult same = calibrate_eer({0.5, 0.5}, {0.5, 0.5});
  CHECK(same.tau == 0.5);
  CHECK(same.eer == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(calibrate_eer({}, {0.5}), Error);
  CHECK_THROWS_AS(calibrate_eer({0.5}, {}), Error);
}

TEST_CASE("calibrate_eer balances the two error rates") {
  rng::Stream st(13);
  std::uint64_t word = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const int np = 5 + int(st.uniform(word++, 0.0, 95.0));
    const int nn = 5 + int(st.uniform(word++, 0.0, 95.0));
    std::vector<double> pos(np), neg(nn);
    for (double& s : pos) s = 0.3 + 0.7 * st.uniform(word++);
    for (double& s : neg) s = 0.7 * st.uniform(word++);
    EerResult r = calibrate_eer(pos, neg);
    CHECK(std::abs(r.far - r.frr) <= 1.0 / double(std::max(np, nn)) + 1e-6);
  }
}

TEST_CASE("match_rate self and pushed-below cases") {
  Gallery g;
  g.entries.push_back({"a", unit({1, 0, 0})});
  g.entries.push_back({"a", unit({1, 0.2, 0})});
  g.entries.push_back({"b", unit({0, 1, 0})});

  std::vector<Query> self;
  for (const auto& e : g.entries) self.push_back({e.id, e.e});
  CHECK(match_rate(g, self, 1.0 - 1e-9) == 1.0);
  CHECK(match_rate(g, self, 0.2) == 1.0);

  std::vector<Query> far_away{{"a", unit({0, 0, 1})}, {"b", unit({0, 0, 1})}};
  CHECK(match_rate(g, far_away, 0.5) == 0.0);

  CHECK_THROWS_AS(match_rate(g, {{"nobody", unit({1, 0, 0})}}, 0.5), Error);
}

TEST_CASE("match_rate agrees with a hand check on mixed outcomes") {
  Gallery g;
  g.entries.push_back({"a", unit({1, 0, 0})});
  g.entries.push_back({"a", unit({0.8, 0.6, 0})});
  g.entries.push_back({"b", unit({0, 1, 0})});
  const double tau = 0.9;

  std::vector<Query> qs{
      {"a", unit({1, 0.1, 0})},   // best a-sim ~0.995 -> match
      {"a", unit({0, 0, 1})},     // orthogonal to both a refs -> no match
      {"b", unit({0.1, 1, 0})},   // ~0.995 -> match
      {"b", unit({1, 0, 0})},     // sim 0 to b -> no match
  };
  int brute = 0;
  for (const auto& q : qs) {
    double best = -2;
    for (const auto& e : g.entries)
      if (e.id == q.id) best = std::max(best, cosine_similarity(q.e, e.e));
    if (best >= tau) ++brute;
  }
  CHECK(brute == 2);
  CHECK(match_rate(g, qs, tau) == doctest::Approx(0.5).epsilon(1e-15));

  CHECK(matches_identity(g, qs[0].e, "a", tau));
  CHECK(!matches_identity(g, qs[1].e, "a", tau));
}

TEST_CASE("ssim analytic cases") {
  Scene s = synth_scene(5, 80, Layout::head_like);
  Image img = render(s, default_frontal(48, 48)).image;
  CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));

  Image negated = img;
  for (double& v : negated.data) v = 1.0 - v;
  CHECK(ssim(img, negated) < 0.5);

  Image c1 = fill(32, 32, 0.4, 0.4, 0.4);
  CHECK(ssim(c1, c1) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(ssim(img, negated) == doctest::Approx(ssim(negated, img)).epsilon(1e-12));

  Image small = fill(16, 16, 0.5, 0.5, 0.5);
  CHECK_THROWS_AS(ssim(img, small), Error);
}

TEST_CASE("psnr analytic cases") {
  Image a = fill(24, 24, 0.3, 0.3, 0.3);
  CHECK(std::isinf(psnr(a, a)));

  Image b = fill(24, 24, 0.4, 0.4, 0.4);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

  Image cb(16, 16), cbi(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = (x + y) % 2 ? 1.0 : 0.0;
        cb.at(y, x, c) = v;
        cbi.at(y, x, c) = 1.0 - v;
      }
  CHECK(psnr(cb, cbi) == 0.0);

  CHECK_THROWS_AS(psnr(a, cb), Error);
}

TEST_CASE("rotation grid self-similarity at the reference viewpoint") {
  Scene s = synth_scene(301, 150, Layout::head_like);
  CameraView view = default_frontal(48, 48);
  SurrogateEmbedder emb = make_embedder(EmbedderArch::A, 11);
  Eigen::VectorXd e_ref = reference_embedding(s, view, emb);

  RotationGridReport r =
      rotation_grid_report(s, view, emb, {e_ref}, {0.0, 0.0, 0.0, 0.0}, 1, 1, 0.5);
  REQUIRE(r.rows == 1);
  REQUIRE(r.cols == 1);
  REQUIRE(r.sims.size() == 1);
  CHECK(std::abs(r.sims[0] - 1.0) < 1e-6);
  CHECK(r.match[0] == 1);

  RotationGridReport g =
      rotation_grid_report(s, view, emb, {e_ref}, {-0.8, 0.8, -0.8, 0.8}, 5, 5, 0.5);
  REQUIRE(g.sims.size() == 25);
  REQUIRE(g.match.size() == 25);
  REQUIRE(g.histogram.size() == 20);
  int total = 0;
  for (int c : g.histogram) total += c;
  CHECK(total == 25);
  for (size_t i = 0; i < g.sims.size(); ++i)
    CHECK((g.match[i] == 1) == (g.sims[i] >= g.tau));
}

TEST_CASE("synthetic protocol separates identities") {
  ProtocolConfig cfg;
  cfg.n_identities = 4;
  cfg.per_id_views = 6;
  cfg.synth_n = 200;
  SurrogateEmbedder emb = make_embedder(EmbedderArch::A, 11);
  Protocol p = build_synthetic_protocol(cfg, emb, default_frontal(48, 48));

  REQUIRE(int(p.gallery.entries.size()) == cfg.n_identities * cfg.per_id_views);
  REQUIRE(int(p.ids.size()) == cfg.n_identities);
  REQUIRE(!p.pairs.pos.empty());
  REQUIRE(!p.pairs.neg.empty());
  for (const auto& e : p.gallery.entries) CHECK(std::abs(e.e.norm() - 1.0) < 1e-6);

  double mp = std::accumulate(p.pairs.pos.begin(), p.pairs.pos.end(), 0.0) /
              double(p.pairs.pos.size());
  double mn = std::accumulate(p.pairs.neg.begin(), p.pairs.neg.end(), 0.0) /
              double(p.pairs.neg.size());
  CHECK(mp - mn > 0.05);

  // deterministic rebuild
  Protocol q = build_synthetic_protocol(cfg, emb, default_frontal(48, 48));
  REQUIRE(q.pairs.pos.size() == p.pairs.pos.size());
  for (size_t i = 0; i < p.pairs.pos.size(); ++i) CHECK(q.pairs.pos[i] == p.pairs.pos[i]);
}

TEST_CASE("zero jitter at a fixed viewpoint gives perfect positives") {
  ProtocolConfig cfg;
  cfg.n_identities = 2;
  cfg.per_id_views = 3;
  cfg.synth_n = 120;
  cfg.jitter = 0.0;
  cfg.dist = {0.0, 0.0, 0.0, 0.0};
  SurrogateEmbedder emb = make_embedder(EmbedderArch::A, 11);
  Protocol p = build_synthetic_protocol(cfg, emb, default_frontal(48, 48));
  for (double s : p.pairs.pos) CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("query embeddings are seeded apart from the gallery") {
  Scene s = synth_scene(42000, 150, Layout::head_like);
  CameraView view = default_frontal(48, 48);
  SurrogateEmbedder emb = make_embedder(EmbedderArch::A, 11);
  ViewpointDistribution dist{-0.5, 0.5, -0.5, 0.5};

  auto a = query_embeddings(s, view, dist, 42, 0, 5, emb);
  auto b = query_embeddings(s, view, dist, 42, 0, 5, emb);
  REQUIRE(a.size() == 5);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() == 0.0);

  auto c = query_embeddings(s, view, dist, 42, 1, 5, emb);
  CHECK((a[0] - c[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("gallery files round trip at float precision") {
  Gallery g;
  rng::Stream st(19);
  for (int i = 0; i < 7; ++i) {
    Eigen::VectorXd e(kEmbedDim);
    for (int d = 0; d < kEmbedDim; ++d) e[d] = st.normal(std::uint64_t(i * kEmbedDim + d));
    e.normalize();
    g.entries.push_back({"person_" + std::to_string(i % 3), e});
  }
  save_gallery(g, "gallery_roundtrip.bin");
  Gallery back = load_gallery("gallery_roundtrip.bin");
  std::remove("gallery_roundtrip.bin");

  REQUIRE(back.entries.size() == g.entries.size());
  for (size_t i = 0; i < g.entries.size(); ++i) {
    CHECK(back.entries[i].id == g.entries[i].id);
    CHECK((back.entries[i].e - g.entries[i].e).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("reports are deterministic") {
  std::vector<std::pair<std::string, std::string>> rows{{"margin", "0.07"}, {"eer", "0.01"}};
  write_report("report_a.txt", 12345, rows);
  write_report("report_b.txt", 12345, rows);
  std::ifstream f1("report_a.txt"), f2("report_b.txt");
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  std::remove("report_a.txt");
  std::remove("report_b.txt");
  CHECK(b1 == b2);
  CHECK(b1.find("margin") != std::string::npos);
  CHECK(b1.find("0000000000003039") != std::string::npos);  // 12345 in hex
}
