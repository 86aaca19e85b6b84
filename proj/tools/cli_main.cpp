#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "gs/attack.hpp"
#include "gs/camera.hpp"
#include "gs/embedder.hpp"
#include "gs/evalharness.hpp"
#include "gs/renderer.hpp"
#include "gs/scene.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;

  std::string scene_file;
  std::uint64_t synth_seed = 1;
  int synth_n = 400;
  gs::Layout synth_layout = gs::Layout::head_like;
  bool synth_seed_set = false;

  int cam_width = 64, cam_height = 64;
  double orbit_radius = 4.0, focal_scale = 1.25;

  struct EmbSpec {
    gs::EmbedderArch arch = gs::EmbedderArch::A;
    std::uint64_t seed = 11;
  };
  std::vector<EmbSpec> embedders;

  gs::AttackConfig attack;
  int attack_sh_bands = 1;

  gs::ProtocolConfig protocol;

  std::vector<int> k_list{1, 50};
  int grid_rows = 5, grid_cols = 5;
  double grid_range = 0.8;
  int query_views = 22;
  bool cross_system = false;
  std::vector<std::string> eval_masked;
  std::vector<int> eval_original_ids;

  int gc_n = 20;
  int gc_res = 32;
  double gc_h = 1e-4;
  std::string gc_corrupt;

  std::uint64_t hash = 0;
};

double jget(const json& j, const char* key, double dflt) {
  return j.contains(key) ? j.at(key).get<double>() : dflt;
}
int jget(const json& j, const char* key, int dflt) {
  return j.contains(key) ? j.at(key).get<int>() : dflt;
}
std::uint64_t jget(const json& j, const char* key, std::uint64_t dflt) {
  return j.contains(key) ? j.at(key).get<std::uint64_t>() : dflt;
}
std::string jget(const json& j, const char* key, const std::string& dflt) {
  return j.contains(key) ? j.at(key).get<std::string>() : dflt;
}

gs::ViewpointDistribution sym_range(double r) { return {-r, r, -r, r}; }

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) gs::fail(gs::ErrorKind::invalid_argument, "cannot open config: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const std::exception& e) {
    gs::fail(gs::ErrorKind::parse, std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  c.seed = jget(j, "seed", std::uint64_t(1));
  c.out_dir = jget(j, "out_dir", std::string("out"));
  c.threads = jget(j, "threads", 1);

  if (j.contains("scene")) {
    const json& s = j.at("scene");
    if (s.contains("file")) c.scene_file = s.at("file").get<std::string>();
    if (s.contains("synth")) {
      const json& sy = s.at("synth");
      c.synth_seed_set = sy.contains("seed");
      c.synth_seed = jget(sy, "seed", c.seed);
      c.synth_n = jget(sy, "n", 400);
      const std::string layout = jget(sy, "layout", std::string("head_like"));
      if (layout == "blob") c.synth_layout = gs::Layout::blob;
      else if (layout == "head_like") c.synth_layout = gs::Layout::head_like;
      else gs::fail(gs::ErrorKind::invalid_argument, "unknown layout: " + layout);
    }
  }
  if (j.contains("camera")) {
    const json& cam = j.at("camera");
    c.cam_width = jget(cam, "width", 64);
    c.cam_height = jget(cam, "height", 64);
    c.orbit_radius = jget(cam, "orbit_radius", 4.0);
    c.focal_scale = jget(cam, "focal_scale", 1.25);
  }
  if (j.contains("embedders")) {
    for (const auto& e : j.at("embedders")) {
      RunConfig::EmbSpec spec;
      const std::string arch = jget(e, "arch", std::string("A"));
      if (arch == "A") spec.arch = gs::EmbedderArch::A;
      else if (arch == "B") spec.arch = gs::EmbedderArch::B;
      else gs::fail(gs::ErrorKind::invalid_argument, "unknown embedder arch: " + arch);
      spec.seed = jget(e, "seed", std::uint64_t(11));
      c.embedders.push_back(spec);
    }
  }

  if (j.contains("attack")) {
    const json& a = j.at("attack");
    c.attack.method = gs::attack_method_from_name(jget(a, "method", std::string("pgd")));
    c.attack.norm = gs::attack_norm_from_name(jget(a, "norm", std::string("linf")));
    c.attack.epsilon = jget(a, "epsilon", 0.1);
    c.attack.t_max = jget(a, "t_max", 300);
    c.attack.k_viewpoints = jget(a, "k_viewpoints", 5);
    c.attack.lambda = jget(a, "lambda", 10.0);
    c.attack.param_class = gs::param_class_from_name(jget(a, "param_class", std::string("dc_color")));
    c.attack.seed = jget(a, "seed", std::uint64_t(7));
    c.attack.tau = jget(a, "tau", 0.5);
    c.attack.step_alpha = jget(a, "step_alpha", 0.0);
    c.attack.ddn_gamma = jget(a, "ddn_gamma", 0.05);
    c.attack.ddn_rho0 = jget(a, "ddn_rho0", 1.0);
    c.attack.dist = sym_range(jget(a, "view_range", 0.5));
    c.attack_sh_bands = jget(a, "sh_bands", 1);
    if (a.contains("region")) {
      c.attack.region.clear();
      for (const auto& r : a.at("region")) c.attack.region.push_back(r.get<std::string>());
    }
  }
  c.attack.threads = c.threads;

  if (j.contains("protocol")) {
    const json& p = j.at("protocol");
    c.protocol.seed = jget(p, "seed", std::uint64_t(42));
    c.protocol.n_identities = jget(p, "n_identities", 10);
    c.protocol.per_id_views = jget(p, "per_id_views", 22);
    c.protocol.jitter = jget(p, "jitter", 0.012);
    c.protocol.synth_n = jget(p, "synth_n", 400);
    c.protocol.dist = sym_range(jget(p, "view_range", 0.7));
    c.protocol.query_dist = sym_range(jget(p, "query_range", 0.5));
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (e.contains("k_list")) {
      c.k_list.clear();
      for (const auto& k : e.at("k_list")) c.k_list.push_back(k.get<int>());
    }
    c.grid_rows = jget(e, "grid_rows", 5);
    c.grid_cols = jget(e, "grid_cols", 5);
    c.grid_range = jget(e, "grid_range", 0.8);
    c.query_views = jget(e, "query_views", 22);
    c.cross_system = e.contains("cross_system") && e.at("cross_system").get<bool>();
    if (e.contains("masked"))
      for (const auto& m : e.at("masked")) c.eval_masked.push_back(m.get<std::string>());
    if (e.contains("original_ids"))
      for (const auto& o : e.at("original_ids")) c.eval_original_ids.push_back(o.get<int>());
  }

  if (j.contains("gradcheck")) {
    const json& g = j.at("gradcheck");
    c.gc_n = jget(g, "n", 20);
    c.gc_res = jget(g, "resolution", 32);
    c.gc_h = jget(g, "h", 1e-4);
    c.gc_corrupt = jget(g, "corrupt", std::string());
  }

  c.hash = gs::fnv1a(j.dump());
  return c;
}

gs::Scene config_scene(const RunConfig& c) {
  if (!c.scene_file.empty()) return gs::load_scene(c.scene_file);
  const std::uint64_t seed = c.synth_seed_set ? c.synth_seed : c.seed;
  return gs::synth_scene(seed, c.synth_n, c.synth_layout);
}

gs::CameraView config_view(const RunConfig& c) {
  return gs::default_frontal(c.cam_width, c.cam_height, c.orbit_radius, c.focal_scale);
}

std::string out_path(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return (fs::path(c.out_dir) / name).string();
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_synth(const RunConfig& c) {
  gs::Scene scene = config_scene(c);
  gs::save_scene(scene, out_path(c, "scene.txt"));
  int hist[5] = {0, 0, 0, 0, 0};
  for (const auto& p : scene.prims) ++hist[int(p.region)];
  std::cout << "primitives " << scene.prims.size() << "\n";
  const char* names[5] = {"eyes", "forehead", "nose", "lips", "other"};
  for (int i = 0; i < 5; ++i) std::cout << names[i] << " " << hist[i] << "\n";
  return 0;
}

int cmd_render(const RunConfig& c, const std::string& view_arg, const std::string& grid_arg) {
  gs::Scene scene = config_scene(c);
  const gs::CameraView base = config_view(c);
  if (!grid_arg.empty()) {
    int rows = 0, cols = 0;
    if (std::sscanf(grid_arg.c_str(), "%dx%d", &rows, &cols) != 2 || rows < 1 || cols < 1)
      gs::fail(gs::ErrorKind::invalid_argument, "bad --grid, expected RxC");
    const auto grid = gs::grid_viewpoints(sym_range(c.grid_range), rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int col = 0; col < cols; ++col) {
        const auto& vp = grid[size_t(r) * size_t(cols) + size_t(col)];
        const gs::CameraView v = gs::rotate_view(base, vp.pitch, vp.yaw);
        char name[64];
        std::snprintf(name, sizeof name, "render_r%d_c%d.ppm", r, col);
        gs::write_ppm(gs::render(scene, v).image, out_path(c, name));
      }
    std::cout << "wrote " << rows * cols << " images\n";
    return 0;
  }
  double pitch = 0, yaw = 0;
  if (!view_arg.empty() && std::sscanf(view_arg.c_str(), "%lf,%lf", &pitch, &yaw) != 2)
    gs::fail(gs::ErrorKind::invalid_argument, "bad --view, expected pitch,yaw");
  const gs::CameraView v = gs::rotate_view(base, pitch, yaw);
  gs::write_ppm(gs::render(scene, v).image, out_path(c, "render.ppm"));
  std::cout << "wrote 1 image\n";
  return 0;
}

int cmd_mask(const RunConfig& c) {
  gs::Scene scene = config_scene(c);
  if (c.attack_sh_bands > 1) gs::set_sh_bands(scene, c.attack_sh_bands);
  const gs::CameraView base = config_view(c);
  const gs::SurrogateEmbedder emb = gs::make_embedder(c.embedders[0].arch, c.embedders[0].seed);
  const Eigen::VectorXd e_ref = gs::reference_embedding(scene, base, emb);

  gs::AttackResult res;
  switch (c.attack.method) {
    case gs::AttackMethod::pgd: res = gs::run_pgd(scene, base, emb, e_ref, c.attack); break;
    case gs::AttackMethod::fgsm: res = gs::run_fgsm(scene, base, emb, e_ref, c.attack); break;
    case gs::AttackMethod::ddn: res = gs::run_ddn(scene, base, emb, e_ref, c.attack); break;
  }
  gs::save_trace(res, out_path(c, "trace.txt"));
  gs::save_scene(res.masked, out_path(c, "masked.txt"));
  std::cout << "final sbar=" << fmt17(res.final_sbar) << " norm=" << fmt17(res.final_norm)
            << " iterations=" << res.iterations << "\n";
  if (res.aborted) {
    std::cerr << "attack aborted on non-finite gradient\n";
    return 3;
  }
  return 0;
}

int cmd_calibrate(const RunConfig& c) {
  const gs::CameraView base = config_view(c);
  const gs::SurrogateEmbedder emb = gs::make_embedder(c.embedders[0].arch, c.embedders[0].seed);
  const gs::Protocol proto = gs::build_synthetic_protocol(c.protocol, emb, base);
  const gs::EerResult eer = gs::calibrate_eer(proto.pairs.pos, proto.pairs.neg);
  gs::save_gallery(proto.gallery, out_path(c, "gallery.bin"));
  gs::write_report(out_path(c, "calibration.txt"), c.hash,
                   {{"tau", fmt17(eer.tau)},
                    {"eer", fmt17(eer.eer)},
                    {"far", fmt17(eer.far)},
                    {"frr", fmt17(eer.frr)},
                    {"pos_pairs", std::to_string(proto.pairs.pos.size())},
                    {"neg_pairs", std::to_string(proto.pairs.neg.size())}});
  std::cout << "tau=" << fmt17(eer.tau) << " eer=" << fmt17(eer.eer) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c) {
  const gs::CameraView base = config_view(c);
  const RunConfig::EmbSpec eval_spec =
      c.cross_system && c.embedders.size() > 1 ? c.embedders[1] : c.embedders[0];
  const gs::SurrogateEmbedder emb = gs::make_embedder(eval_spec.arch, eval_spec.seed);
  const gs::Protocol proto = gs::build_synthetic_protocol(c.protocol, emb, base);
  const gs::EerResult eer = gs::calibrate_eer(proto.pairs.pos, proto.pairs.neg);

  std::vector<std::pair<std::string, std::string>> rows;
  rows.push_back({"tau", fmt17(eer.tau)});
  rows.push_back({"eer", fmt17(eer.eer)});
  rows.push_back({"cross_system", c.cross_system ? "1" : "0"});

  struct Target {
    std::string label;
    gs::Scene scene;
    int id_index;
  };
  std::vector<Target> targets;
  if (c.eval_masked.empty()) {
    for (size_t i = 0; i < proto.scenes.size(); ++i)
      targets.push_back({"unmasked_id" + std::to_string(i), proto.scenes[i], int(i)});
  } else {
    for (size_t m = 0; m < c.eval_masked.size(); ++m) {
      const int id = m < c.eval_original_ids.size() ? c.eval_original_ids[m] : int(m);
      if (id < 0 || id >= int(proto.scenes.size()))
        gs::fail(gs::ErrorKind::invalid_argument, "eval: original id out of protocol range");
      targets.push_back({"masked_id" + std::to_string(id), gs::load_scene(c.eval_masked[m]), id});
    }
  }

  std::vector<int> all_ranks;
  double match_acc = 0, ssim_acc = 0;
  double psnr_acc = 0;
  bool psnr_inf = false;
  size_t n_q = 0;
  for (const auto& t : targets) {
    const std::string& true_id = proto.ids[size_t(t.id_index)];
    const auto queries = gs::query_embeddings(t.scene, base, c.protocol.query_dist,
                                              c.protocol.seed, t.id_index, c.query_views, emb);
    std::vector<gs::Query> qs;
    std::vector<int> ranks;
    for (const auto& e : queries) {
      ranks.push_back(gs::rank_of(proto.gallery, e, true_id));
      qs.push_back({true_id, e});
    }
    const double mrate = gs::match_rate(proto.gallery, qs, eer.tau);
    const gs::Image orig = gs::align(gs::render(proto.scenes[size_t(t.id_index)], base).image);
    const gs::Image got = gs::align(gs::render(t.scene, base).image);
    const double sv = gs::ssim(orig, got);
    const double pv = gs::psnr(orig, got);
    rows.push_back({t.label + "_rank1",
                    fmt17(gs::accuracy_at_k(ranks, 1))});
    for (int k : c.k_list)
      rows.push_back({t.label + "_acc_at_" + std::to_string(k), fmt17(gs::accuracy_at_k(ranks, k))});
    rows.push_back({t.label + "_match_rate", fmt17(mrate)});
    rows.push_back({t.label + "_ssim", fmt17(sv)});
    rows.push_back({t.label + "_psnr", std::isinf(pv) ? "inf" : fmt17(pv)});
    all_ranks.insert(all_ranks.end(), ranks.begin(), ranks.end());
    match_acc += mrate;
    ssim_acc += sv;
    if (std::isinf(pv)) psnr_inf = true;
    else psnr_acc += pv;
    n_q += 1;

    std::vector<Eigen::VectorXd> refs;
    for (const auto& g : proto.gallery.entries)
      if (g.id == true_id) refs.push_back(g.e);
    const auto grid = gs::rotation_grid_report(t.scene, base, emb, refs,
                                               sym_range(c.grid_range), c.grid_rows, c.grid_cols,
                                               eer.tau);
    int matches = 0;
    for (char m : grid.match) matches += m;
    rows.push_back({t.label + "_grid_match",
                    std::to_string(matches) + "/" + std::to_string(grid.match.size())});
  }
  for (int k : c.k_list)
    rows.push_back({"overall_acc_at_" + std::to_string(k), fmt17(gs::accuracy_at_k(all_ranks, k))});
  rows.push_back({"overall_match_rate", fmt17(match_acc / double(n_q))});
  rows.push_back({"overall_ssim", fmt17(ssim_acc / double(n_q))});
  rows.push_back({"overall_psnr", psnr_inf ? "inf" : fmt17(psnr_acc / double(n_q))});

  gs::write_report(out_path(c, "eval_report.txt"), c.hash, rows);
  for (const auto& [k, v] : rows) std::cout << k << " " << v << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& c) {
  gs::Scene scene = gs::synth_scene(c.seed, c.gc_n, gs::Layout::blob);
  gs::set_sh_bands(scene, 2);
  for (size_t i = 0; i < scene.prims.size(); ++i) {
    gs::rng::Stream s(c.seed, 900, i);
    for (int r = 0; r < scene.sh_bands - 1; ++r)
      for (int ch = 0; ch < 3; ++ch)
        scene.prims[i].sh_rest[size_t(r)][ch] = s.uniform(std::uint64_t(3 * r + ch), -0.3, 0.3);
  }
  const gs::CameraView view = gs::default_frontal(c.gc_res, c.gc_res);

  gs::Image wimg(c.gc_res, c.gc_res);
  gs::rng::Stream ws(c.seed, 901);
  for (size_t i = 0; i < wimg.data.size(); ++i) wimg.data[i] = ws.uniform(i, -1.0, 1.0);
  const gs::LossFn loss = [&](const gs::Image& img) {
    double acc = 0;
    for (size_t i = 0; i < img.data.size(); ++i) acc += img.data[i] * wimg.data[i];
    return acc;
  };

  const gs::RenderResult rr = gs::render(scene, view);
  bool ok = true;
  const gs::ParamClass classes[] = {gs::ParamClass::dc_color, gs::ParamClass::ac_color,
                                    gs::ParamClass::position, gs::ParamClass::rotation,
                                    gs::ParamClass::scale,    gs::ParamClass::opacity};
  for (gs::ParamClass pc : classes) {
    Eigen::MatrixXd analytic = gs::render_backward(scene, view, {}, rr.inter, wimg, pc);
    if (!c.gc_corrupt.empty() && c.gc_corrupt == gs::param_class_name(pc))
      analytic.array() += 0.5;
    const Eigen::MatrixXd fd = gs::fd_gradient(scene, view, {}, loss, pc, c.gc_h);
    double worst = 0;
    Eigen::Index wi = 0, wj = 0;
    for (Eigen::Index i = 0; i < fd.rows(); ++i)
      for (Eigen::Index j = 0; j < fd.cols(); ++j) {
        const double rel =
            std::abs(analytic(i, j) - fd(i, j)) / (std::abs(fd(i, j)) + 1e-8);
        if (rel > worst) {
          worst = rel;
          wi = i;
          wj = j;
        }
      }
    std::cout << gs::param_class_name(pc) << " max_rel_err " << fmt17(worst);
    if (worst >= 1e-4) {
      std::cout << " FAIL at primitive " << wi << " component " << wj;
      ok = false;
    }
    std::cout << "\n";
  }

  // full chain: render -> align -> embed -> cosine, dc_color only
  {
    const gs::SurrogateEmbedder emb = gs::make_embedder(c.embedders[0].arch, c.embedders[0].seed);
    const Eigen::VectorXd e_ref = gs::reference_embedding(scene, view, emb);
    const std::vector<gs::Viewpoint> vs{{0.05, -0.08}};
    const gs::EotResult eot = gs::eot_loss_and_grad(scene, view, vs, emb, e_ref, 10.0,
                                                    gs::ParamClass::dc_color, 1, 1.0);
    gs::Scene work = scene;
    double worst = 0;
    for (size_t i = 0; i < scene.prims.size(); ++i)
      for (int ch = 0; ch < 3; ++ch) {
        double& slot = work.prims[i].sh_dc[ch];
        const double orig = slot;
        const double h = c.gc_h * std::max(1.0, std::abs(orig));
        double lp, lm;
        slot = orig + h;
        gs::eot_eval(work, view, vs, emb, e_ref, 10.0, &lp, nullptr, 1);
        slot = orig - h;
        gs::eot_eval(work, view, vs, emb, e_ref, 10.0, &lm, nullptr, 1);
        slot = orig;
        const double fd = (lp - lm) / (2 * h);
        const double rel = std::abs(eot.grad(Eigen::Index(i), ch) - fd) / (std::abs(fd) + 1e-8);
        worst = std::max(worst, rel);
      }
    std::cout << "full_chain_dc max_rel_err " << fmt17(worst) << "\n";
    if (worst >= 1e-3) ok = false;
  }
  if (!ok) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-splat identity masking toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_override, view_arg, grid_arg;
  std::int64_t seed_override = -1;
  app.add_option("--config", config_path, "run config file (JSON)");
  app.add_option("--out", out_override, "output directory override");
  app.add_option("--seed", seed_override, "global seed override");
  app.add_option("--view", view_arg, "pitch,yaw for single render");
  app.add_option("--grid", grid_arg, "RxC viewpoint grid for render");

  auto* synth = app.add_subcommand("synth", "synthesize a scene");
  auto* rendercmd = app.add_subcommand("render", "render view(s)");
  auto* mask = app.add_subcommand("mask", "run the masking attack");
  auto* eval = app.add_subcommand("eval", "evaluate scenes on the synthetic protocol");
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic-vs-fd gradient check");
  auto* calibrate = app.add_subcommand("calibrate", "calibrate the verification threshold");
  for (auto* s : {synth, rendercmd, mask, eval, gradcheck, calibrate}) s->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (c.embedders.empty()) c.embedders.push_back({gs::EmbedderArch::A, 11});
    if (!out_override.empty()) c.out_dir = out_override;
    if (seed_override >= 0) c.seed = std::uint64_t(seed_override);

    if (synth->parsed()) return cmd_synth(c);
    if (rendercmd->parsed()) return cmd_render(c, view_arg, grid_arg);
    if (mask->parsed()) return cmd_mask(c);
    if (eval->parsed()) return cmd_eval(c);
    if (gradcheck->parsed()) return cmd_gradcheck(c);
    if (calibrate->parsed()) return cmd_calibrate(c);
  } catch (const gs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind) {
      case gs::ErrorKind::check_failure: return 1;
      case gs::ErrorKind::invalid_argument:
      case gs::ErrorKind::parse:
      case gs::ErrorKind::version:
      case gs::ErrorKind::validation: return 2;
      case gs::ErrorKind::runtime_abort: return 3;
    }
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
