#include "gs/attack.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

namespace gs {

AttackNorm attack_norm_from_name(const std::string& s) {
  if (s == "linf") return AttackNorm::linf;
  if (s == "l2") return AttackNorm::l2;
  fail(ErrorKind::invalid_argument, "unknown attack norm: " + s);
}

AttackMethod attack_method_from_name(const std::string& s) {
  if (s == "pgd") return AttackMethod::pgd;
  if (s == "fgsm") return AttackMethod::fgsm;
  if (s == "ddn") return AttackMethod::ddn;
  fail(ErrorKind::invalid_argument, "unknown attack method: " + s);
}

double step_size_from_epsilon(double epsilon) {
  if (!(epsilon > 0)) fail(ErrorKind::invalid_argument, "step size requires epsilon > 0");
  return (0.01 / 0.3) * epsilon;
}

double identity_loss(double s, double lambda) {
  const double x = -2.0 * s * lambda;
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double identity_loss_grad(double s, double lambda) {
  const double x = -2.0 * s * lambda;
  const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return -2.0 * lambda * sig;
}

namespace {

struct ViewEval {
  double loss = 0;
  double sim = 0;
  Eigen::MatrixXd grad;
};

ViewEval eval_one_view(const Scene& scene, const CameraView& base_view, const Viewpoint& vp,
                       const SurrogateEmbedder& emb, const Eigen::VectorXd& e_ref, double lambda,
                       ParamClass pclass, bool want_grad, double loss_scale, size_t view_index) {
  ViewEval out;
  try {
    const CameraView v = rotate_view(base_view, vp.pitch, vp.yaw);
    RenderResult rr = render(scene, v);
    Image al = align(rr.image);
    EmbedCache cache;
    const Eigen::VectorXd e = embed(emb, al, &cache);
    out.sim = cosine_similarity(e, e_ref);
    out.loss = loss_scale * identity_loss(out.sim, lambda);
    if (want_grad) {
      const double dl_ds = loss_scale * identity_loss_grad(out.sim, lambda);
      const Eigen::VectorXd dl_de = dl_ds * (e_ref / e_ref.norm());
      Image dal = embed_backward(emb, cache, dl_de);
      Image dimg = align_backward(v.width, v.height, dal);
      out.grad = render_backward(scene, v, {}, rr.inter, dimg, pclass);
    }
  } catch (const Error& e) {
    fail(e.kind, "view " + std::to_string(view_index) + ": " + e.what());
  }
  return out;
}

std::vector<ViewEval> eval_views(const Scene& scene, const CameraView& base_view,
                                 const std::vector<Viewpoint>& views, const SurrogateEmbedder& emb,
                                 const Eigen::VectorXd& e_ref, double lambda, ParamClass pclass,
                                 bool want_grad, double loss_scale, int threads) {
  std::vector<ViewEval> evals(views.size());
  if (threads > 1 && views.size() > 1) {
    std::vector<std::future<ViewEval>> futs;
    futs.reserve(views.size());
    for (size_t k = 0; k < views.size(); ++k)
      futs.push_back(std::async(std::launch::async, eval_one_view, std::cref(scene),
                                std::cref(base_view), views[k], std::cref(emb), std::cref(e_ref),
                                lambda, pclass, want_grad, loss_scale, k));
    for (size_t k = 0; k < views.size(); ++k) evals[k] = futs[k].get();
  } else {
    for (size_t k = 0; k < views.size(); ++k)
      evals[k] = eval_one_view(scene, base_view, views[k], emb, e_ref, lambda, pclass, want_grad,
                               loss_scale, k);
  }
  return evals;
}

}  // namespace

EotResult eot_loss_and_grad(const Scene& scene, const CameraView& base_view,
                            const std::vector<Viewpoint>& views, const SurrogateEmbedder& emb,
                            const Eigen::VectorXd& e_ref, double lambda, ParamClass pclass,
                            int threads, double loss_scale) {
  if (views.empty()) fail(ErrorKind::invalid_argument, "eot_loss_and_grad: empty view list");
  auto evals =
      eval_views(scene, base_view, views, emb, e_ref, lambda, pclass, true, loss_scale, threads);
  EotResult out;
  const double inv_k = 1.0 / double(views.size());
  out.grad = Eigen::MatrixXd::Zero(Eigen::Index(scene.prims.size()),
                                   param_class_width(pclass, scene.sh_bands));
  for (const auto& ev : evals) {
    out.loss += ev.loss;
    out.sbar += ev.sim;
    out.grad += ev.grad;
  }
  out.loss *= inv_k;
  out.sbar *= inv_k;
  out.grad *= inv_k;
  return out;
}

void eot_eval(const Scene& scene, const CameraView& base_view, const std::vector<Viewpoint>& views,
              const SurrogateEmbedder& emb, const Eigen::VectorXd& e_ref, double lambda,
              double* loss_out, double* sbar_out, int threads) {
  if (views.empty()) fail(ErrorKind::invalid_argument, "eot_eval: empty view list");
  auto evals = eval_views(scene, base_view, views, emb, e_ref, lambda, ParamClass::dc_color, false,
                          1.0, threads);
  double loss = 0, sbar = 0;
  for (const auto& ev : evals) {
    loss += ev.loss;
    sbar += ev.sim;
  }
  if (loss_out) *loss_out = loss / double(views.size());
  if (sbar_out) *sbar_out = sbar / double(views.size());
}

Eigen::VectorXd project_linf(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                             double epsilon) {
  if (theta.size() != theta0.size())
    fail(ErrorKind::invalid_argument, "project_linf: shape mismatch");
  return theta.array()
      .max(theta0.array() - epsilon)
      .min(theta0.array() + epsilon)
      .matrix();
}

Eigen::VectorXd project_l2(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                           double epsilon) {
  if (theta.size() != theta0.size())
    fail(ErrorKind::invalid_argument, "project_l2: shape mismatch");
  const Eigen::VectorXd delta = theta - theta0;
  const double n = delta.norm();
  if (n <= epsilon) return theta;
  return theta0 + delta * (epsilon / n);
}

void apply_param_constraints(Scene& scene, ParamClass pclass, const std::vector<int>& indices) {
  switch (pclass) {
    case ParamClass::opacity:
      for (int i : indices) {
        double& o = scene.prims[size_t(i)].opacity;
        o = std::clamp(o, 0.0, 1.0);
      }
      break;
    case ParamClass::scale:
      for (int i : indices) {
        Eigen::Vector3d& s = scene.prims[size_t(i)].scale;
        for (int c = 0; c < 3; ++c) s[c] = std::max(s[c], 1e-6);
      }
      break;
    case ParamClass::rotation:
      for (int i : indices) {
        Eigen::Vector4d& q = scene.prims[size_t(i)].rotation;
        const double n = q.norm();
        if (n <= 1e-12)
          q = Eigen::Vector4d(1, 0, 0, 0);
        else if (std::abs(n - 1.0) > 1e-12)  // keep already-unit quats bit-stable
          q /= n;
      }
      break;
    default:
      break;
  }
}

Eigen::VectorXd extract_params(const Scene& scene, ParamClass pclass,
                               const std::vector<int>& indices) {
  const int w = param_class_width(pclass, scene.sh_bands);
  Eigen::VectorXd out(Eigen::Index(indices.size()) * w);
  Eigen::Index k = 0;
  for (int i : indices) {
    const GaussianPrimitive& p = scene.prims[size_t(i)];
    switch (pclass) {
      case ParamClass::dc_color:
        for (int c = 0; c < 3; ++c) out[k++] = p.sh_dc[c];
        break;
      case ParamClass::ac_color:
        for (int r = 0; r < w / 3; ++r)
          for (int c = 0; c < 3; ++c) out[k++] = p.sh_rest[size_t(r)][c];
        break;
      case ParamClass::position:
        for (int c = 0; c < 3; ++c) out[k++] = p.mean[c];
        break;
      case ParamClass::rotation:
        for (int c = 0; c < 4; ++c) out[k++] = p.rotation[c];
        break;
      case ParamClass::scale:
        for (int c = 0; c < 3; ++c) out[k++] = p.scale[c];
        break;
      case ParamClass::opacity:
        out[k++] = p.opacity;
        break;
    }
  }
  return out;
}

void write_params(Scene& scene, ParamClass pclass, const std::vector<int>& indices,
                  const Eigen::VectorXd& theta) {
  const int w = param_class_width(pclass, scene.sh_bands);
  if (theta.size() != Eigen::Index(indices.size()) * w)
    fail(ErrorKind::invalid_argument, "write_params: length mismatch");
  Eigen::Index k = 0;
  for (int i : indices) {
    GaussianPrimitive& p = scene.prims[size_t(i)];
    switch (pclass) {
      case ParamClass::dc_color:
        for (int c = 0; c < 3; ++c) p.sh_dc[c] = theta[k++];
        break;
      case ParamClass::ac_color:
        for (int r = 0; r < w / 3; ++r)
          for (int c = 0; c < 3; ++c) p.sh_rest[size_t(r)][c] = theta[k++];
        break;
      case ParamClass::position:
        for (int c = 0; c < 3; ++c) p.mean[c] = theta[k++];
        break;
      case ParamClass::rotation:
        for (int c = 0; c < 4; ++c) p.rotation[c] = theta[k++];
        break;
      case ParamClass::scale:
        for (int c = 0; c < 3; ++c) p.scale[c] = theta[k++];
        break;
      case ParamClass::opacity:
        p.opacity = theta[k++];
        break;
    }
  }
}

namespace {

Eigen::VectorXd gather_rows(const Eigen::MatrixXd& grad, const std::vector<int>& indices) {
  const Eigen::Index w = grad.cols();
  Eigen::VectorXd out(Eigen::Index(indices.size()) * w);
  Eigen::Index k = 0;
  for (int i : indices)
    for (Eigen::Index c = 0; c < w; ++c) out[k++] = grad(i, c);
  return out;
}

double perturbation_norm(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                         AttackNorm norm) {
  if (norm == AttackNorm::linf) {
    return (theta - theta0).cwiseAbs().maxCoeff();
  }
  return (theta - theta0).norm();
}

void validate_attack_config(const AttackConfig& c) {
  if (!(c.epsilon >= 0)) fail(ErrorKind::invalid_argument, "attack: epsilon must be >= 0");
  if (c.t_max < 1) fail(ErrorKind::invalid_argument, "attack: t_max must be >= 1");
  if (c.k_viewpoints < 1) fail(ErrorKind::invalid_argument, "attack: k_viewpoints must be >= 1");
  if (!(c.lambda > 0)) fail(ErrorKind::invalid_argument, "attack: lambda must be > 0");
}

void finalize(AttackResult& res, const Scene& masked, const CameraView& base_view,
              const SurrogateEmbedder& emb, const Eigen::VectorXd& e_ref,
              const AttackConfig& cfg) {
  res.masked = masked;
  const auto views = sample_viewpoints(cfg.dist, cfg.k_viewpoints, cfg.seed,
                                       std::uint64_t(cfg.t_max));
  eot_eval(res.masked, base_view, views, emb, e_ref, cfg.lambda, &res.final_loss, &res.final_sbar,
           cfg.threads);
}

}  // namespace

AttackResult run_pgd(const Scene& scene, const CameraView& base_view, const SurrogateEmbedder& emb,
                     const Eigen::VectorXd& e_ref, const AttackConfig& cfg) {
  validate_attack_config(cfg);
  const std::vector<int> idx = select_region(scene, cfg.region);
  if (idx.empty()) fail(ErrorKind::invalid_argument, "attack: selected region is empty");
  const double alpha = cfg.step_alpha > 0 ? cfg.step_alpha : step_size_from_epsilon(cfg.epsilon);

  AttackResult res;
  Scene work = scene;
  const Eigen::VectorXd theta0 = extract_params(scene, cfg.param_class, idx);
  Eigen::VectorXd theta = theta0;

  for (int t = 0; t < cfg.t_max; ++t) {
    const auto views = sample_viewpoints(cfg.dist, cfg.k_viewpoints, cfg.seed, std::uint64_t(t));
    EotResult eot = eot_loss_and_grad(work, base_view, views, emb, e_ref, cfg.lambda,
                                      cfg.param_class, cfg.threads, cfg.loss_scale);
    Eigen::VectorXd g = gather_rows(eot.grad, idx);
    if (!g.allFinite()) {
      res.aborted = true;
      res.iterations = t;
      finalize(res, work, base_view, emb, e_ref, cfg);
      return res;
    }
    if (cfg.norm == AttackNorm::linf) {
      theta += alpha * g.array().sign().matrix();
      theta = project_linf(theta, theta0, cfg.epsilon);
    } else {
      const double gn = g.norm();
      if (gn > 0) theta += (alpha / gn) * g;
      theta = project_l2(theta, theta0, cfg.epsilon);
    }
    write_params(work, cfg.param_class, idx, theta);
    apply_param_constraints(work, cfg.param_class, idx);
    theta = extract_params(work, cfg.param_class, idx);

    // record the post-step state on this iteration's views
    TraceRecord rec;
    rec.t = t;
    eot_eval(work, base_view, views, emb, e_ref, cfg.lambda, &rec.loss, &rec.sbar, cfg.threads);
    rec.loss *= cfg.loss_scale;
    rec.norm = perturbation_norm(theta, theta0, cfg.norm);
    res.trace.push_back(rec);
  }
  res.iterations = cfg.t_max;
  finalize(res, work, base_view, emb, e_ref, cfg);
  res.final_norm = perturbation_norm(theta, theta0, cfg.norm);
  res.success = res.final_sbar < cfg.tau;
  return res;
}

AttackResult run_fgsm(const Scene& scene, const CameraView& base_view, const SurrogateEmbedder& emb,
                      const Eigen::VectorXd& e_ref, const AttackConfig& cfg) {
  validate_attack_config(cfg);
  const std::vector<int> idx = select_region(scene, cfg.region);
  if (idx.empty()) fail(ErrorKind::invalid_argument, "attack: selected region is empty");

  AttackResult res;
  Scene work = scene;
  const Eigen::VectorXd theta0 = extract_params(scene, cfg.param_class, idx);
  const auto views = sample_viewpoints(cfg.dist, cfg.k_viewpoints, cfg.seed, 0);
  EotResult eot = eot_loss_and_grad(work, base_view, views, emb, e_ref, cfg.lambda,
                                    cfg.param_class, cfg.threads, cfg.loss_scale);
  Eigen::VectorXd g = gather_rows(eot.grad, idx);
  if (!g.allFinite()) {
    res.aborted = true;
    res.iterations = 0;
    finalize(res, work, base_view, emb, e_ref, cfg);
    return res;
  }
  Eigen::VectorXd theta;
  if (cfg.norm == AttackNorm::linf) {
    theta = theta0 + cfg.epsilon * g.array().sign().matrix();
  } else {
    const double gn = g.norm();
    theta = gn > 0 ? Eigen::VectorXd(theta0 + (cfg.epsilon / gn) * g) : theta0;
  }
  write_params(work, cfg.param_class, idx, theta);
  apply_param_constraints(work, cfg.param_class, idx);
  theta = extract_params(work, cfg.param_class, idx);

  TraceRecord rec;
  rec.t = 0;
  eot_eval(work, base_view, views, emb, e_ref, cfg.lambda, &rec.loss, &rec.sbar, cfg.threads);
  rec.loss *= cfg.loss_scale;
  rec.norm = perturbation_norm(theta, theta0, cfg.norm);
  res.trace.push_back(rec);
  res.iterations = 1;
  finalize(res, work, base_view, emb, e_ref, cfg);
  res.final_norm = rec.norm;
  res.success = res.final_sbar < cfg.tau;
  return res;
}

AttackResult run_ddn(const Scene& scene, const CameraView& base_view, const SurrogateEmbedder& emb,
                     const Eigen::VectorXd& e_ref, const AttackConfig& cfg) {
  validate_attack_config(cfg);
  const std::vector<int> idx = select_region(scene, cfg.region);
  if (idx.empty()) fail(ErrorKind::invalid_argument, "attack: selected region is empty");

  AttackResult res;
  Scene work = scene;
  const Eigen::VectorXd theta0 = extract_params(scene, cfg.param_class, idx);
  Eigen::VectorXd theta = theta0;
  double rho = cfg.ddn_rho0;
  bool have_best = false;
  double best_norm = 0;
  Eigen::VectorXd best_theta;

  for (int t = 0; t < cfg.t_max; ++t) {
    const auto views = sample_viewpoints(cfg.dist, cfg.k_viewpoints, cfg.seed, std::uint64_t(t));
    EotResult eot = eot_loss_and_grad(work, base_view, views, emb, e_ref, cfg.lambda,
                                      cfg.param_class, cfg.threads, cfg.loss_scale);
    Eigen::VectorXd g = gather_rows(eot.grad, idx);
    if (!g.allFinite()) {
      res.aborted = true;
      res.iterations = t;
      break;
    }
    // normalized step from the current point, then project onto the rho sphere
    Eigen::VectorXd delta = theta - theta0;
    const double gn = g.norm();
    if (gn > 0) delta += (0.1 * std::max(rho, 1e-12) / gn) * g;
    const double dn = delta.norm();
    if (dn > 1e-12) {
      delta *= rho / dn;
    } else {
      delta.setZero();
      if (gn > 0) delta = (rho / gn) * g;
    }
    theta = theta0 + delta;
    write_params(work, cfg.param_class, idx, theta);
    apply_param_constraints(work, cfg.param_class, idx);
    theta = extract_params(work, cfg.param_class, idx);

    TraceRecord rec;
    rec.t = t;
    eot_eval(work, base_view, views, emb, e_ref, cfg.lambda, &rec.loss, &rec.sbar, cfg.threads);
    rec.loss *= cfg.loss_scale;
    rec.norm = perturbation_norm(theta, theta0, AttackNorm::l2);
    rec.rho = rho;
    res.trace.push_back(rec);

    const bool hit = rec.sbar < cfg.tau;
    if (hit && (!have_best || rec.norm < best_norm)) {
      have_best = true;
      best_norm = rec.norm;
      best_theta = theta;
    }
    rho = hit ? rho * (1.0 - cfg.ddn_gamma) : rho * (1.0 + cfg.ddn_gamma);
    res.iterations = t + 1;
  }

  res.success = have_best;
  Scene out_scene = scene;
  if (have_best) {
    write_params(out_scene, cfg.param_class, idx, best_theta);
    apply_param_constraints(out_scene, cfg.param_class, idx);
    res.final_norm = best_norm;
  } else {
    res.final_norm = 0;
  }
  finalize(res, out_scene, base_view, emb, e_ref, cfg);
  return res;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_trace(const AttackResult& result, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::runtime_abort, "cannot open for write: " + path);
  for (const auto& r : result.trace) {
    os << "t=" << r.t << " sbar=" << fmt17(r.sbar) << " loss=" << fmt17(r.loss)
       << " norm=" << fmt17(r.norm);
    if (std::isfinite(r.rho)) os << " rho=" << fmt17(r.rho);
    os << "\n";
  }
  os << "final sbar=" << fmt17(result.final_sbar) << " loss=" << fmt17(result.final_loss)
     << " norm=" << fmt17(result.final_norm) << " iterations=" << result.iterations
     << " success=" << (result.success ? 1 : 0) << " aborted=" << (result.aborted ? 1 : 0) << "\n";
  if (!os) fail(ErrorKind::runtime_abort, "write failed: " + path);
}

AttackResult load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open trace: " + path);
  AttackResult res;
  std::string line;
  int lineno = 0;
  auto get = [&](const std::string& tok, const char* key) -> std::string {
    const std::string pre = std::string(key) + "=";
    if (tok.rfind(pre, 0) != 0)
      fail(ErrorKind::parse, "trace parse error at line " + std::to_string(lineno) +
                                 ": expected " + key);
    return tok.substr(pre.size());
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string first;
    ss >> first;
    if (first == "final") {
      std::string a, b, c, d, e, f;
      ss >> a >> b >> c >> d;
      res.final_sbar = std::stod(get(a, "sbar"));
      res.final_loss = std::stod(get(b, "loss"));
      res.final_norm = std::stod(get(c, "norm"));
      res.iterations = std::stoi(get(d, "iterations"));
      if (ss >> e) res.success = std::stoi(get(e, "success")) != 0;
      if (ss >> f) res.aborted = std::stoi(get(f, "aborted")) != 0;
    } else {
      TraceRecord r;
      r.t = std::stoi(get(first, "t"));
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("sbar=", 0) == 0) r.sbar = std::stod(tok.substr(5));
        else if (tok.rfind("loss=", 0) == 0) r.loss = std::stod(tok.substr(5));
        else if (tok.rfind("norm=", 0) == 0) r.norm = std::stod(tok.substr(5));
        else if (tok.rfind("rho=", 0) == 0) r.rho = std::stod(tok.substr(4));
        else fail(ErrorKind::parse, "trace parse error at line " + std::to_string(lineno));
      }
      res.trace.push_back(r);
    }
  }
  return res;
}

}  // namespace gs
