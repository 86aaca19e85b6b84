#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gs/camera.hpp"
#include "gs/embedder.hpp"
#include "gs/renderer.hpp"
#include "gs/scene.hpp"

namespace gs {

enum class AttackNorm { linf, l2 };
enum class AttackMethod { pgd, fgsm, ddn };

AttackNorm attack_norm_from_name(const std::string& s);
AttackMethod attack_method_from_name(const std::string& s);

struct AttackConfig {
  double epsilon = 0.1;
  AttackNorm norm = AttackNorm::linf;
  AttackMethod method = AttackMethod::pgd;
  ParamClass param_class = ParamClass::dc_color;
  std::vector<std::string> region = {"all"};
  int t_max = 300;
  int k_viewpoints = 5;
  double lambda = 10.0;
  std::uint64_t seed = 7;
  double tau = 0.5;        // DDN success threshold (calibrated EER operating point)
  double step_alpha = 0;   // 0 derives alpha from epsilon
  double ddn_gamma = 0.05;
  double ddn_rho0 = 1.0;
  int threads = 1;
  ViewpointDistribution dist;
  double loss_scale = 1.0;  // test hook, keeps sign(g) trajectories comparable
};

struct TraceRecord {
  int t = 0;
  double sbar = 0;
  double loss = 0;
  double norm = 0;
  double rho = std::numeric_limits<double>::quiet_NaN();  // DDN only
};

struct AttackResult {
  Scene masked;
  std::vector<TraceRecord> trace;
  double final_sbar = 0;
  double final_loss = 0;
  double final_norm = 0;
  int iterations = 0;
  bool success = false;  // DDN: some iterate fell below tau
  bool aborted = false;  // non-finite gradient encountered
};

double step_size_from_epsilon(double epsilon);

// log(1 + exp(-2*s*lambda)), stabilized; strictly decreasing in s.
double identity_loss(double s, double lambda);
double identity_loss_grad(double s, double lambda);

struct EotResult {
  double loss = 0;
  double sbar = 0;
  Eigen::MatrixXd grad;  // rows = all primitives
};

// Mean loss/grad over the view list; per-view results combined in view order
// regardless of thread count.
EotResult eot_loss_and_grad(const Scene& scene, const CameraView& base_view,
                            const std::vector<Viewpoint>& views, const SurrogateEmbedder& emb,
                            const Eigen::VectorXd& e_ref, double lambda, ParamClass pclass,
                            int threads = 1, double loss_scale = 1.0);

// Loss/similarity only (no backward), same view-order mean.
void eot_eval(const Scene& scene, const CameraView& base_view, const std::vector<Viewpoint>& views,
              const SurrogateEmbedder& emb, const Eigen::VectorXd& e_ref, double lambda,
              double* loss_out, double* sbar_out, int threads = 1);

Eigen::VectorXd project_linf(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                             double epsilon);
Eigen::VectorXd project_l2(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                           double epsilon);

// Clamp one parameter class back to its feasible set (opacity range, scale
// floor, unit quaternion); color classes pass through.
void apply_param_constraints(Scene& scene, ParamClass pclass, const std::vector<int>& indices);

Eigen::VectorXd extract_params(const Scene& scene, ParamClass pclass,
                               const std::vector<int>& indices);
void write_params(Scene& scene, ParamClass pclass, const std::vector<int>& indices,
                  const Eigen::VectorXd& theta);

AttackResult run_pgd(const Scene& scene, const CameraView& base_view, const SurrogateEmbedder& emb,
                     const Eigen::VectorXd& e_ref, const AttackConfig& config);
AttackResult run_fgsm(const Scene& scene, const CameraView& base_view, const SurrogateEmbedder& emb,
                      const Eigen::VectorXd& e_ref, const AttackConfig& config);
AttackResult run_ddn(const Scene& scene, const CameraView& base_view, const SurrogateEmbedder& emb,
                     const Eigen::VectorXd& e_ref, const AttackConfig& config);

void save_trace(const AttackResult& result, const std::string& path);
AttackResult load_trace(const std::string& path);  // scene left empty

}  // namespace gs
