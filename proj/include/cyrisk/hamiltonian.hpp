#pragma once

#include "cyrisk/model.hpp"

namespace cyrisk {

// Co-state of the agent's value: continuation value y, sensitivity z to
// (p,s,i), and per-mark jump sensitivities u.
struct CoState {
  double y = 0.0;
  Vec3 z = Vec3::Zero();
  VectorXd u;

  static CoState zero(std::size_t n_marks) {
    CoState cs;
    cs.u = VectorXd::Zero(static_cast<Eigen::Index>(n_marks));
    return cs;
  }
};

// Agent generator
//   G(t,x,y,z,u,a,h) = k(t,x) y - C^A(t,x,a) + b^c(t,x;a,h).z
//                      + scale * sum_k u_k (lambda_k(i,h) - lambda0_k),
// scale = p when jump_scale == price, else 1. G separates additively into an
// a-part (-f - a s z_s) and an h-part (everything else).
double eval_G(const ModelParams& m, double t, const CyberState& x, const CoState& cs, double a,
              double h);

double eval_G_a_part(const ModelParams& m, double t, const CyberState& x, const Vec3& z, double a);
double eval_G_h_part(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                     double h);

// argmax over A of the a-part; closed form for the registry cost forms,
// ties broken toward the smaller action.
double best_response_alpha(const ModelParams& m, double t, const CyberState& x, const Vec3& z);

// Uniform control grids on A and H (n >= 1; n == 1 collapses to the lower end
// unless the set is a point).
VectorXd action_grid(const ModelParams& m, int n);
VectorXd hack_grid(const ModelParams& m, int n);

struct GStarResult {
  double value = 0.0;
  double a_star = 0.0;
  double h_star = 0.0;
};

// sup_a inf_h G over A x h_grid (separable: a-part maximum + h-part minimum;
// smallest minimizing h wins ties).
GStarResult eval_G_star(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                        const VectorXd& h_grid);

// Sigma-constrained G*: the attainable-volatility set at sigma sigma^T(t,x,h)
// pins the hacker action, leaving sup_a G(.,a,h).
double eval_G_star_at(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                      double h);

// Tr(sigma sigma^T(t,x,h) gamma) for symmetric gamma.
double trace_sigma2_gamma(const ModelParams& m, double t, const CyberState& x, double h,
                          const Mat3& gamma);

// Second-order Hamiltonian restricted to attainable volatilities:
//   Ghat(gamma) = min_{h in h_grid} { 1/2 Tr(sigma sigma^T(h) gamma) + sup_a G(.,a,h) }.
double eval_G_hat(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                  const Mat3& gamma, const VectorXd& h_grid);

// Max over random samples of |sup-inf - inf-sup| of G on A x H grids.
double isaacs_gap(const ModelParams& m, int samples, std::uint64_t seed, int n_a = 41,
                  int n_h = 41);

}  // namespace cyrisk
