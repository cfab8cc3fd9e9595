#pragma once

#include "cyrisk/common.hpp"

#include <string>
#include <vector>

namespace cyrisk {

// Reduced state x = (p, s, i); the recovered fraction r = 1 - s - i is implied.
struct CyberState {
  double p = 1.0;  // portfolio value, > 0
  double s = 0.0;  // susceptible fraction
  double i = 0.0;  // infected fraction

  double recovered() const { return 1.0 - s - i; }
  bool valid(double tol = 1e-12) const {
    return p > 0.0 && s >= -tol && i >= -tol && s + i <= 1.0 + tol;
  }
};

void require_valid_state(const CyberState& x);

// Scalar coefficient selected from a registry of named functional forms.
// Arguments are taken from (t, p, s, i, a, h) as each form needs them.
//   constant    c0
//   affine_i    c0 + c1*i
//   affine_h    c0 * (1 + c1*h)
//   linear_i    c0 * i
//   linear_h    c0 * h
//   affine_pi   c0 + c1*p + c2*s + c3*i
//   quadratic_a c0 * a^2
//   power_a     c0 * |a|^c1   (c1 >= 1)
struct Coeff {
  std::string form = "constant";
  std::vector<double> params{0.0};

  double operator()(double t, const CyberState& x, double a = 0.0, double h = 0.0) const;
  static Coeff constant(double c) { return Coeff{"constant", {c}}; }
};

bool coeff_form_known(const std::string& form);
std::size_t coeff_param_count(const std::string& form);

enum class UtilityKind { identity, one_minus_exp };  // U_A(w) = w or 1 - e^{-w}

struct Utility {
  UtilityKind kind = UtilityKind::identity;
  double value(double w) const;
  // Inverse of U_A; throws range_error outside the codomain (signals that the
  // y-grid bounds must be tightened).
  double inverse(double v) const;
};

// One jump mark of the L-hop model: an external mark's intensity is a function
// of the hacker action h, an internal mark's a function of the infected share.
struct MarkSpec {
  enum class Kind { external, internal };
  Kind kind = Kind::external;
  double loss = 0.0;  // price loss fraction c_k in [0,1); event maps p -> p*(1-c_k)
  Coeff intensity;    // linear_h/affine_h for external, linear_i/affine_i for internal

  double rate(double i_infected, double h) const {
    return kind == Kind::external ? intensity(0.0, CyberState{1.0, 0.0, 0.0}, 0.0, h)
                                  : intensity(0.0, CyberState{1.0, 0.0, i_infected});
  }
};

enum class JumpScale { price, unscaled };  // x^1 factor on the G jump term

// All scenario coefficients. Immutable after construction; every operation
// below is a pure function of its inputs, safe to share across workers.
struct ModelParams {
  double beta = 0.3;  // transmission rate
  double rho = 0.1;   // recovery/replacement rate

  Coeff mu;                   // price drift rate, (t,i)
  Coeff sigma_price;          // price volatility, (t,i,h), > 0
  Coeff sigma_tilde;          // SIR contagion volatility, (t,h)
  Coeff discount_k;           // discount rate k(t,x); K_{t,s} = exp(int k)
  Coeff effort_cost;          // f(t,x,a), convex and coercive in a
  Coeff agent_jump_cost;      // folded int L^A lambda^A nu^A, (t,x)
  Coeff principal_jump_cost;  // folded int L^P lambda^P nu^P, (t,x)

  double epsilon = 1.0;  // ambiguity penalty weight

  std::vector<MarkSpec> marks;  // L-hop marks, default {external, internal}
  VectorXd lambda0;             // reference compensator intensity, size m

  double a_min = 0.0, a_max = 2.0;  // A = [a_min, a_max]
  double h_min = 0.0, h_max = 1.0;  // H = [h_min, h_max]

  Utility utility_a;  // U_A
  Coeff terminal_fa;  // F^A(x)
  Coeff terminal_fp;  // F^P(x)

  double reservation_r0 = -0.5;

  JumpScale jump_scale = JumpScale::price;

  std::size_t n_marks() const { return marks.size(); }

  static ModelParams defaults();

  // Sampling-based invariant checks (bounds, positivity, convexity of f).
  // allow_degenerate relaxes sigma_price > 0 to >= 0.
  void validate(bool allow_degenerate = false) const;
};

// Continuous drift b^c(t,x;a,h) of (p,s,i):
//   ( mu(t,i) p,  -beta s i - a s - h s,  beta s i - rho i + h s ).
// The implied R-drift is rho*i + a*s, so the SIR components sum to zero.
Vec3 eval_drift_continuous(const ModelParams& m, double t, const CyberState& x, double a, double h);

// Volatility matrix against the 2-d Brownian driver:
//   row p: (sigma_price p, 0), row s: (0, -sigma_tilde i s), row i: (0, +sigma_tilde i s).
Mat32 eval_volatility(const ModelParams& m, double t, const CyberState& x, double h);

struct JumpModel {
  VectorXd loss_fractions;  // c_k
  VectorXd intensities;     // lambda_k(i,h)
};
JumpModel eval_jump_model(const ModelParams& m, double t, const CyberState& x, double h);

// Post-jump state for mark k: p -> p*(1-c_k), (s,i) unchanged.
CyberState apply_jump(const ModelParams& m, const CyberState& x, std::size_t mark);

// C^A = f(t,x,a) + agent_jump_cost(t,x)
double eval_agent_cost(const ModelParams& m, double t, const CyberState& x, double a);

// C^P = eps/2 * (sigma_tilde(t,h) s i)^2 + principal_jump_cost(t,x)
double eval_principal_cost(const ModelParams& m, double t, const CyberState& x, double h);

// Terminal payoff of the holding company: F^P(x) - U_A^{-1}(y - F^A(x)).
double eval_principal_terminal(const ModelParams& m, const CyberState& x, double y);

void require_action(const ModelParams& m, double a);
void require_hack(const ModelParams& m, double h);

}  // namespace cyrisk
