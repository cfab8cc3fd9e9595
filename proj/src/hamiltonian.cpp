#include "cyrisk/hamiltonian.hpp"

#include "cyrisk/rng.hpp"

#include <algorithm>
#include <cmath>

namespace cyrisk {

namespace {
double jump_scale_factor(const ModelParams& m, const CyberState& x) {
  return m.jump_scale == JumpScale::price ? x.p : 1.0;
}
}  // namespace

double eval_G_a_part(const ModelParams& m, double t, const CyberState& x, const Vec3& z,
                     double a) {
  require_action(m, a);
  return -m.effort_cost(t, x, a) - a * x.s * z[1];
}

double eval_G_h_part(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                     double h) {
  require_hack(m, h);
  double si = x.s * x.i;
  Vec3 b_eta(m.mu(t, x) * x.p,
             -m.beta * si - h * x.s,
             m.beta * si - m.rho * x.i + h * x.s);
  double jump = 0.0;
  for (std::size_t k = 0; k < m.marks.size(); ++k)
    jump += cs.u[static_cast<Eigen::Index>(k)] *
            (m.marks[k].rate(x.i, h) - m.lambda0[static_cast<Eigen::Index>(k)]);
  return m.discount_k(t, x) * cs.y - m.agent_jump_cost(t, x) + b_eta.dot(cs.z) +
         jump_scale_factor(m, x) * jump;
}

double eval_G(const ModelParams& m, double t, const CyberState& x, const CoState& cs, double a,
              double h) {
  require_valid_state(x);
  return eval_G_a_part(m, t, x, cs.z, a) + eval_G_h_part(m, t, x, cs, h);
}

double best_response_alpha(const ModelParams& m, double t, const CyberState& x, const Vec3& z) {
  // Maximize -a*s*z_s - f(t,x,a) over [a_min, a_max]; concave in a, so the
  // interior stationary point (when it exists) clamped to the box is the
  // argmax; the smaller action wins on flats.
  double g = -x.s * z[1];  // marginal gain of effort
  const auto& f = m.effort_cost;
  double a_star;
  if (f.form == "quadratic_a") {
    double c = f.params[0];
    a_star = c > 0.0 ? g / (2.0 * c) : (g > 0.0 ? m.a_max : m.a_min);
  } else if (f.form == "power_a") {
    double c = f.params[0], p = f.params[1];
    if (g <= 0.0)
      a_star = m.a_min;
    else if (p <= 1.0 || c <= 0.0)
      a_star = m.a_max;
    else
      a_star = std::pow(g / (c * p), 1.0 / (p - 1.0));
  } else {
    // Generic convex cost: ternary search on the concave objective.
    double lo = m.a_min, hi = m.a_max;
    auto phi = [&](double a) { return g * a - f(t, x, a); };
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
      if (phi(m1) >= phi(m2))
        hi = m2;
      else
        lo = m1;
    }
    a_star = 0.5 * (lo + hi);
  }
  if (g <= 0.0) a_star = m.a_min;  // zero marginal gain: cheapest action
  return std::clamp(a_star, m.a_min, m.a_max);
}

VectorXd action_grid(const ModelParams& m, int n) {
  if (n < 1) throw config_error("action grid needs n >= 1");
  VectorXd g(n);
  for (int j = 0; j < n; ++j)
    g[j] = n == 1 ? m.a_min : m.a_min + (m.a_max - m.a_min) * j / (n - 1);
  return g;
}

VectorXd hack_grid(const ModelParams& m, int n) {
  if (n < 1) throw config_error("hack grid needs n >= 1");
  VectorXd g(n);
  for (int j = 0; j < n; ++j)
    g[j] = n == 1 ? m.h_min : m.h_min + (m.h_max - m.h_min) * j / (n - 1);
  return g;
}

GStarResult eval_G_star(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                        const VectorXd& h_grid) {
  if (h_grid.size() == 0) throw config_error("h_grid must be nonempty");
  GStarResult r;
  r.a_star = best_response_alpha(m, t, x, cs.z);
  double best_h = h_grid[0];
  double best_val = eval_G_h_part(m, t, x, cs, h_grid[0]);
  for (Eigen::Index j = 1; j < h_grid.size(); ++j) {
    double v = eval_G_h_part(m, t, x, cs, h_grid[j]);
    if (v < best_val) {
      best_val = v;
      best_h = h_grid[j];
    }
  }
  r.h_star = best_h;
  r.value = eval_G_a_part(m, t, x, cs.z, r.a_star) + best_val;
  return r;
}

double eval_G_star_at(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                      double h) {
  double a = best_response_alpha(m, t, x, cs.z);
  return eval_G_a_part(m, t, x, cs.z, a) + eval_G_h_part(m, t, x, cs, h);
}

double trace_sigma2_gamma(const ModelParams& m, double t, const CyberState& x, double h,
                          const Mat3& gamma) {
  double sp = m.sigma_price(t, x, 0.0, h) * x.p;
  double v = m.sigma_tilde(t, x, 0.0, h) * x.i * x.s;
  return sp * sp * gamma(0, 0) + v * v * (gamma(1, 1) + gamma(2, 2) - 2.0 * gamma(1, 2));
}

double eval_G_hat(const ModelParams& m, double t, const CyberState& x, const CoState& cs,
                  const Mat3& gamma, const VectorXd& h_grid) {
  if (h_grid.size() == 0) throw config_error("h_grid must be nonempty");
  double a = best_response_alpha(m, t, x, cs.z);
  double ga = eval_G_a_part(m, t, x, cs.z, a);
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < h_grid.size(); ++j) {
    double v = 0.5 * trace_sigma2_gamma(m, t, x, h_grid[j], gamma) +
               eval_G_h_part(m, t, x, cs, h_grid[j]);
    best = std::min(best, v);
  }
  return ga + best;
}

double isaacs_gap(const ModelParams& m, int samples, std::uint64_t seed, int n_a, int n_h) {
  if (samples <= 0) throw config_error("isaacs_gap needs a positive sample count");
  VectorXd ag = action_grid(m, n_a);
  VectorXd hg = hack_grid(m, n_h);
  PathRng rng(seed, 0);
  double worst = 0.0;
  for (int n = 0; n < samples; ++n) {
    double t = rng.next_uniform();
    CyberState x;
    x.p = 0.2 + 3.8 * rng.next_uniform();
    x.s = rng.next_uniform();
    x.i = rng.next_uniform() * (1.0 - x.s);
    CoState cs = CoState::zero(m.n_marks());
    cs.y = 4.0 * rng.next_uniform() - 2.0;
    for (int d = 0; d < 3; ++d) cs.z[d] = 4.0 * rng.next_uniform() - 2.0;
    for (Eigen::Index k = 0; k < cs.u.size(); ++k) cs.u[k] = 4.0 * rng.next_uniform() - 2.0;

    // sup_a inf_h on the grids
    double sup_inf = -std::numeric_limits<double>::infinity();
    for (Eigen::Index ja = 0; ja < ag.size(); ++ja) {
      double inner = std::numeric_limits<double>::infinity();
      for (Eigen::Index jh = 0; jh < hg.size(); ++jh)
        inner = std::min(inner, eval_G(m, t, x, cs, ag[ja], hg[jh]));
      sup_inf = std::max(sup_inf, inner);
    }
    // inf_h sup_a
    double inf_sup = std::numeric_limits<double>::infinity();
    for (Eigen::Index jh = 0; jh < hg.size(); ++jh) {
      double inner = -std::numeric_limits<double>::infinity();
      for (Eigen::Index ja = 0; ja < ag.size(); ++ja)
        inner = std::max(inner, eval_G(m, t, x, cs, ag[ja], hg[jh]));
      inf_sup = std::min(inf_sup, inner);
    }
    worst = std::max(worst, std::abs(sup_inf - inf_sup));
  }
  return worst;
}

}  // namespace cyrisk
