#include "cyrisk/model.hpp"

#include "cyrisk/rng.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace cyrisk {

void require_valid_state(const CyberState& x) {
  if (!x.valid()) {
    std::ostringstream os;
    os << "invalid state (p=" << x.p << ", s=" << x.s << ", i=" << x.i
       << "): need p>0, s>=0, i>=0, s+i<=1";
    throw state_error(os.str());
  }
}

namespace {
const std::map<std::string, std::size_t>& form_table() {
  static const std::map<std::string, std::size_t> table = {
      {"constant", 1},  {"affine_i", 2},  {"affine_h", 2}, {"linear_i", 1},
      {"linear_h", 1},  {"affine_pi", 4}, {"quadratic_a", 1}, {"power_a", 2},
  };
  return table;
}
}  // namespace

bool coeff_form_known(const std::string& form) { return form_table().count(form) > 0; }

std::size_t coeff_param_count(const std::string& form) {
  auto it = form_table().find(form);
  if (it == form_table().end()) throw config_error("unknown coefficient form '" + form + "'");
  return it->second;
}

double Coeff::operator()(double t, const CyberState& x, double a, double h) const {
  (void)t;
  const auto& c = params;
  if (form == "constant") return c[0];
  if (form == "affine_i") return c[0] + c[1] * x.i;
  if (form == "affine_h") return c[0] * (1.0 + c[1] * h);
  if (form == "linear_i") return c[0] * x.i;
  if (form == "linear_h") return c[0] * h;
  if (form == "affine_pi") return c[0] + c[1] * x.p + c[2] * x.s + c[3] * x.i;
  if (form == "quadratic_a") return c[0] * a * a;
  if (form == "power_a") return c[0] * std::pow(std::abs(a), c[1]);
  throw config_error("unknown coefficient form '" + form + "'");
}

double Utility::value(double w) const {
  switch (kind) {
    case UtilityKind::identity: return w;
    case UtilityKind::one_minus_exp: return 1.0 - std::exp(-w);
  }
  throw config_error("unknown utility kind");
}

double Utility::inverse(double v) const {
  switch (kind) {
    case UtilityKind::identity: return v;
    case UtilityKind::one_minus_exp:
      if (v >= 1.0) {
        std::ostringstream os;
        os << "U_A^{-1} undefined at " << v << " (>= 1); tighten the y-grid bounds";
        throw range_error(os.str());
      }
      return -std::log(1.0 - v);
  }
  throw config_error("unknown utility kind");
}

ModelParams ModelParams::defaults() {
  ModelParams m;
  m.beta = 0.3;
  m.rho = 0.1;
  m.mu = Coeff{"affine_i", {0.05, -0.2}};
  m.sigma_price = Coeff{"affine_h", {0.2, 0.5}};
  m.sigma_tilde = Coeff{"affine_h", {0.1, 1.0}};
  m.discount_k = Coeff::constant(-0.05);
  m.effort_cost = Coeff{"quadratic_a", {0.5}};
  m.agent_jump_cost = Coeff{"linear_i", {0.01}};
  m.principal_jump_cost = Coeff{"linear_i", {0.01}};
  m.epsilon = 1.0;
  m.marks = {MarkSpec{MarkSpec::Kind::external, 0.1, Coeff{"linear_h", {1.0}}},
             MarkSpec{MarkSpec::Kind::internal, 0.05, Coeff{"linear_i", {1.0}}}};
  m.lambda0 = VectorXd::Zero(2);
  m.a_min = 0.0;
  m.a_max = 2.0;
  m.h_min = 0.0;
  m.h_max = 1.0;
  m.utility_a = Utility{UtilityKind::identity};
  m.terminal_fa = Coeff{"affine_pi", {0.0, 0.0, 0.0, -1.0}};
  m.terminal_fp = Coeff{"affine_pi", {0.0, 1.0, 0.0, -1.0}};
  m.reservation_r0 = -0.5;
  m.jump_scale = JumpScale::price;
  return m;
}

void ModelParams::validate(bool allow_degenerate) const {
  if (!(a_min <= a_max)) throw config_error("control set A empty: a_min > a_max");
  if (!(h_min <= h_max)) throw config_error("control set H empty: h_min > h_max");
  if (a_min < 0.0) throw config_error("A must lie in the nonnegative axis");
  if (h_min < 0.0) throw config_error("H must lie in the nonnegative axis");
  if (beta < 0.0 || rho < 0.0) throw config_error("beta and rho must be >= 0");
  if (epsilon < 0.0) throw config_error("epsilon must be >= 0");
  if (marks.empty()) throw config_error("at least one jump mark required");
  if (lambda0.size() != static_cast<Eigen::Index>(marks.size()))
    throw config_error("lambda0 size must match the number of marks");
  for (std::size_t k = 0; k < marks.size(); ++k) {
    if (marks[k].loss < 0.0 || marks[k].loss >= 1.0)
      throw config_error("mark loss fractions must lie in [0,1)");
    if (lambda0[k] < 0.0) throw config_error("lambda0 entries must be >= 0");
  }
  if (effort_cost.form == "power_a" && effort_cost.params[1] < 1.0)
    throw config_error("power_a exponent must be >= 1 (convexity)");

  // Sampled invariants over [0,T] x state box x A x H.
  PathRng rng(0x5eed, 0);
  for (int n = 0; n < 1000; ++n) {
    double t = rng.next_uniform();
    CyberState x;
    x.p = 0.1 + 3.9 * rng.next_uniform();
    x.s = rng.next_uniform();
    x.i = rng.next_uniform() * (1.0 - x.s);
    double a = a_min + (a_max - a_min) * rng.next_uniform();
    double h = h_min + (h_max - h_min) * rng.next_uniform();

    double sp = sigma_price(t, x, 0.0, h);
    if (allow_degenerate ? sp < 0.0 : sp <= 0.0)
      throw config_error("sigma_price must be > 0 on the sampled domain");
    if (sigma_tilde(t, x, 0.0, h) < 0.0)
      throw config_error("sigma_tilde must be >= 0 on the sampled domain");
    double f0 = effort_cost(t, x, 0.0, h);
    if (f0 < 0.0) throw config_error("effort cost must satisfy f(t,x,0) >= 0");

    double a2 = a_min + (a_max - a_min) * rng.next_uniform();
    double fm = effort_cost(t, x, 0.5 * (a + a2), h);
    double favg = 0.5 * (effort_cost(t, x, a, h) + effort_cost(t, x, a2, h));
    if (fm > favg + 1e-9) throw config_error("effort cost failed midpoint convexity check");

    for (double v : {mu(t, x, a, h), discount_k(t, x, a, h), agent_jump_cost(t, x),
                     principal_jump_cost(t, x), terminal_fa(0.0, x), terminal_fp(0.0, x)}) {
      if (!std::isfinite(v)) throw config_error("coefficient map returned a non-finite value");
    }
    for (const auto& mk : marks) {
      double r = mk.rate(x.i, h);
      if (!(r >= 0.0) || !std::isfinite(r))
        throw config_error("mark intensities must be finite and >= 0");
    }
  }
}

void require_action(const ModelParams& m, double a) {
  if (a < m.a_min - 1e-12 || a > m.a_max + 1e-12) {
    std::ostringstream os;
    os << "agent action " << a << " outside A = [" << m.a_min << ", " << m.a_max << "]";
    throw domain_error(os.str());
  }
}

void require_hack(const ModelParams& m, double h) {
  if (h < m.h_min - 1e-12 || h > m.h_max + 1e-12) {
    std::ostringstream os;
    os << "hacker action " << h << " outside H = [" << m.h_min << ", " << m.h_max << "]";
    throw domain_error(os.str());
  }
}

Vec3 eval_drift_continuous(const ModelParams& m, double t, const CyberState& x, double a,
                           double h) {
  require_valid_state(x);
  require_action(m, a);
  require_hack(m, h);
  double si = x.s * x.i;
  return Vec3(m.mu(t, x) * x.p,
              -m.beta * si - a * x.s - h * x.s,
              m.beta * si - m.rho * x.i + h * x.s);
}

Mat32 eval_volatility(const ModelParams& m, double t, const CyberState& x, double h) {
  require_valid_state(x);
  require_hack(m, h);
  double v = m.sigma_tilde(t, x, 0.0, h) * x.i * x.s;
  Mat32 sig;
  sig << m.sigma_price(t, x, 0.0, h) * x.p, 0.0,
         0.0, -v,
         0.0, v;
  return sig;
}

JumpModel eval_jump_model(const ModelParams& m, double t, const CyberState& x, double h) {
  (void)t;
  require_valid_state(x);
  require_hack(m, h);
  JumpModel jm;
  const auto n = static_cast<Eigen::Index>(m.marks.size());
  jm.loss_fractions.resize(n);
  jm.intensities.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    jm.loss_fractions[k] = m.marks[k].loss;
    jm.intensities[k] = m.marks[k].rate(x.i, h);
  }
  return jm;
}

CyberState apply_jump(const ModelParams& m, const CyberState& x, std::size_t mark) {
  if (mark >= m.marks.size()) throw domain_error("jump mark index out of range");
  CyberState y = x;
  y.p *= 1.0 - m.marks[mark].loss;
  return y;
}

double eval_agent_cost(const ModelParams& m, double t, const CyberState& x, double a) {
  require_action(m, a);
  return m.effort_cost(t, x, a) + m.agent_jump_cost(t, x);
}

double eval_principal_cost(const ModelParams& m, double t, const CyberState& x, double h) {
  require_hack(m, h);
  double v = m.sigma_tilde(t, x, 0.0, h) * x.s * x.i;
  return 0.5 * m.epsilon * v * v + m.principal_jump_cost(t, x);
}

double eval_principal_terminal(const ModelParams& m, const CyberState& x, double y) {
  return m.terminal_fp(0.0, x) - m.utility_a.inverse(y - m.terminal_fa(0.0, x));
}

}  // namespace cyrisk
