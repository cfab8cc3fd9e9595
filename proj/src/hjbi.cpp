#include "cyrisk/hjbi.hpp"

#include "cyrisk/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace cyrisk {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-node evaluation context: stencil values and h-grid coefficient arrays
// are gathered once, then reused across all control candidates.
class NodeEval {
 public:
  NodeEval(const ModelParams& m, const Grid4& g, const std::vector<double>& v, NodeIndex node,
           double t, const SearchConfig& search, const VectorXd& h_grid, const SolverFlags& flags)
      : m_(m), g_(g), v_(v), search_(search), flags_(flags), h_grid_(h_grid) {
    ip_ = node.ip;
    is_ = node.is;
    ii_ = node.ii;
    iy_ = node.iy;
    x_.p = g.p.x[ip_];
    x_.s = g.s.x[is_];
    x_.i = g.i.x[ii_];
    y_ = g.y.x[iy_];
    t_ = t;
    idx0_ = g.index(ip_, is_, ii_, iy_);
    v0_ = v[idx0_];

    gather_stencil();
    precompute_h_arrays();

    mu_p_ = m.mu(t, x_) * x_.p;
    ky_jc_ = m.discount_k(t, x_) * y_ - m.agent_jump_cost(t, x_);
    pscale_ = m.jump_scale == JumpScale::price ? x_.p : 1.0;

    n_marks_ = m.marks.size();
    for (std::size_t k = 0; k < n_marks_; ++k) {
      double pshift = x_.p * (1.0 - m.marks[k].loss);
      jp_[k] = g.p.bracket(pshift);
      wp_[k] = g.p.weight(jp_[k], pshift);
    }
  }

  std::size_t jump_clamps() const { return jump_clamps_; }

  // Q at a single (cp, h); weight_out receives the explicit center weight.
  double eval_single(const ControlPoint& cp, double* weight_out) {
    Candidate c = prepare(cp);
    int jh = locate_h(cp.h);
    double w = 0.0;
    double q = eval_h(c, jh, &w);
    if (weight_out) *weight_out = w;
    return q;
  }

  // min over the h grid; returns the value, smallest minimizing h, and
  // whether every h obeyed the stability budget for time step dt.
  double eval_min_h(const ControlPoint& cp, double dt, double* h_star, bool* feasible) {
    Candidate c = prepare(cp);
    double best = kInf;
    double hbest = h_grid_[0];
    bool ok = true;
    for (Eigen::Index jh = 0; jh < h_grid_.size(); ++jh) {
      double w = 0.0;
      double q = eval_h(c, static_cast<int>(jh), &w);
      if (dt * w > search_.cfl_safety) ok = false;
      if (q < best) {
        best = q;
        hbest = h_grid_[jh];
      }
    }
    if (h_star) *h_star = hbest;
    if (feasible) *feasible = ok;
    return best;
  }

 private:
  struct Candidate {
    double a_star;
    double ga;         // a-part of G at a*
    double ghat;       // Ghat(z,u,gamma)
    double u_lam0;     // sum_k u_k lambda0_k
    double z1, z2, z3;
    double g1, g2, g3;
    double jval[8];    // per-mark interpolated v(x_k+, y+u_k) - v0
  };

  Candidate prepare(const ControlPoint& cp) {
    Candidate c;
    c.z1 = cp.z[0];
    c.z2 = cp.z[1];
    c.z3 = cp.z[2];
    c.g1 = cp.gamma[0];
    c.g2 = cp.gamma[1];
    c.g3 = cp.gamma[2];
    c.a_star = best_response_alpha(m_, t_, x_, cp.z);
    c.ga = -m_.effort_cost(t_, x_, c.a_star) - c.a_star * x_.s * c.z2;

    c.u_lam0 = 0.0;
    for (std::size_t k = 0; k < n_marks_; ++k) {
      uk_[k] = cp.u[static_cast<Eigen::Index>(k)];
      c.u_lam0 += uk_[k] * m_.lambda0[static_cast<Eigen::Index>(k)];
      c.jval[k] = interp_py(jp_[k], wp_[k], y_ + uk_[k]) - v0_;
    }

    // Ghat = ga + min_h { 1/2 Tr(sigma sigma^T gamma) + h-part of G }
    double gmin = kInf;
    for (Eigen::Index jh = 0; jh < h_grid_.size(); ++jh) {
      double tr = sp_[jh] * sp_[jh] * c.g1 + vt_[jh] * vt_[jh] * (c.g2 + c.g3);
      double gh = g_h_part(c, static_cast<int>(jh));
      gmin = std::min(gmin, 0.5 * tr + gh);
    }
    c.ghat = c.ga + gmin;
    return c;
  }

  double g_h_part(const Candidate& c, int jh) const {
    double jump = 0.0;
    for (std::size_t k = 0; k < n_marks_; ++k)
      jump += uk_[k] * (lam_[k][jh] - m_.lambda0[static_cast<Eigen::Index>(k)]);
    return ky_jc_ + mu_p_ * c.z1 + bs_eta_[jh] * c.z2 + bi_eta_[jh] * c.z3 + pscale_ * jump;
  }

  double eval_h(const Candidate& c, int jh, double* weight_out) {
    double sp = sp_[jh], vt = vt_[jh];
    double sp2 = sp * sp, vt2 = vt * vt;

    double b_p = mu_p_;
    double b_s = bs_eta_[jh] - c.a_star * x_.s;
    double b_i = bi_eta_[jh];
    double tr = sp2 * c.g1 + vt2 * (c.g2 + c.g3);
    double zb = mu_p_ * c.z1 + b_s * c.z2 + b_i * c.z3;
    double b_y = zb + 0.5 * tr - c.ghat - c.u_lam0;

    double w = 0.0;
    double first = up1(0, b_p, w) + up1(1, b_s, w) + up1(2, b_i, w) + up1(3, b_y, w);

    // Y-diffusion row
    double m_yp, m_ys, m_yi, m_yy;
    if (flags_.literal_sigma_row) {
      m_yp = c.z1 * sp;
      m_ys = -c.z2 * vt;
      m_yi = c.z2 * vt;
      m_yy = c.z1 * c.z1 + c.z2 * c.z2 + c.z3 * c.z3;
    } else {
      double q1 = c.z1 * sp;
      double q2 = (c.z3 - c.z2) * vt;
      m_yp = q1 * sp;
      m_ys = -q2 * vt;
      m_yi = q2 * vt;
      m_yy = q1 * q1 + q2 * q2;
    }

    double second = 0.0;
    if (d2_avail_[0]) second += 0.5 * sp2 * d2_[0];
    if (d2_avail_[1]) second += 0.5 * vt2 * d2_[1];
    if (d2_avail_[2]) second += 0.5 * vt2 * d2_[2];
    if (d2_avail_[3]) second += 0.5 * m_yy * d2_[3];

    // Remaining diagonal budgets for monotone cross terms.
    double rem_p = d2_avail_[0] ? sp2 / hp_eff_ : 0.0;
    double rem_s = d2_avail_[1] ? vt2 / hs_ : 0.0;
    double rem_i = d2_avail_[2] ? vt2 / hi_ : 0.0;
    double rem_y = d2_avail_[3] ? m_yy / hy_ : 0.0;

    // (s,i): always nonpositive coefficient, antidiagonal form.
    if (si_avail_ && vt2 > 0.0) {
      double cap = std::min({vt2, rem_s * hi_, rem_i * hs_});
      if (cap > 0.0) {
        double vab = (d2_[1] * hs_ * hs_ + d2_[2] * hi_ * hi_ - (si_anti_ - 2.0 * v0_)) /
                     (2.0 * hs_ * hi_);
        second += -cap * vab;
        rem_s -= cap / hi_;
        rem_i -= cap / hs_;
      }
    }
    second += cross_y(0, m_yp, rem_p, rem_y, hp_eff_);
    second += cross_y(1, m_ys, rem_s, rem_y, hs_);
    second += cross_y(2, m_yi, rem_i, rem_y, hi_);

    // Nonlocal term
    double jump = 0.0;
    double lam_tot = 0.0;
    if (!flags_.aggregated_jump) {
      for (std::size_t k = 0; k < n_marks_; ++k) {
        jump += lam_[k][jh] * c.jval[k];
        lam_tot += lam_[k][jh];
      }
    } else {
      for (std::size_t k = 0; k < n_marks_; ++k) lam_tot += lam_[k][jh];
      if (lam_tot > 0.0) {
        double closs = 0.0;
        for (std::size_t k = 0; k < n_marks_; ++k)
          closs += m_.marks[k].loss * lam_[k][jh] / lam_tot;
        double ush = 0.0;
        for (std::size_t k = 0; k < n_marks_; ++k)
          ush += uk_[k] * lam_[k][jh] / lam_tot;
        double pshift = x_.p * (1.0 - closs);
        int jp = g_.p.bracket(pshift);
        jump = lam_tot * (interp_py(jp, g_.p.weight(jp, pshift), y_ + ush) - v0_);
      }
    }

    if (weight_out) {
      w += d2_avail_[0] ? sp2 / hpm_ / hpp_ : 0.0;
      w += d2_avail_[1] ? vt2 / (hs_ * hs_) : 0.0;
      w += d2_avail_[2] ? vt2 / (hi_ * hi_) : 0.0;
      w += d2_avail_[3] ? m_yy / (hy_ * hy_) : 0.0;
      w += lam_tot;
      *weight_out = w;
    }
    return first + second + jump - cost_p_[jh];
  }

  // Upwind one-sided first difference along axis; adds |b|/h to the weight.
  double up1(int axis, double b, double& w) {
    if (b == 0.0) return 0.0;
    int dir = b >= 0.0 ? 1 : 0;
    if (!d1_avail_[axis][dir]) dir = 1 - dir;
    if (!d1_avail_[axis][dir]) return 0.0;
    w += std::abs(b) / d1_h_[axis][dir];
    return b * d1_[axis][dir];
  }

  // Monotone-clipped cross term between axis a (0=p,1=s,2=i) and y.
  double cross_y(int a, double m_ab, double& rem_a, double& rem_y, double ha) {
    if (m_ab == 0.0 || !ycross_avail_[a]) return 0.0;
    double cap = std::min({std::abs(m_ab), rem_a * hy_, rem_y * ha});
    if (cap <= 0.0) return 0.0;
    rem_a -= cap / hy_;
    rem_y -= cap / ha;
    double d2a = d2_[a], d2y = d2_[3];
    if (m_ab > 0.0) {
      double vab = (ydiag_[a] - 2.0 * v0_ - d2a * ha * ha - d2y * hy_ * hy_) / (2.0 * ha * hy_);
      return cap * vab;
    }
    double vab = (d2a * ha * ha + d2y * hy_ * hy_ - (yanti_[a] - 2.0 * v0_)) / (2.0 * ha * hy_);
    return -cap * vab;
  }

  // Bilinear value at (p-bracket jp/wp, y query) on the node's (s,i) line.
  double interp_py(int jp, double wp, double yq) {
    int ny = g_.y.size();
    double yc = yq;
    if (yc < g_.y.lo()) {
      yc = g_.y.lo();
      ++jump_clamps_;
    } else if (yc > g_.y.hi()) {
      yc = g_.y.hi();
      ++jump_clamps_;
    }
    int jy = g_.y.bracket(yc);
    double wy = g_.y.weight(jy, yc);
    std::size_t base0 = g_.index(jp, is_, ii_, jy);
    std::size_t basep = g_.index(std::min(jp + 1, g_.p.size() - 1), is_, ii_, jy);
    int dy = ny > 1 ? 1 : 0;
    double v00 = v_[base0], v01 = v_[base0 + dy];
    double v10 = v_[basep], v11 = v_[basep + dy];
    return (1.0 - wp) * ((1.0 - wy) * v00 + wy * v01) + wp * ((1.0 - wy) * v10 + wy * v11);
  }

  int locate_h(double h) const {
    int best = 0;
    double d = std::abs(h_grid_[0] - h);
    for (Eigen::Index j = 1; j < h_grid_.size(); ++j) {
      double dj = std::abs(h_grid_[j] - h);
      if (dj < d) {
        d = dj;
        best = static_cast<int>(j);
      }
    }
    return best;
  }

  void gather_stencil() {
    auto val = [&](int ip, int is, int ii, int iy) { return v_[g_.index(ip, is, ii, iy)]; };
    int np = g_.p.size(), ns = g_.s.size(), ni = g_.i.size(), ny = g_.y.size();

    bool pm = ip_ > 0, pp = ip_ < np - 1;
    bool sm = is_ > 0 && g_.retained(is_ - 1, ii_);
    bool sp = is_ < ns - 1 && g_.retained(is_ + 1, ii_);
    bool im = ii_ > 0;
    bool ipl = ii_ < ni - 1 && g_.retained(is_, ii_ + 1);
    bool ym = iy_ > 0, yp = iy_ < ny - 1;

    hpm_ = pm ? g_.p.h[ip_ - 1] : 1.0;
    hpp_ = pp ? g_.p.h[ip_] : 1.0;
    hp_eff_ = std::min(hpm_, hpp_);
    hs_ = ns > 1 ? g_.s.h[0] : 1.0;
    hi_ = ni > 1 ? g_.i.h[0] : 1.0;
    hy_ = ny > 1 ? g_.y.h[0] : 1.0;

    double vpm = pm ? val(ip_ - 1, is_, ii_, iy_) : 0.0;
    double vpp = pp ? val(ip_ + 1, is_, ii_, iy_) : 0.0;
    double vsm = sm ? val(ip_, is_ - 1, ii_, iy_) : 0.0;
    double vsp = sp ? val(ip_, is_ + 1, ii_, iy_) : 0.0;
    double vim = im ? val(ip_, is_, ii_ - 1, iy_) : 0.0;
    double vip = ipl ? val(ip_, is_, ii_ + 1, iy_) : 0.0;
    double vym = ym ? val(ip_, is_, ii_, iy_ - 1) : 0.0;
    double vyp = yp ? val(ip_, is_, ii_, iy_ + 1) : 0.0;

    set_d1(0, pm, pp, vpm, vpp, hpm_, hpp_);
    set_d1(1, sm, sp, vsm, vsp, hs_, hs_);
    set_d1(2, im, ipl, vim, vip, hi_, hi_);
    set_d1(3, ym, yp, vym, vyp, hy_, hy_);

    d2_avail_[0] = pm && pp;
    d2_[0] = d2_avail_[0]
                 ? 2.0 * (hpm_ * vpp + hpp_ * vpm - (hpm_ + hpp_) * v0_) /
                       (hpm_ * hpp_ * (hpm_ + hpp_))
                 : 0.0;
    d2_avail_[1] = sm && sp;
    d2_[1] = d2_avail_[1] ? (vsp - 2.0 * v0_ + vsm) / (hs_ * hs_) : 0.0;
    d2_avail_[2] = im && ipl;
    d2_[2] = d2_avail_[2] ? (vip - 2.0 * v0_ + vim) / (hi_ * hi_) : 0.0;
    d2_avail_[3] = ym && yp;
    d2_[3] = d2_avail_[3] ? (vyp - 2.0 * v0_ + vym) / (hy_ * hy_) : 0.0;

    // (s,i) antidiagonal corners stay on s+i = const for equal spacings.
    si_avail_ = d2_avail_[1] && d2_avail_[2] && sp && im && sm && ipl &&
                g_.retained(is_ + 1, ii_ - 1) && g_.retained(is_ - 1, ii_ + 1);
    si_anti_ = si_avail_ ? val(ip_, is_ + 1, ii_ - 1, iy_) + val(ip_, is_ - 1, ii_ + 1, iy_) : 0.0;

    // (a,y) corner sums for a in {p,s,i}
    auto corner_pair = [&](int a, bool am, bool ap, int d_ip, int d_is, int d_ii) {
      ycross_avail_[a] = am && ap && d2_avail_[a] && d2_avail_[3] && ym && yp;
      if (!ycross_avail_[a]) {
        ydiag_[a] = yanti_[a] = 0.0;
        return;
      }
      ydiag_[a] = val(ip_ + d_ip, is_ + d_is, ii_ + d_ii, iy_ + 1) +
                  val(ip_ - d_ip, is_ - d_is, ii_ - d_ii, iy_ - 1);
      yanti_[a] = val(ip_ + d_ip, is_ + d_is, ii_ + d_ii, iy_ - 1) +
                  val(ip_ - d_ip, is_ - d_is, ii_ - d_ii, iy_ + 1);
    };
    corner_pair(0, pm, pp, 1, 0, 0);
    corner_pair(1, sm && g_.retained(is_ - 1, ii_), sp && g_.retained(is_ + 1, ii_), 0, 1, 0);
    corner_pair(2, im, ipl, 0, 0, 1);
  }

  void set_d1(int axis, bool minus_ok, bool plus_ok, double vm, double vp, double hm, double hp) {
    d1_avail_[axis][0] = minus_ok;
    d1_avail_[axis][1] = plus_ok;
    d1_[axis][0] = minus_ok ? (v0_ - vm) / hm : 0.0;
    d1_[axis][1] = plus_ok ? (vp - v0_) / hp : 0.0;
    d1_h_[axis][0] = hm;
    d1_h_[axis][1] = hp;
  }

  void precompute_h_arrays() {
    int nh = static_cast<int>(h_grid_.size());
    sp_.resize(nh);
    vt_.resize(nh);
    cost_p_.resize(nh);
    bs_eta_.resize(nh);
    bi_eta_.resize(nh);
    std::size_t nm = m_.marks.size();
    if (nm > 8) throw config_error("at most 8 jump marks supported");
    for (std::size_t k = 0; k < nm; ++k) lam_[k].resize(nh);
    double si = x_.s * x_.i;
    for (int jh = 0; jh < nh; ++jh) {
      double h = h_grid_[jh];
      sp_[jh] = m_.sigma_price(t_, x_, 0.0, h) * x_.p;
      vt_[jh] = m_.sigma_tilde(t_, x_, 0.0, h) * si;
      cost_p_[jh] = eval_principal_cost(m_, t_, x_, h);
      bs_eta_[jh] = -m_.beta * si - h * x_.s;
      bi_eta_[jh] = m_.beta * si - m_.rho * x_.i + h * x_.s;
      for (std::size_t k = 0; k < nm; ++k) lam_[k][jh] = m_.marks[k].rate(x_.i, h);
    }
  }

 private:
  // u components of the current candidate, refreshed by prepare().
  double uk_[8] = {0};

  const ModelParams& m_;
  const Grid4& g_;
  const std::vector<double>& v_;
  const SearchConfig& search_;
  const SolverFlags& flags_;
  const VectorXd& h_grid_;

  int ip_, is_, ii_, iy_;
  CyberState x_;
  double y_, t_;
  std::size_t idx0_;
  double v0_;

  double hpm_, hpp_, hp_eff_, hs_, hi_, hy_;
  bool d1_avail_[4][2];
  double d1_[4][2], d1_h_[4][2];
  bool d2_avail_[4];
  double d2_[4];
  bool si_avail_;
  double si_anti_;
  bool ycross_avail_[3];
  double ydiag_[3], yanti_[3];

  std::vector<double> sp_, vt_, cost_p_, bs_eta_, bi_eta_;
  std::vector<double> lam_[8];
  std::size_t n_marks_ = 0;
  int jp_[8] = {0};
  double wp_[8] = {0};

  double mu_p_ = 0.0, ky_jc_ = 0.0, pscale_ = 1.0;
  std::size_t jump_clamps_ = 0;
};

}  // namespace

double apply_local_operator(const ModelParams& params, const Grid4& grid,
                            const std::vector<double>& slice, NodeIndex node, double t,
                            const ControlPoint& cp, const SearchConfig& search,
                            const SolverFlags& flags, double* weight_out) {
  if (!grid.retained(node.is, node.ii))
    throw domain_error("apply_local_operator called on a masked node");
  VectorXd h_grid = hack_grid(params, search.n_h);
  NodeEval ev(params, grid, slice, node, t, search, h_grid, flags);
  return ev.eval_single(cp, weight_out);
}

namespace {

struct AxisSpec {
  int kind;  // 0 = z, 1 = u, 2 = gamma
  int comp;
};

double get_coord(const ControlPoint& cp, const AxisSpec& ax) {
  if (ax.kind == 0) return cp.z[ax.comp];
  if (ax.kind == 1) return cp.u[ax.comp];
  return cp.gamma[ax.comp];
}

void set_coord(ControlPoint& cp, const AxisSpec& ax, double val) {
  if (ax.kind == 0)
    cp.z[ax.comp] = val;
  else if (ax.kind == 1)
    cp.u[ax.comp] = val;
  else
    cp.gamma[ax.comp] = val;
}

}  // namespace

OptimizeResult optimize_node(const ModelParams& params, const Grid4& grid,
                             const std::vector<double>& slice, NodeIndex node, double t, double dt,
                             const SearchConfig& search, const SolverFlags& flags,
                             const ControlPoint& warm_start, bool exhaustive) {
  VectorXd h_grid = hack_grid(params, search.n_h);
  NodeEval ev(params, grid, slice, node, t, search, h_grid, flags);
  const std::size_t nm = params.marks.size();

  double R = search.radius;
  int nc = std::max(search.n_control, 1);
  std::vector<double> vals(nc);
  for (int j = 0; j < nc; ++j) vals[j] = nc == 1 ? 0.0 : -R + 2.0 * R * j / (nc - 1);
  auto snap = [&](double q) {
    if (nc == 1) return 0.0;
    int j = static_cast<int>(std::lround((q + R) / (2.0 * R) * (nc - 1)));
    return vals[std::clamp(j, 0, nc - 1)];
  };

  OptimizeResult out;
  ControlPoint cp = warm_start;
  if (cp.u.size() != static_cast<Eigen::Index>(nm)) cp.u = VectorXd::Zero(nm);
  for (int d = 0; d < 3; ++d) cp.z[d] = snap(cp.z[d]);
  for (std::size_t k = 0; k < nm; ++k) cp.u[k] = snap(cp.u[k]);
  for (int d = 0; d < 3; ++d) cp.gamma[d] = snap(cp.gamma[d]);

  auto eval_cp = [&](ControlPoint& c, double* hs, bool* feas) {
    return ev.eval_min_h(c, dt, hs, feas);
  };

  double h_star = 0.0;
  bool feasible = false;
  double best = eval_cp(cp, &h_star, &feasible);
  if (!feasible) {
    cp = ControlPoint::zero(nm, params.h_min);
    best = eval_cp(cp, &h_star, &feasible);
    if (!feasible)
      throw numerical_error(
          "zero-control candidate violates the monotonicity budget; increase nt");
    out.stability_hit = true;
  }

  if (exhaustive) {
    ControlPoint c = cp;
    for (int j1 = 0; j1 < nc; ++j1)
      for (int j2 = 0; j2 < nc; ++j2)
        for (int j3 = 0; j3 < nc; ++j3) {
          c.z = Vec3(vals[j1], vals[j2], vals[j3]);
          double hs = 0.0;
          bool ok = false;
          double q = eval_cp(c, &hs, &ok);
          if (!ok) {
            out.stability_hit = true;
            continue;
          }
          if (q > best) {
            best = q;
            cp = c;
            h_star = hs;
          }
        }
  } else {
    std::vector<AxisSpec> axes;
    for (int d = 0; d < 3; ++d) axes.push_back({0, d});
    for (std::size_t k = 0; k < nm; ++k) axes.push_back({1, static_cast<int>(k)});
    for (int d = 0; d < 3; ++d) axes.push_back({2, d});

    for (int sweep = 0; sweep < search.sweeps; ++sweep) {
      bool improved = false;
      for (const auto& ax : axes) {
        double cur = get_coord(cp, ax);
        ControlPoint c = cp;
        for (int j = 0; j < nc; ++j) {
          if (vals[j] == cur) continue;
          set_coord(c, ax, vals[j]);
          double hs = 0.0;
          bool ok = false;
          double q = eval_cp(c, &hs, &ok);
          if (!ok) {
            out.stability_hit = true;
            continue;
          }
          if (q > best) {
            best = q;
            cp = c;
            h_star = hs;
            improved = true;
          }
        }
      }
      if (!improved) break;
    }
  }

  for (int d = 0; d < 3; ++d)
    if (std::abs(cp.z[d]) >= R - 1e-12 || std::abs(cp.gamma[d]) >= R - 1e-12) out.box_hit = true;
  for (std::size_t k = 0; k < nm; ++k)
    if (std::abs(cp.u[static_cast<Eigen::Index>(k)]) >= R - 1e-12) out.box_hit = true;

  cp.h = h_star;
  out.q_star = best;
  out.cp = cp;
  return out;
}

std::vector<double> terminal_slice(const ModelParams& params, const Grid4& grid) {
  std::vector<double> v(grid.n_nodes(), std::numeric_limits<double>::quiet_NaN());
  for (int is = 0; is < grid.s.size(); ++is)
    for (int ii = 0; ii < grid.i.size(); ++ii) {
      if (!grid.retained(is, ii)) continue;
      for (int ip = 0; ip < grid.p.size(); ++ip)
        for (int iy = 0; iy < grid.y.size(); ++iy) {
          CyberState x{grid.p.x[ip], grid.s.x[is], grid.i.x[ii]};
          v[grid.index(ip, is, ii, iy)] = eval_principal_terminal(params, x, grid.y.x[iy]);
        }
    }
  return v;
}

int suggest_nt(const ModelParams& params, const Grid4& grid, double horizon,
               const SearchConfig& search) {
  VectorXd h_grid = hack_grid(params, search.n_h);
  SolverFlags flags;
  double wmax = 0.0;
  ControlPoint zero = ControlPoint::zero(params.marks.size(), params.h_min);
  std::vector<double> dummy(grid.n_nodes(), 0.0);
  for (int is = 0; is < grid.s.size(); ++is)
    for (int ii = 0; ii < grid.i.size(); ++ii) {
      if (!grid.retained(is, ii)) continue;
      for (int ip = 0; ip < grid.p.size(); ++ip)
        for (int iy = 0; iy < grid.y.size(); ++iy) {
          NodeEval ev(params, grid, dummy, {ip, is, ii, iy}, 0.0, search, h_grid, flags);
          for (Eigen::Index jh = 0; jh < h_grid.size(); ++jh) {
            ControlPoint cp = zero;
            cp.h = h_grid[jh];
            double w = 0.0;
            ev.eval_single(cp, &w);
            wmax = std::max(wmax, w);
          }
        }
    }
  return std::max(1, static_cast<int>(std::ceil(horizon * wmax / search.cfl_safety)));
}

Solution solve_backward(const ModelParams& params, const Grid4& grid, double horizon, int nt,
                        const SearchConfig& search, const SolverFlags& flags, int n_threads) {
  if (nt < 1) throw config_error("nt must be positive");
  if (!(horizon > 0.0)) throw config_error("horizon must be positive");

  Solution sol;
  sol.grid = grid;
  sol.horizon = horizon;
  sol.nt = nt;
  sol.dt = horizon / nt;
  sol.n_marks = static_cast<int>(params.marks.size());
  sol.h_grid = hack_grid(params, search.n_h);
  sol.flags = flags;

  int suggested = suggest_nt(params, grid, horizon, search);
  sol.diag.suggested_nt = suggested;
  if (nt < suggested) {
    std::ostringstream os;
    os << "CFL violation: nt=" << nt << " too coarse for this grid; need nt >= " << suggested;
    throw numerical_error(os.str());
  }

  std::vector<NodeIndex> nodes;
  nodes.reserve(grid.n_retained());
  for (int is = 0; is < grid.s.size(); ++is)
    for (int ii = 0; ii < grid.i.size(); ++ii) {
      if (!grid.retained(is, ii)) continue;
      for (int ip = 0; ip < grid.p.size(); ++ip)
        for (int iy = 0; iy < grid.y.size(); ++iy) nodes.push_back({ip, is, ii, iy});
    }

  sol.v.assign(nt + 1, {});
  sol.policy.assign(nt, {});
  sol.v[nt] = terminal_slice(params, grid);

  const int stride = sol.policy_stride();
  std::atomic<std::size_t> box_hits{0}, stab_hits{0};

  for (int n = nt - 1; n >= 0; --n) {
    double t = n * sol.dt;
    const std::vector<double>& vnext = sol.v[n + 1];
    std::vector<double> vcur(grid.n_nodes(), std::numeric_limits<double>::quiet_NaN());
    std::vector<float> pol(grid.n_nodes() * stride, 0.0f);
    const std::vector<float>* warm_pol = n + 1 < nt ? &sol.policy[n + 1] : nullptr;

    parallel_for(nodes.size(), n_threads, [&](std::size_t q) {
      NodeIndex node = nodes[q];
      std::size_t idx = grid.index(node.ip, node.is, node.ii, node.iy);
      ControlPoint warm = ControlPoint::zero(params.marks.size(), params.h_min);
      if (warm_pol) {
        const float* w = warm_pol->data() + idx * stride;
        warm.z = Vec3(w[0], w[1], w[2]);
        for (int k = 0; k < sol.n_marks; ++k) warm.u[k] = w[3 + k];
        warm.gamma = Vec3(w[3 + sol.n_marks], w[4 + sol.n_marks], w[5 + sol.n_marks]);
        warm.h = w[6 + sol.n_marks];
      }
      OptimizeResult r =
          optimize_node(params, grid, vnext, node, t, sol.dt, search, flags, warm);
      vcur[idx] = vnext[idx] + sol.dt * r.q_star;
      float* w = pol.data() + idx * stride;
      w[0] = static_cast<float>(r.cp.z[0]);
      w[1] = static_cast<float>(r.cp.z[1]);
      w[2] = static_cast<float>(r.cp.z[2]);
      for (int k = 0; k < sol.n_marks; ++k) w[3 + k] = static_cast<float>(r.cp.u[k]);
      w[3 + sol.n_marks] = static_cast<float>(r.cp.gamma[0]);
      w[4 + sol.n_marks] = static_cast<float>(r.cp.gamma[1]);
      w[5 + sol.n_marks] = static_cast<float>(r.cp.gamma[2]);
      w[6 + sol.n_marks] = static_cast<float>(r.cp.h);
      if (r.box_hit) ++box_hits;
      if (r.stability_hit) ++stab_hits;
    });

    for (const auto& node : nodes) {
      double v = vcur[grid.index(node.ip, node.is, node.ii, node.iy)];
      if (!std::isfinite(v))
        throw numerical_error("solver produced a non-finite value; check CFL/grid bounds");
      sol.diag.max_abs_value = std::max(sol.diag.max_abs_value, std::abs(v));
    }
    sol.v[n] = std::move(vcur);
    sol.policy[n] = std::move(pol);
  }

  sol.diag.box_hits = box_hits;
  sol.diag.stability_hits = stab_hits;
  return sol;
}

ControlPoint Solution::policy_at_node(int slice, std::size_t node) const {
  ControlPoint cp = ControlPoint::zero(n_marks, 0.0);
  const float* w = policy[slice].data() + node * policy_stride();
  cp.z = Vec3(w[0], w[1], w[2]);
  for (int k = 0; k < n_marks; ++k) cp.u[k] = w[3 + k];
  cp.gamma = Vec3(w[3 + n_marks], w[4 + n_marks], w[5 + n_marks]);
  cp.h = w[6 + n_marks];
  return cp;
}

ControlPoint Solution::policy_lookup(double t, double p, double s, double i, double y,
                                     bool* clamped) const {
  int n = std::clamp(static_cast<int>(std::floor(t / dt + 1e-9)), 0, nt - 1);
  CornerSet cs = gather_corners(grid, p, s, i, y);
  if (clamped) *clamped = cs.clamped;
  const int stride = policy_stride();
  ControlPoint cp = ControlPoint::zero(n_marks, 0.0);
  const std::vector<float>& pol = policy[n];
  double acc[16] = {0};
  for (int c = 0; c < cs.n; ++c) {
    const float* w = pol.data() + cs.idx[c] * stride;
    for (int d = 0; d < stride; ++d) acc[d] += cs.w[c] * w[d];
  }
  cp.z = Vec3(acc[0], acc[1], acc[2]);
  for (int k = 0; k < n_marks; ++k) cp.u[k] = acc[3 + k];
  cp.gamma = Vec3(acc[3 + n_marks], acc[4 + n_marks], acc[5 + n_marks]);
  cp.h = std::clamp(acc[6 + n_marks], h_grid[0], h_grid[h_grid.size() - 1]);
  return cp;
}

double Solution::value_lookup(double t, double p, double s, double i, double y) const {
  int n = std::clamp(static_cast<int>(std::lround(t / dt)), 0, nt);
  return interp4(grid, v[n], p, s, i, y);
}

double max_y_increase(const Solution& sol) {
  double worst = -std::numeric_limits<double>::infinity();
  const Grid4& g = sol.grid;
  if (g.y.size() < 2) return 0.0;
  for (const auto& slice : sol.v)
    for (int is = 0; is < g.s.size(); ++is)
      for (int ii = 0; ii < g.i.size(); ++ii) {
        if (!g.retained(is, ii)) continue;
        for (int ip = 0; ip < g.p.size(); ++ip)
          for (int iy = 0; iy + 1 < g.y.size(); ++iy)
            worst = std::max(worst, slice[g.index(ip, is, ii, iy + 1)] -
                                        slice[g.index(ip, is, ii, iy)]);
      }
  return worst;
}

}  // namespace cyrisk
