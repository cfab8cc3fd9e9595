#include "cyrisk/grid.hpp"

#include <algorithm>
#include <cmath>

namespace cyrisk {

int Axis::bracket(double q) const {
  int n = size();
  if (n == 1 || q <= x.front()) return 0;
  if (q >= x[n - 2]) return n - 2;
  int lo = 0, hi = n - 2;
  while (lo < hi) {
    int mid = (lo + hi + 1) / 2;
    if (x[mid] <= q)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

double Axis::weight(int j, double q) const {
  if (size() == 1) return 0.0;
  double w = (q - x[j]) / h[j];
  return std::clamp(w, 0.0, 1.0);
}

namespace {
Axis finish(std::vector<double> nodes) {
  Axis a;
  a.x = std::move(nodes);
  if (a.x.size() > 1) {
    a.h.resize(a.x.size() - 1);
    for (std::size_t j = 0; j + 1 < a.x.size(); ++j) a.h[j] = a.x[j + 1] - a.x[j];
  }
  return a;
}
}  // namespace

Axis uniform_axis(double lo, double hi, int n) {
  if (n < 1) throw config_error("axis needs at least one node");
  if (n == 1) return finish({lo});
  if (!(hi > lo)) throw config_error("axis bounds must satisfy lo < hi");
  std::vector<double> nodes(n);
  for (int j = 0; j < n; ++j) nodes[j] = lo + (hi - lo) * j / (n - 1);
  nodes.back() = hi;
  return finish(std::move(nodes));
}

Axis log_axis(double lo, double hi, int n) {
  if (!(lo > 0.0)) throw config_error("log axis requires lo > 0");
  if (n == 1) return finish({lo});
  if (!(hi > lo)) throw config_error("axis bounds must satisfy lo < hi");
  std::vector<double> nodes(n);
  double llo = std::log(lo), lhi = std::log(hi);
  for (int j = 0; j < n; ++j) nodes[j] = std::exp(llo + (lhi - llo) * j / (n - 1));
  nodes.front() = lo;
  nodes.back() = hi;
  return finish(std::move(nodes));
}

Grid4 build_grid(const GridConfig& cfg) {
  if (cfg.np < 1 || cfg.ns < 1 || cfg.ni < 1 || cfg.ny < 1 || cfg.nt < 1)
    throw config_error("grid node counts must be positive");
  Grid4 g;
  g.p = log_axis(cfg.p_min, cfg.p_max, cfg.np);
  g.s = uniform_axis(0.0, 1.0, cfg.ns);
  g.i = uniform_axis(0.0, 1.0, cfg.ni);
  g.y = uniform_axis(cfg.y_min, cfg.y_max, cfg.ny);
  g.mask_si.assign(static_cast<std::size_t>(cfg.ns) * cfg.ni, 0);
  for (int is = 0; is < cfg.ns; ++is)
    for (int ii = 0; ii < cfg.ni; ++ii)
      if (g.s.x[is] + g.i.x[ii] <= 1.0 + 1e-12)
        g.mask_si[static_cast<std::size_t>(is) * cfg.ni + ii] = 1;
  if (g.n_retained() == 0) throw config_error("grid mask retained no nodes");
  return g;
}

std::size_t Grid4::n_retained() const {
  std::size_t keep = 0;
  for (char c : mask_si)
    if (c) ++keep;
  return keep * p.size() * y.size();
}

CornerSet gather_corners(const Grid4& g, double pq, double sq, double iq, double yq) {
  CornerSet cs;
  cs.clamped = pq < g.p.lo() || pq > g.p.hi() || sq < g.s.lo() || sq > g.s.hi() ||
               iq < g.i.lo() || iq > g.i.hi() || yq < g.y.lo() || yq > g.y.hi();
  int jp = g.p.bracket(pq), js = g.s.bracket(sq), ji = g.i.bracket(iq), jy = g.y.bracket(yq);
  double wp = g.p.weight(jp, pq), ws = g.s.weight(js, sq), wi = g.i.weight(ji, iq),
         wy = g.y.weight(jy, yq);
  int np1 = g.p.size() > 1 ? 1 : 0, ns1 = g.s.size() > 1 ? 1 : 0, ni1 = g.i.size() > 1 ? 1 : 0,
      ny1 = g.y.size() > 1 ? 1 : 0;

  auto corner = [&](int is, int ii) {
    // Fall back towards smaller i until the (s,i) corner is retained.
    while (ii > 0 && !g.retained(is, ii)) --ii;
    return ii;
  };

  for (int dp = 0; dp <= np1; ++dp)
    for (int ds = 0; ds <= ns1; ++ds)
      for (int di = 0; di <= ni1; ++di)
        for (int dy = 0; dy <= ny1; ++dy) {
          double w = (dp ? wp : 1.0 - wp) * (ds ? ws : 1.0 - ws) * (di ? wi : 1.0 - wi) *
                     (dy ? wy : 1.0 - wy);
          if (w == 0.0) continue;
          int is = js + ds;
          int ii = corner(is, ji + di);
          cs.idx[cs.n] = g.index(jp + dp, is, ii, jy + dy);
          cs.w[cs.n] = w;
          ++cs.n;
        }
  return cs;
}

double interp4(const Grid4& g, const std::vector<double>& slice, double pq, double sq, double iq,
               double yq) {
  CornerSet cs = gather_corners(g, pq, sq, iq, yq);
  double out = 0.0;
  for (int k = 0; k < cs.n; ++k) out += cs.w[k] * slice[cs.idx[k]];
  return out;
}

}  // namespace cyrisk
