#pragma once

#include "cyrisk/common.hpp"

#include <vector>

namespace cyrisk {

struct GridConfig {
  int np = 17, ns = 17, ni = 17, ny = 17;
  int nt = 64;
  double p_min = 0.25, p_max = 4.0;  // p-axis is log-spaced
  double y_min = -1.5, y_max = 0.5;
};

struct Axis {
  std::vector<double> x;  // node coordinates, strictly increasing
  std::vector<double> h;  // spacings h[j] = x[j+1] - x[j]

  int size() const { return static_cast<int>(x.size()); }
  double lo() const { return x.front(); }
  double hi() const { return x.back(); }

  // Bracketing index j with x[j] <= q <= x[j+1], clamped to the axis range.
  int bracket(double q) const;
  // Linear interpolation weight w on [x[j], x[j+1]]: value = (1-w) v[j] + w v[j+1].
  double weight(int j, double q) const;
};

Axis uniform_axis(double lo, double hi, int n);
Axis log_axis(double lo, double hi, int n);

// 4-d grid over (p, s, i, y). Nodes with s + i > 1 are masked out (the
// simplex constraint); storage stays rectangular and masked entries are
// never read by the solver.
struct Grid4 {
  Axis p, s, i, y;
  std::vector<char> mask_si;  // ns*ni, 1 if retained

  bool retained(int is, int ii) const { return mask_si[static_cast<std::size_t>(is) * i.size() + ii] != 0; }
  std::size_t n_nodes() const {
    return static_cast<std::size_t>(p.size()) * s.size() * i.size() * y.size();
  }
  std::size_t n_retained() const;
  std::size_t index(int ip, int is, int ii, int iy) const {
    return ((static_cast<std::size_t>(ip) * s.size() + is) * i.size() + ii) * y.size() + iy;
  }
};

Grid4 build_grid(const GridConfig& cfg);

// Corner stencil of a multilinear interpolation, clamped to the grid box.
// Masked (s+i>1) corners are substituted by their retained neighbours along
// the i-axis so interpolation near the simplex diagonal stays finite.
struct CornerSet {
  int n = 0;
  std::size_t idx[16];
  double w[16];
  bool clamped = false;  // query was outside the grid box
};
CornerSet gather_corners(const Grid4& g, double p, double s, double i, double y);

// Multilinear interpolation of a flat slice over the grid.
double interp4(const Grid4& g, const std::vector<double>& slice, double p, double s, double i,
               double y);

}  // namespace cyrisk
