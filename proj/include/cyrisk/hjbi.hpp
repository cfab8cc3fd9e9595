#pragma once

#include "cyrisk/grid.hpp"
#include "cyrisk/hamiltonian.hpp"
#include "cyrisk/model.hpp"

#include <vector>

namespace cyrisk {

struct SearchConfig {
  int n_control = 21;      // points per z/u/gamma search axis
  int n_h = 21;            // hacker grid for the inner infimum
  double radius = 5.0;     // half-width of the z/u/gamma boxes
  int sweeps = 2;          // coordinate-descent passes
  double cfl_safety = 0.9; // explicit-step monotonicity budget
};

struct SolverFlags {
  bool aggregated_jump = false;    // paper-literal single aggregated jump term
  bool literal_sigma_row = false;  // paper-literal (z1,z2,z3) diffusion row for Y
};

// Principal's node controls: z in R^3, u in R^m, diagonal gamma, hacker h.
// The induced agent action is best_response_alpha(z), never stored.
struct ControlPoint {
  Vec3 z = Vec3::Zero();
  VectorXd u;
  Vec3 gamma = Vec3::Zero();
  double h = 0.0;

  static ControlPoint zero(std::size_t n_marks, double h0) {
    ControlPoint cp;
    cp.u = VectorXd::Zero(static_cast<Eigen::Index>(n_marks));
    cp.h = h0;
    return cp;
  }
};

struct NodeIndex {
  int ip = 0, is = 0, ii = 0, iy = 0;
};

struct SolverDiagnostics {
  std::size_t box_hits = 0;        // argmax on a control-box face
  std::size_t stability_hits = 0;  // candidates excluded by the CFL budget
  double max_abs_value = 0.0;
  int suggested_nt = 0;
};

// Discretized value and feedback fields. v has nt+1 slices (slice n at time
// n*dt); policy has nt slices, slice n applies on [t_n, t_{n+1}). Policy
// components per node: z1,z2,z3, u_1..u_m, g1,g2,g3, h (float storage).
struct Solution {
  Grid4 grid;
  double horizon = 0.0;
  int nt = 0;
  double dt = 0.0;
  int n_marks = 0;
  VectorXd h_grid;
  SolverFlags flags;
  std::vector<std::vector<double>> v;
  std::vector<std::vector<float>> policy;
  SolverDiagnostics diag;

  int policy_stride() const { return 7 + n_marks; }
  ControlPoint policy_at_node(int slice, std::size_t node) const;
  // Multilinear policy interpolation; piecewise constant in time.
  ControlPoint policy_lookup(double t, double p, double s, double i, double y,
                             bool* clamped = nullptr) const;
  double value_lookup(double t, double p, double s, double i, double y) const;
};

// Q^{z,u,gamma,h}[v] at one node: upwind first order, monotone-clipped second
// order, per-mark nonlocal term, minus C^P. weight_out (optional) receives
// the explicit-step center weight used by the CFL budget.
double apply_local_operator(const ModelParams& params, const Grid4& grid,
                            const std::vector<double>& slice, NodeIndex node, double t,
                            const ControlPoint& cp, const SearchConfig& search,
                            const SolverFlags& flags, double* weight_out = nullptr);

struct OptimizeResult {
  double q_star = 0.0;
  ControlPoint cp;
  bool box_hit = false;
  bool stability_hit = false;
};

// Coordinate search over the (z,u,gamma) box with exact inner minimization
// over the h grid; candidates breaking the monotonicity budget are excluded.
// exhaustive=true scans the full z-grid jointly (u,gamma frozen at the warm
// start), used as a test oracle on small problems.
OptimizeResult optimize_node(const ModelParams& params, const Grid4& grid,
                             const std::vector<double>& slice, NodeIndex node, double t, double dt,
                             const SearchConfig& search, const SolverFlags& flags,
                             const ControlPoint& warm_start, bool exhaustive = false);

// Explicit monotone backward sweep of the integro-HJBI equation.
Solution solve_backward(const ModelParams& params, const Grid4& grid, double horizon, int nt,
                        const SearchConfig& search, const SolverFlags& flags = {},
                        int n_threads = 0);

// Terminal condition F^P(x) - U_A^{-1}(y - F^A(x)) on retained nodes (masked
// entries are NaN).
std::vector<double> terminal_slice(const ModelParams& params, const Grid4& grid);

// Largest CFL-stable suggested time-step count for the uncontrolled part.
int suggest_nt(const ModelParams& params, const Grid4& grid, double horizon,
               const SearchConfig& search);

// max over slices and y-lines of v(.., y+1) - v(.., y); <= tol means the
// field is nonincreasing in y.
double max_y_increase(const Solution& sol);

}  // namespace cyrisk
