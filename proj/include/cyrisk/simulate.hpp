#pragma once

#include "cyrisk/model.hpp"
#include "cyrisk/rng.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace cyrisk {

struct SimConfig {
  int n_paths = 20000;
  double dt = 1.0 / 256.0;
  std::uint64_t seed = 42;
  double projection_tol = 0.01;    // max tolerated fraction of projected steps
  bool reference_measure = false;  // drop the effort drift, still record alpha
  int n_threads = 0;               // 0 = hardware concurrency
};

// State-feedback policies; the contract replay uses the (t,x,y)-coupled
// driver in the contract module instead.
using AgentPolicy = std::function<double(double t, const CyberState& x)>;
using HackerPolicy = std::function<double(double t, const CyberState& x)>;

struct JumpEvent {
  double t;
  int mark;
};

struct SimPath {
  std::vector<CyberState> states;   // n_steps + 1
  std::vector<double> a;            // agent action at each grid time
  std::vector<double> h;            // hacker action at each grid time
  std::vector<double> dw;           // 2 * n_steps Brownian increments (w1,w2 per step)
  std::vector<JumpEvent> jumps;     // strictly increasing times
  double dd_weight = 1.0;           // Doleans-Dade exponential at T
  double discount_T = 1.0;          // K_{0,T}
  double agent_cost_disc = 0.0;     // int K_{0,s} C^A ds
  double principal_cost = 0.0;      // int C^P ds (undiscounted)
  std::size_t n_projected = 0;      // simplex projections on this path
  std::size_t n_floored = 0;        // price-floor hits on this path
};

struct SimBatch {
  int n_paths = 0;
  int n_steps = 0;
  double dt = 0.0;
  double horizon = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> times;  // n_steps + 1
  std::vector<SimPath> paths;
  std::size_t projected_steps = 0;  // simplex projections triggered
  std::size_t floored_steps = 0;    // price floored at 1e-8

  double time_of(int step) const { return times[step]; }
};

namespace detail {

struct StepOut {
  CyberState x;
  double dw1 = 0.0, dw2 = 0.0;
  bool projected = false;
  bool floored = false;
  unsigned jump_mask = 0;  // bit k set when mark k fired
};

// One Euler step of the SIR-price system (shared by simulate_paths and the
// contract replay so the RNG stream layout matches exactly).
StepOut sir_price_step(const ModelParams& m, double t, const CyberState& x, double a_drift,
                       double h, double dt, PathRng& rng);

}  // namespace detail

// Euler-Maruyama for (p,s,i) with per-mark first-order jump thinning.
// Identical (params, policies, x0, config) give a bit-identical batch.
SimBatch simulate_paths(const ModelParams& params, const AgentPolicy& agent,
                        const HackerPolicy& hacker, const CyberState& x0, double horizon,
                        const SimConfig& cfg);

// Per-path Doleans-Dade exponential of the effort drift against the stored
// Brownian increments; requires a batch simulated under the reference
// (zero-effort) drift with the target policy recorded in the controls.
std::vector<double> doleans_exponential(const SimBatch& batch, const ModelParams& params);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int n = 0;
};

McEstimate mc_estimate(const std::vector<double>& samples);

// Discounted agent criterion K_{0,T}(U_A(xi) + F^A(X_T)) - int K C^A ds.
McEstimate estimate_agent_value(const SimBatch& batch, const ModelParams& params,
                                const std::vector<double>& xi);

// Principal criterion F^P(X_T) - U_A^{-1}(y_T - F^A(X_T)) - int C^P ds given
// the per-path terminal promised value y_T (from the contract module).
McEstimate principal_value_from_terminals(const SimBatch& batch, const ModelParams& params,
                                          const std::vector<double>& y_terminal);

}  // namespace cyrisk
