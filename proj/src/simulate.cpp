#include "cyrisk/simulate.hpp"

#include "cyrisk/parallel.hpp"
#include "cyrisk/rng.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace cyrisk {

namespace detail {

StepOut sir_price_step(const ModelParams& m, double t, const CyberState& x, double a_drift,
                       double h, double dt, PathRng& rng) {
  StepOut out;
  out.dw1 = rng.next_normal() * std::sqrt(dt);
  out.dw2 = rng.next_normal() * std::sqrt(dt);

  double si = x.s * x.i;
  double v = m.sigma_tilde(t, x, 0.0, h) * si;
  double mu = m.mu(t, x);
  double sp = m.sigma_price(t, x, 0.0, h);

  double p = x.p * (1.0 + mu * dt + sp * out.dw1);
  double drift_s = -m.beta * si - a_drift * x.s - h * x.s;
  double drift_i = m.beta * si - m.rho * x.i + h * x.s;
  double s = x.s + drift_s * dt - v * out.dw2;
  double i = x.i + drift_i * dt + v * out.dw2;

  // Per-mark thinning; one uniform per mark is always consumed so the
  // Brownian stream is unchanged when intensities are switched off.
  for (std::size_t k = 0; k < m.marks.size(); ++k) {
    double u = rng.next_uniform();
    double lam = m.marks[k].rate(x.i, h);
    if (u < -std::expm1(-lam * dt)) {
      p *= 1.0 - m.marks[k].loss;
      out.jump_mask |= 1u << k;
    }
  }

  if (p < 1e-8) {
    p = 1e-8;
    out.floored = true;
  }
  if (s < 0.0 || i < 0.0 || s + i > 1.0) {
    out.projected = true;
    s = std::max(s, 0.0);
    i = std::max(i, 0.0);
    double tot = s + i;
    if (tot > 1.0) {
      s /= tot;
      i /= tot;
    }
  }
  out.x = CyberState{p, s, i};
  return out;
}

}  // namespace detail

SimBatch simulate_paths(const ModelParams& params, const AgentPolicy& agent,
                        const HackerPolicy& hacker, const CyberState& x0, double horizon,
                        const SimConfig& cfg) {
  if (!(cfg.dt > 0.0)) throw config_error("dt must be positive");
  if (cfg.n_paths <= 0) throw config_error("n_paths must be positive");
  double steps_real = horizon / cfg.dt;
  int n_steps = static_cast<int>(std::llround(steps_real));
  if (n_steps < 1 || std::abs(n_steps * cfg.dt - horizon) > 1e-9 * std::max(1.0, horizon))
    throw config_error("horizon must be an integral multiple of dt");
  require_valid_state(x0);

  SimBatch batch;
  batch.n_paths = cfg.n_paths;
  batch.n_steps = n_steps;
  batch.dt = cfg.dt;
  batch.horizon = horizon;
  batch.seed = cfg.seed;
  batch.times.resize(n_steps + 1);
  for (int j = 0; j <= n_steps; ++j) batch.times[j] = j * cfg.dt;
  batch.paths.resize(cfg.n_paths);

  std::atomic<bool> bad_action{false}, bad_hack{false};

  parallel_for(static_cast<std::size_t>(cfg.n_paths), cfg.n_threads, [&](std::size_t ip) {
    PathRng rng(cfg.seed, ip);
    SimPath& path = batch.paths[ip];
    path.states.resize(n_steps + 1);
    path.a.resize(n_steps + 1);
    path.h.resize(n_steps + 1);
    path.dw.resize(2 * static_cast<std::size_t>(n_steps));

    CyberState x = x0;
    path.states[0] = x;
    path.a[0] = agent(0.0, x);
    path.h[0] = hacker(0.0, x);
    if (path.a[0] < params.a_min - 1e-12 || path.a[0] > params.a_max + 1e-12) bad_action = true;
    if (path.h[0] < params.h_min - 1e-12 || path.h[0] > params.h_max + 1e-12) bad_hack = true;

    double kacc = 1.0;  // K_{0,t}
    double k_prev = params.discount_k(0.0, x);
    double ca_prev = eval_agent_cost(params, 0.0, x, path.a[0]);
    double cp_prev = eval_principal_cost(params, 0.0, x, path.h[0]);

    for (int j = 0; j < n_steps; ++j) {
      double t = batch.times[j];
      double a_drift = cfg.reference_measure ? 0.0 : path.a[j];
      auto step = detail::sir_price_step(params, t, x, a_drift, path.h[j], cfg.dt, rng);
      path.dw[2 * j] = step.dw1;
      path.dw[2 * j + 1] = step.dw2;
      for (std::size_t k = 0; k < params.marks.size(); ++k)
        if (step.jump_mask & (1u << k))
          path.jumps.push_back(
              JumpEvent{t + cfg.dt * (k + 1.0) / (params.marks.size() + 1.0), static_cast<int>(k)});
      if (step.projected) ++path.n_projected;
      if (step.floored) ++path.n_floored;
      x = step.x;
      path.states[j + 1] = x;

      double tn = batch.times[j + 1];
      path.a[j + 1] = agent(tn, x);
      path.h[j + 1] = hacker(tn, x);
      if (path.a[j + 1] < params.a_min - 1e-12 || path.a[j + 1] > params.a_max + 1e-12)
        bad_action = true;
      if (path.h[j + 1] < params.h_min - 1e-12 || path.h[j + 1] > params.h_max + 1e-12)
        bad_hack = true;

      double k_new = params.discount_k(tn, x);
      kacc *= std::exp(0.5 * (k_prev + k_new) * cfg.dt);
      k_prev = k_new;
      double ca_new = kacc * eval_agent_cost(params, tn, x, path.a[j + 1]);
      double cp_new = eval_principal_cost(params, tn, x, path.h[j + 1]);
      path.agent_cost_disc += 0.5 * (ca_prev + ca_new) * cfg.dt;
      path.principal_cost += 0.5 * (cp_prev + cp_new) * cfg.dt;
      ca_prev = ca_new;
      cp_prev = cp_new;
    }
    path.discount_T = kacc;
  });

  if (bad_action) throw domain_error("agent policy returned an action outside A");
  if (bad_hack) throw domain_error("hacker policy returned an action outside H");

  for (const auto& p : batch.paths) {
    batch.projected_steps += p.n_projected;
    batch.floored_steps += p.n_floored;
  }
  double frac = static_cast<double>(batch.projected_steps) /
                (static_cast<double>(batch.n_paths) * batch.n_steps);
  if (frac > cfg.projection_tol) {
    std::ostringstream os;
    os << "simplex projection triggered on " << 100.0 * frac << "% of steps (tolerance "
       << 100.0 * cfg.projection_tol << "%); reduce dt";
    throw numerical_error(os.str());
  }
  return batch;
}

std::vector<double> doleans_exponential(const SimBatch& batch, const ModelParams& params) {
  std::vector<double> weights(batch.n_paths, 1.0);
  constexpr double sv_floor = 1e-10;
  for (int ip = 0; ip < batch.n_paths; ++ip) {
    const SimPath& path = batch.paths[ip];
    double log_w = 0.0;
    for (int j = 0; j < batch.n_steps; ++j) {
      double t = batch.times[j];
      const CyberState& x = path.states[j];
      double beta_s = -path.a[j] * x.s;  // effort drift enters the s-row only
      if (beta_s == 0.0) continue;
      double v = params.sigma_tilde(t, x, 0.0, path.h[j]) * x.i * x.s;
      // theta = sigma^T (sigma sigma^T)^+ beta. The S/I noise channel of
      // sigma sigma^T carries singular value 2 v^2; below the floor the
      // pseudo-inverse truncates it, which with nonzero effort means the
      // drift shift is unrepresentable.
      if (2.0 * v * v <= sv_floor) {
        std::ostringstream os;
        os << "sigma sigma^T numerically non-invertible on the effort channel at t=" << t
           << " (p or s*i collapsed) with nonzero effort";
        throw numerical_error(os.str());
      }
      double theta2 = -beta_s / (2.0 * v);
      log_w += theta2 * path.dw[2 * j + 1] - 0.5 * theta2 * theta2 * batch.dt;
    }
    weights[ip] = std::exp(log_w);
  }
  return weights;
}

McEstimate mc_estimate(const std::vector<double>& samples) {
  McEstimate e;
  e.n = static_cast<int>(samples.size());
  if (e.n == 0) throw config_error("empty sample set");
  double sum = 0.0;
  for (double v : samples) sum += v;
  e.mean = sum / e.n;
  if (e.n > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / (e.n - 1) / e.n);
  }
  return e;
}

McEstimate estimate_agent_value(const SimBatch& batch, const ModelParams& params,
                                const std::vector<double>& xi) {
  if (static_cast<int>(xi.size()) != batch.n_paths)
    throw config_error("xi must have one entry per path");
  std::vector<double> vals(batch.n_paths);
  for (int ip = 0; ip < batch.n_paths; ++ip) {
    const SimPath& path = batch.paths[ip];
    const CyberState& xT = path.states.back();
    double terminal = params.utility_a.value(xi[ip]) + params.terminal_fa(0.0, xT);
    vals[ip] = path.discount_T * terminal - path.agent_cost_disc;
  }
  return mc_estimate(vals);
}

McEstimate principal_value_from_terminals(const SimBatch& batch, const ModelParams& params,
                                          const std::vector<double>& y_terminal) {
  if (static_cast<int>(y_terminal.size()) != batch.n_paths)
    throw config_error("y_terminal must have one entry per path");
  std::vector<double> vals(batch.n_paths);
  for (int ip = 0; ip < batch.n_paths; ++ip) {
    const SimPath& path = batch.paths[ip];
    const CyberState& xT = path.states.back();
    vals[ip] = eval_principal_terminal(params, xT, y_terminal[ip]) - path.principal_cost;
  }
  return mc_estimate(vals);
}

}  // namespace cyrisk
