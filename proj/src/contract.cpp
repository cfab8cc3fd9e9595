#include "cyrisk/contract.hpp"

#include "cyrisk/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cyrisk {

double ContractPolicy::a_hat(double t, const CyberState& x, double y) const {
  ControlPoint cp = controls_at(t, x, y);
  return best_response_alpha(solution->grid.p.x.empty() ? ModelParams::defaults()
                                                        : *params_unused_, t, x, cp.z);
}

namespace {

struct YStepOut {
  double dy = 0.0;
  double dk = 0.0;
  bool clamped = false;
};

// Shared single-step Y update so the coupled simulation and the replay are
// bitwise identical.
YStepOut y_step(const ModelParams& m, const ContractPolicy& contract, double t,
                const CyberState& x, double y, double h, double dw1, double dw2,
                unsigned jump_mask, double dt) {
  const Solution& sol = *contract.solution;
  YStepOut out;
  ControlPoint cp = contract.controls_at(t, x, y, &out.clamped);
  CoState cs;
  cs.y = y;
  cs.z = cp.z;
  cs.u = cp.u;

  double gstar = eval_G_star_at(m, t, x, cs, h);
  Mat3 gamma = cp.gamma.asDiagonal();
  double ghat = eval_G_hat(m, t, x, cs, gamma, sol.h_grid);
  double tr = trace_sigma2_gamma(m, t, x, h, gamma);
  out.dk = (gstar + 0.5 * tr - ghat) * dt;

  double a = best_response_alpha(m, t, x, cp.z);
  Vec3 b = eval_drift_continuous(m, t, x, a, h);

  double zsig;
  if (sol.flags.literal_sigma_row) {
    zsig = cp.z[0] * dw1 + cp.z[1] * dw2;
  } else {
    double sp = m.sigma_price(t, x, 0.0, h) * x.p;
    double vt = m.sigma_tilde(t, x, 0.0, h) * x.i * x.s;
    zsig = cp.z[0] * sp * dw1 + (cp.z[2] - cp.z[1]) * vt * dw2;
  }

  double jumps = 0.0;
  double comp = 0.0;
  for (std::size_t k = 0; k < m.marks.size(); ++k) {
    if (jump_mask & (1u << k)) jumps += cp.u[static_cast<Eigen::Index>(k)];
    comp += cp.u[static_cast<Eigen::Index>(k)] * m.lambda0[static_cast<Eigen::Index>(k)];
  }

  out.dy = (cp.z.dot(b) - gstar) * dt + zsig + out.dk + jumps - comp * dt;
  return out;
}

// Per-step jump masks reconstructed from the (strictly increasing) jump log.
std::vector<unsigned> step_jump_masks(const SimBatch& batch, const SimPath& path) {
  std::vector<unsigned> masks(batch.n_steps, 0u);
  for (const auto& ev : path.jumps) {
    int j = std::clamp(static_cast<int>(ev.t / batch.dt), 0, batch.n_steps - 1);
    masks[j] |= 1u << ev.mark;
  }
  return masks;
}

}  // namespace

YResult forward_Y(const SimBatch& batch, const ContractPolicy& contract, const ModelParams& params,
                  bool keep_paths) {
  YResult res;
  res.y_terminal.resize(batch.n_paths);
  res.k_terminal.resize(batch.n_paths);
  if (keep_paths) res.y_paths.assign(batch.n_paths, {});
  std::vector<double> min_dk(batch.n_paths, 0.0);
  std::vector<std::size_t> clamps(batch.n_paths, 0);

  parallel_for(static_cast<std::size_t>(batch.n_paths), 0, [&](std::size_t ip) {
    const SimPath& path = batch.paths[ip];
    std::vector<unsigned> masks = step_jump_masks(batch, path);
    double y = contract.y0;
    double k = 0.0;
    std::vector<double>* trail = keep_paths ? &res.y_paths[ip] : nullptr;
    if (trail) {
      trail->reserve(batch.n_steps + 1);
      trail->push_back(y);
    }
    for (int j = 0; j < batch.n_steps; ++j) {
      YStepOut st = y_step(params, contract, batch.times[j], path.states[j], y, path.h[j],
                           path.dw[2 * j], path.dw[2 * j + 1], masks[j], batch.dt);
      y += st.dy;
      k += st.dk;
      min_dk[ip] = std::min(min_dk[ip], st.dk);
      if (st.clamped) ++clamps[ip];
      if (trail) trail->push_back(y);
    }
    res.y_terminal[ip] = y;
    res.k_terminal[ip] = k;
  });

  res.min_dk = 0.0;
  double ksum = 0.0;
  for (int ip = 0; ip < batch.n_paths; ++ip) {
    res.min_dk = std::min(res.min_dk, min_dk[ip]);
    res.clamped_lookups += clamps[ip];
    ksum += res.k_terminal[ip];
  }
  res.mean_k_terminal = ksum / batch.n_paths;
  return res;
}

ContractSim simulate_with_contract(const ModelParams& params, const ContractPolicy& contract,
                                   const CyberState& x0, double horizon, const SimConfig& cfg,
                                   const DeviationFn& deviation) {
  if (!(cfg.dt > 0.0)) throw config_error("dt must be positive");
  if (cfg.n_paths <= 0) throw config_error("n_paths must be positive");
  int n_steps = static_cast<int>(std::llround(horizon / cfg.dt));
  if (n_steps < 1 || std::abs(n_steps * cfg.dt - horizon) > 1e-9 * std::max(1.0, horizon))
    throw config_error("horizon must be an integral multiple of dt");
  require_valid_state(x0);

  ContractSim out;
  SimBatch& batch = out.batch;
  batch.n_paths = cfg.n_paths;
  batch.n_steps = n_steps;
  batch.dt = cfg.dt;
  batch.horizon = horizon;
  batch.seed = cfg.seed;
  batch.times.resize(n_steps + 1);
  for (int j = 0; j <= n_steps; ++j) batch.times[j] = j * cfg.dt;
  batch.paths.resize(cfg.n_paths);

  YResult& yres = out.y;
  yres.y_terminal.resize(cfg.n_paths);
  yres.k_terminal.resize(cfg.n_paths);
  std::vector<double> min_dk(cfg.n_paths, 0.0);
  std::vector<std::size_t> clamps(cfg.n_paths, 0);

  parallel_for(static_cast<std::size_t>(cfg.n_paths), cfg.n_threads, [&](std::size_t ip) {
    PathRng rng(cfg.seed, ip);
    SimPath& path = batch.paths[ip];
    path.states.resize(n_steps + 1);
    path.a.resize(n_steps + 1);
    path.h.resize(n_steps + 1);
    path.dw.resize(2 * static_cast<std::size_t>(n_steps));

    CyberState x = x0;
    double y = contract.y0;
    double k = 0.0;
    path.states[0] = x;

    auto controls = [&](double t, const CyberState& xс, double yс) {
      ControlPoint cp = contract.controls_at(t, xс, yс);
      double ah = best_response_alpha(params, t, xс, cp.z);
      double a = deviation ? std::clamp(deviation(t, xс, yс, ah), params.a_min, params.a_max) : ah;
      return std::pair<double, double>(a, cp.h);
    };

    auto [a0, h0] = controls(0.0, x, y);
    path.a[0] = a0;
    path.h[0] = h0;

    double kacc = 1.0;
    double k_prev = params.discount_k(0.0, x);
    double ca_prev = eval_agent_cost(params, 0.0, x, a0);
    double cp_prev = eval_principal_cost(params, 0.0, x, h0);

    for (int j = 0; j < n_steps; ++j) {
      double t = batch.times[j];
      auto step = detail::sir_price_step(params, t, x, path.a[j], path.h[j], cfg.dt, rng);
      path.dw[2 * j] = step.dw1;
      path.dw[2 * j + 1] = step.dw2;
      for (std::size_t km = 0; km < params.marks.size(); ++km)
        if (step.jump_mask & (1u << km))
          path.jumps.push_back(JumpEvent{t + cfg.dt * (km + 1.0) / (params.marks.size() + 1.0),
                                         static_cast<int>(km)});
      if (step.projected) ++path.n_projected;
      if (step.floored) ++path.n_floored;

      YStepOut yst = y_step(params, contract, t, x, y, path.h[j], step.dw1, step.dw2,
                            step.jump_mask, cfg.dt);
      y += yst.dy;
      k += yst.dk;
      min_dk[ip] = std::min(min_dk[ip], yst.dk);
      if (yst.clamped) ++clamps[ip];

      x = step.x;
      path.states[j + 1] = x;
      double tn = batch.times[j + 1];
      auto [an, hn] = controls(tn, x, y);
      path.a[j + 1] = an;
      path.h[j + 1] = hn;

      double k_new = params.discount_k(tn, x);
      kacc *= std::exp(0.5 * (k_prev + k_new) * cfg.dt);
      k_prev = k_new;
      double ca_new = kacc * eval_agent_cost(params, tn, x, an);
      double cp_new = eval_principal_cost(params, tn, x, hn);
      path.agent_cost_disc += 0.5 * (ca_prev + ca_new) * cfg.dt;
      path.principal_cost += 0.5 * (cp_prev + cp_new) * cfg.dt;
      ca_prev = ca_new;
      cp_prev = cp_new;
    }
    path.discount_T = kacc;
    yres.y_terminal[ip] = y;
    yres.k_terminal[ip] = k;
  });

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

  yres.min_dk = 0.0;
  double ksum = 0.0;
  for (int ip = 0; ip < cfg.n_paths; ++ip) {
    yres.min_dk = std::min(yres.min_dk, min_dk[ip]);
    yres.clamped_lookups += clamps[ip];
    ksum += yres.k_terminal[ip];
  }
  yres.mean_k_terminal = ksum / cfg.n_paths;
  return out;
}

McEstimate estimate_principal_value(const SimBatch& batch, const ModelParams& params,
                                    const ContractPolicy& contract) {
  YResult y = forward_Y(batch, contract, params);
  return principal_value_from_terminals(batch, params, y.y_terminal);
}

std::vector<DeviationSpec> default_deviation_library(const ModelParams& params, double horizon) {
  std::vector<DeviationSpec> lib;
  lib.push_back({"recommended", [](double, const CyberState&, double, double ah) { return ah; }});
  lib.push_back({"const_zero",
                 [a = params.a_min](double, const CyberState&, double, double) { return a; }});
  lib.push_back({"const_mid", [a = 0.5 * (params.a_min + params.a_max)](
                                  double, const CyberState&, double, double) { return a; }});
  lib.push_back({"const_max",
                 [a = params.a_max](double, const CyberState&, double, double) { return a; }});
  lib.push_back(
      {"half_best", [](double, const CyberState&, double, double ah) { return 0.5 * ah; }});
  lib.push_back({"one_and_half_best",
                 [](double, const CyberState&, double, double ah) { return 1.5 * ah; }});
  lib.push_back({"bang_bang", [半 = 0.5 * horizon, lo = params.a_min, hi = params.a_max](
                                  double t, const CyberState&, double, double) {
                   return t < 半 ? hi : lo;
                 }});
  return lib;
}

namespace {
std::vector<double> agent_values(const SimBatch& batch, const ModelParams& params,
                                 const std::vector<double>& y_terminal) {
  std::vector<double> xi(batch.n_paths);
  for (int ip = 0; ip < batch.n_paths; ++ip) {
    const CyberState& xT = batch.paths[ip].states.back();
    xi[ip] = params.utility_a.inverse(y_terminal[ip] - params.terminal_fa(0.0, xT));
  }
  std::vector<double> vals(batch.n_paths);
  for (int ip = 0; ip < batch.n_paths; ++ip) {
    const SimPath& path = batch.paths[ip];
    const CyberState& xT = path.states.back();
    double terminal = params.utility_a.value(xi[ip]) + params.terminal_fa(0.0, xT);
    vals[ip] = path.discount_T * terminal - path.agent_cost_disc;
  }
  return vals;
}
}  // namespace

ICReport verify_incentive_compatibility(const ModelParams& params, const ContractPolicy& contract,
                                        const std::vector<DeviationSpec>& deviations,
                                        const CyberState& x0, double horizon, SimConfig cfg) {
  bool has_recommended = false;
  for (const auto& d : deviations)
    if (d.name == "recommended") has_recommended = true;
  if (!has_recommended)
    throw config_error("deviation set must include the recommended action (name 'recommended')");

  ICReport report;
  report.n_paths = cfg.n_paths;
  report.seed = cfg.seed;
  report.y0 = contract.y0;

  ContractSim base = simulate_with_contract(params, contract, x0, horizon, cfg);
  std::vector<double> base_vals = agent_values(base.batch, params, base.y.y_terminal);
  McEstimate base_est = mc_estimate(base_vals);
  report.value_recommended = base_est.mean;
  report.se_recommended = base_est.std_error;
  report.representation_residual = std::abs(base_est.mean - contract.y0);
  report.representation_pass = report.representation_residual <= 3.0 * base_est.std_error;
  report.mean_k_terminal = base.y.mean_k_terminal;
  report.min_dk = base.y.min_dk;

  report.all_pass = report.representation_pass;
  for (const auto& dev : deviations) {
    DeviationOutcome oc;
    oc.name = dev.name;
    if (dev.name == "recommended") {
      oc.value = base_est.mean;
      oc.std_error = base_est.std_error;
      oc.gap = 0.0;
      oc.gap_se = 0.0;
      oc.pass = true;
    } else {
      ContractSim run = simulate_with_contract(params, contract, x0, horizon, cfg, dev.action);
      std::vector<double> vals = agent_values(run.batch, params, run.y.y_terminal);
      McEstimate est = mc_estimate(vals);
      oc.value = est.mean;
      oc.std_error = est.std_error;
      std::vector<double> gaps(vals.size());
      for (std::size_t j = 0; j < vals.size(); ++j) gaps[j] = base_vals[j] - vals[j];
      McEstimate gap_est = mc_estimate(gaps);
      oc.gap = gap_est.mean;
      oc.gap_se = gap_est.std_error;
      oc.pass = gap_est.mean >= -3.0 * gap_est.std_error;
    }
    if (!oc.pass) report.all_pass = false;
    report.deviations.push_back(std::move(oc));
  }
  return report;
}

ReservationResult optimize_reservation(const ModelParams& params, const Solution& sol,
                                       const CyberState& x0) {
  double r0 = params.reservation_r0;
  const Axis& yax = sol.grid.y;
  if (r0 > yax.hi() + 1e-12) throw config_error("reservation R0 lies above the y-grid maximum");
  if (r0 < yax.lo() - 1e-12) throw config_error("reservation R0 lies below the y-grid minimum");

  auto value_at = [&](double y0) { return interp4(sol.grid, sol.v[0], x0.p, x0.s, x0.i, y0); };

  ReservationResult best{r0, value_at(r0)};
  for (int j = 0; j < yax.size(); ++j) {
    double y0 = yax.x[j];
    if (y0 < r0) continue;
    double v = value_at(y0);
    if (v > best.value + 1e-14) best = ReservationResult{y0, v};
  }
  return best;
}

}  // namespace cyrisk
