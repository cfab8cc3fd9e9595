#pragma once

#include "cyrisk/hjbi.hpp"
#include "cyrisk/simulate.hpp"

#include <memory>
#include <string>

namespace cyrisk {

// Executable contract: the certified initial value Y0 plus the (Z,U,Gamma)
// and worst-case hacker feedbacks interpolated from the solved policy field.
struct ContractPolicy {
  std::shared_ptr<const Solution> solution;
  double y0 = 0.0;

  ControlPoint controls_at(double t, const CyberState& x, double y, bool* clamped = nullptr) const {
    return solution->policy_lookup(t, x.p, x.s, x.i, y, clamped);
  }
  double a_hat(double t, const CyberState& x, double y) const;
};

struct YResult {
  std::vector<double> y_terminal;       // Y_T per path
  std::vector<double> k_terminal;       // K_T per path
  double min_dk = 0.0;                  // most negative dK increment seen
  double mean_k_terminal = 0.0;
  std::size_t clamped_lookups = 0;      // feedback lookups outside the grid box
  std::vector<std::vector<double>> y_paths;  // filled when keep_paths
};

// Euler scheme for the promised-value process along stored paths, reusing the
// stored Brownian increments and jump events:
//   dY = [Z.b^c - G*(sigma^2(h))] dt + Z^T sigma dW + dK + sum_k U_k (dN_k - lambda0_k dt),
//   dK = [G* + 1/2 Tr(sigma sigma^T(h) Gamma) - Ghat(Gamma)] dt  (>= 0).
YResult forward_Y(const SimBatch& batch, const ContractPolicy& contract,
                  const ModelParams& params, bool keep_paths = false);

// Optional override of the agent's action during a replay (deviations).
using DeviationFn = std::function<double(double t, const CyberState& x, double y, double a_hat)>;

struct ContractSim {
  SimBatch batch;
  YResult y;
};

// Coupled (X,Y) simulation under the contract feedbacks: the agent plays
// best_response_alpha(Z) (or the deviation override), the hacker plays the
// extracted worst-case field. RNG stream layout matches simulate_paths, and
// forward_Y on the produced batch reproduces the same Y exactly.
ContractSim simulate_with_contract(const ModelParams& params, const ContractPolicy& contract,
                                   const CyberState& x0, double horizon, const SimConfig& cfg,
                                   const DeviationFn& deviation = nullptr);

// Principal criterion under the contract (forward-simulates Y on the batch).
McEstimate estimate_principal_value(const SimBatch& batch, const ModelParams& params,
                                    const ContractPolicy& contract);

struct DeviationSpec {
  std::string name;
  DeviationFn action;
};

// Constant efforts {0, mid, max}, scaled best responses {0.5, 1.5}, and a
// bang-bang-in-time profile; the recommended action itself comes first.
std::vector<DeviationSpec> default_deviation_library(const ModelParams& params, double horizon);

struct DeviationOutcome {
  std::string name;
  double value = 0.0;
  double std_error = 0.0;
  double gap = 0.0;       // value(a_hat) - value(deviation), paired by seed
  double gap_se = 0.0;
  bool pass = false;      // gap >= -3 * gap_se
};

struct ICReport {
  double value_recommended = 0.0;
  double se_recommended = 0.0;
  double y0 = 0.0;
  double representation_residual = 0.0;  // |value_recommended - y0|
  bool representation_pass = false;      // residual <= 3 se
  std::vector<DeviationOutcome> deviations;
  bool all_pass = false;
  double mean_k_terminal = 0.0;
  double min_dk = 0.0;
  int n_paths = 0;
  std::uint64_t seed = 0;
};

// Monte Carlo incentive-compatibility verification: every deviation is run
// with common random numbers against the frozen worst-case hacker field, and
// the recommended action's value is cross-checked against Y0.
ICReport verify_incentive_compatibility(const ModelParams& params, const ContractPolicy& contract,
                                        const std::vector<DeviationSpec>& deviations,
                                        const CyberState& x0, double horizon, SimConfig cfg);

struct ReservationResult {
  double y0 = 0.0;
  double value = 0.0;
};

// Scan of v(0, x0, y0) over [R0, y_max]: returns the maximizing certified
// value (smallest on ties) and the principal value there.
ReservationResult optimize_reservation(const ModelParams& params, const Solution& sol,
                                       const CyberState& x0);

}  // namespace cyrisk
