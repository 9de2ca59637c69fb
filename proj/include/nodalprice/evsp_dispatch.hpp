#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nodalprice/common.hpp"

namespace nodal::evsp {

// One station's cost-minimizing battery dispatch problem over a price horizon.
// Prices are $/kWh, powers MW, energy MWh; positive battery power charges.
struct DispatchProblem {
  Eigen::VectorXd prices;   // $/kWh, length T
  Eigen::VectorXd load;     // MW inelastic charging demand, length T
  double capacity_e = 0.0;  // MWh
  double soc_init = 0.5;    // fraction in [0, 1]
  double p_max = 0.0;       // MW bound on |p_b|
  double dt_hours = 0.25;

  int T() const { return static_cast<int>(prices.size()); }
};

// Feasible, KKT-certified schedule. `mu` and `active` describe the dispatch
// QP's constraint state (rows ordered: p_b upper box, p_b lower box, SoC
// upper, SoC lower — T rows each) and feed the price-sensitivity machinery.
struct DispatchSolution {
  Eigen::VectorXd p_b;    // MW, length T, positive = charging
  Eigen::VectorXd soc;    // fractions, length T+1, soc[0] = soc_init
  Eigen::VectorXd p_net;  // MW, p_b + load
  double cost = 0.0;      // $, excludes the uniqueness regularizer
  Eigen::VectorXd mu;     // multipliers for the 4T inequality rows
  std::vector<int> active;
  int qp_iterations = 0;
};

// Thrown by soc_step when capacity_e = 0; callers must bypass the battery.
struct ZeroCapacity : Error {
  using Error::Error;
};

// Thrown by dispatch_oracle_dp for horizons beyond desk scale (T > 16).
struct TooLarge : Error {
  using Error::Error;
};

// Energy conversion factor: MW * dt_hours * ($/kWh) -> $.
inline double cost_scale(double dt_hours) { return 1000.0 * dt_hours; }

// Strictly convex uniqueness regularizer added to every dispatch objective
// (eps * ||p_b||^2). Price sensitivities differentiate the same KKT system,
// so the constant is shared through this header.
inline constexpr double kDispatchRegularizer = 1e-6;

double soc_step(double soc, double p_b, double dt_hours, double capacity_e);

DispatchSolution solve_dispatch(const DispatchProblem& prob);

// Exhaustive dynamic program over an SoC grid anchored at soc_init; the action
// set is the subset of grid transitions within p_max, so the result is an
// upper bound on the true optimum that tightens under refinement.
double dispatch_oracle_dp(const DispatchProblem& prob, int soc_levels, int power_levels);

// Independent per-station solves; Parallel distributes stations over OpenMP
// threads and yields bit-identical results to Serial.
std::vector<DispatchSolution> solve_batch(const std::vector<DispatchProblem>& probs,
                                          Exec mode = Exec::Parallel);

}  // namespace nodal::evsp
