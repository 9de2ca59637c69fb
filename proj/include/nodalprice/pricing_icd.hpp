#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "nodalprice/equity.hpp"
#include "nodalprice/evsp_dispatch.hpp"
#include "nodalprice/grid_model.hpp"
#include "nodalprice/power_flow.hpp"
#include "nodalprice/qp_solver.hpp"

namespace nodal::icd {

struct IcdConfig {
  double alpha = 1.0;          // voltage-deviation weight (> 0)
  double beta = 0.0;           // equity weight (>= 0)
  double price_scale = 1000.0; // per-unit dual value -> $/kWh
  int max_outer_iters = 10;
  double price_tol = 1e-4;     // $/kWh, infinity norm across the price matrix
  double obj_tol = 1e-6;       // minimum objective improvement to keep going
  double kkt_tol = 1e-6;
  double dt_hours = 0.25;
  double pf_tol = 1e-8;
  int pf_max_iter = 20;
  std::uint64_t seed = 1;      // initial-price randomization
  std::optional<equity::PriceMatrix> lambda0;  // uniform [0.1, 0.5) draws when absent
  Exec mode = Exec::Parallel;
};

// One inner convex solve: battery schedules co-optimized against frozen
// per-timestep linearizations, with the closed-form dual prices and the
// epigraph equity pair (u, l) embedded in the same program.
struct InnerSolution {
  equity::PriceMatrix prices;        // closed-form duals at the optimal primal
  Eigen::MatrixXd p_b;               // K x T battery powers, MW
  pf::InjectionSchedule injections;  // implied scheduled injections, p.u.
  double u = 0.0, l = 0.0;           // epigraph burden bounds
  double objective = 0.0;   // alpha*deviation + energy cost + beta*(u - l)
  double deviation = 0.0;   // linearized voltage deviation, summed over steps
  double energy_cost = 0.0; // $ against the prior prices
  double consensus_residual = 0.0;
  qp::KktResidual kkt;
  Eigen::VectorXd x;        // raw QP iterate, for warm starts
  std::vector<int> active;  // active rows, for warm starts
};

struct IterRecord {
  int iter = 0;
  double objective = 0.0;
  double deviation = 0.0;
  double gamma = 0.0;
  double price_delta_inf = 0.0;
  double wall_ms = 0.0;
};

struct IcdSolution {
  equity::PriceMatrix prices;
  pf::InjectionSchedule injections;
  std::vector<evsp::DispatchSolution> dispatches;  // battery schedules, costed at `prices`
  double deviation = 0.0;    // linearized, from the winning inner solve
  double gamma_value = 0.0;
  double objective = 0.0;
  int outer_iters = 0;
  std::vector<IterRecord> log;
};

// Closed-form optimal dual of the deviation program: for each timestep column,
// price_scale * [2 * (pseudo-inverse gram) * dp]_K at the charging buses.
// `dp` holds per-unit real-power deltas as full n-vectors (the slack row is
// dropped to match the bundle reduction); `charging_buses` are internal bus
// indices, one per station, defining the row order of the result.
equity::PriceMatrix dual_price_from_primal(const pf::JacobianBundle& bundle,
                                           const Eigen::MatrixXd& dp,
                                           const std::vector<int>& charging_buses,
                                           double price_scale,
                                           std::vector<int> station_ids = {});

// Horizon variant: column t is priced with bundles[t].
equity::PriceMatrix dual_price_from_primal(const std::vector<pf::JacobianBundle>& bundles,
                                           const Eigen::MatrixXd& dp,
                                           const std::vector<int>& charging_buses,
                                           double price_scale,
                                           std::vector<int> station_ids = {});

InnerSolution build_and_solve_icd(const grid::Network& net,
                                  const std::vector<grid::LoadForecast>& forecasts,
                                  const std::vector<grid::StationConfig>& stations,
                                  const IcdConfig& cfg,
                                  const std::vector<pf::JacobianBundle>& bundles,
                                  const equity::PriceMatrix& lambda0,
                                  const InnerSolution* warm = nullptr);

IcdSolution run_icd(const grid::Network& net, const std::vector<grid::LoadForecast>& forecasts,
                    const std::vector<grid::StationConfig>& stations, const IcdConfig& cfg,
                    const std::function<void(const IterRecord&)>& log_sink = {});

}  // namespace nodal::icd
