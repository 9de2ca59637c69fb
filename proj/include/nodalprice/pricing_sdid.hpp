#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "nodalprice/equity.hpp"
#include "nodalprice/evsp_dispatch.hpp"
#include "nodalprice/grid_model.hpp"
#include "nodalprice/power_flow.hpp"

namespace nodal::sdid {

// Initial price matrix shape: Flat draws one level per station and holds it
// across the horizon (keeps the initial dispatch on the smooth even-drain
// face); PerEntry draws every (station, timestep) cell independently.
enum class PriceInit { Flat, PerEntry };

struct SdidConfig {
  double alpha = 1.0;        // deviation weight
  double beta = 0.0;         // equity weight
  double eta_init = 5.0;     // subgradient step size
  double gamma_decay = 0.9;  // multiplier in (0, 1]
  bool decay = false;
  int n_iters = 50;
  std::uint64_t seed = 1;
  bool fd_check = false;  // validate the first iteration's gradient against
                          // finite differences (frozen linearizations)
  double dt_hours = 0.25;
  double pf_tol = 1e-8;
  int pf_max_iter = 20;
  PriceInit init = PriceInit::Flat;
  double init_lo = 0.1, init_hi = 0.5;  // $/kWh draw range
  std::optional<equity::PriceMatrix> lambda0;  // explicit start overrides init
  Exec mode = Exec::Parallel;
};

// d(p_net)/d(lambda) for one station, T x T. Zero rows where active battery
// bounds pin the dispatch. degenerate_active_set marks a constraint that is
// tight with a vanishing multiplier; the returned matrix is then a one-sided
// subgradient element (all tight rows held active).
struct SensitivityBlock {
  Eigen::MatrixXd dp_dlambda;
  bool degenerate_active_set = false;
  std::vector<int> degenerate_rows;
};

struct SdidIter {
  int iter = 0;
  double F = 0.0;
  double deviation = 0.0;
  double gamma = 0.0;
  double eta = 0.0;
  double wall_ms = 0.0;
  Eigen::MatrixXd prices;  // snapshot the record was evaluated at
};

struct SdidTrace {
  std::vector<SdidIter> records;
  double fd_error = -1.0;  // max relative gradient error when fd_check ran
};

struct SdidResult {
  equity::PriceMatrix prices;  // best-F iterate
  SdidTrace trace;
  int best_iter = 0;
  double best_F = 0.0;
  double deviation = 0.0;   // at the best iterate
  double gamma_value = 0.0; // at the best iterate
  std::vector<evsp::DispatchSolution> dispatches;  // at the best iterate
  pf::InjectionSchedule injections;                // at the best iterate
};

// F = alpha * sum_t ||pinv [dP; 0]||^2 - beta * gamma(prices), with dP the
// per-unit successive deltas of station net power placed at `charging_buses`.
double objective_F(const equity::PriceMatrix& prices,
                   const std::vector<evsp::DispatchSolution>& dispatches,
                   const std::vector<pf::JacobianBundle>& bundles, double alpha, double beta,
                   const std::vector<int>& charging_buses, double base_mva);

SensitivityBlock dispatch_sensitivity(const evsp::DispatchProblem& prob,
                                      const evsp::DispatchSolution& sol);

// Chain rule: deviation gradient through each station's SensitivityBlock,
// plus the equity subgradient on the argmax/argmin burden rows.
Eigen::MatrixXd grad_F(const equity::PriceMatrix& prices,
                       const std::vector<evsp::DispatchSolution>& dispatches,
                       const std::vector<SensitivityBlock>& sensitivities,
                       const std::vector<pf::JacobianBundle>& bundles, double alpha, double beta,
                       const std::vector<int>& charging_buses, double base_mva);

SdidResult run_sdid(const grid::Network& net, const std::vector<grid::LoadForecast>& forecasts,
                    const std::vector<grid::StationConfig>& stations, const SdidConfig& cfg);

}  // namespace nodal::sdid
