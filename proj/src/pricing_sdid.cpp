#include "nodalprice/pricing_sdid.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "nodalprice/qp_solver.hpp"
#include "nodalprice/station_util.hpp"

namespace nodal::sdid {

namespace {

void validate_config(const SdidConfig& cfg) {
  if (!(cfg.eta_init > 0.0)) throw Error("sdid: eta_init must be positive");
  if (!(cfg.gamma_decay > 0.0 && cfg.gamma_decay <= 1.0))
    throw Error("sdid: gamma_decay must be in (0, 1]");
  if (cfg.n_iters < 1) throw Error("sdid: n_iters must be at least 1");
  if (cfg.alpha < 0.0 || cfg.beta < 0.0) throw Error("sdid: weights must be nonnegative");
  if (cfg.dt_hours <= 0.0) throw Error("sdid: dt_hours must be positive");
}

// Sum over timesteps of the linearized squared voltage response to the
// successive net-power deltas, per-unit.
double deviation_sum(const std::vector<evsp::DispatchSolution>& dispatches,
                     const std::vector<pf::JacobianBundle>& bundles,
                     const std::vector<int>& charging_buses, double base_mva) {
  const int T = static_cast<int>(bundles.size());
  const int n = bundles.front().n;
  double dev = 0.0;
  Eigen::VectorXd dp(n), dq = Eigen::VectorXd::Zero(n);
  for (int t = 1; t < T; ++t) {
    dp.setZero();
    for (std::size_t k = 0; k < charging_buses.size(); ++k)
      dp[charging_buses[k]] +=
          (dispatches[k].p_net[t] - dispatches[k].p_net[t - 1]) / base_mva;
    dev += pf::voltage_deviation(bundles[t], dp, dq);
  }
  return dev;
}

equity::PriceMatrix initial_prices(const SdidConfig& cfg, int K, int T,
                                   const std::vector<int>& ids) {
  if (cfg.lambda0) {
    equity::PriceMatrix pm = *cfg.lambda0;
    if (pm.values.rows() != K || pm.values.cols() != T)
      throw Error("sdid: initial prices have wrong shape");
    pm.station_ids = ids;
    return pm;
  }
  equity::PriceMatrix pm;
  pm.values.resize(K, T);
  pm.station_ids = ids;
  if (cfg.init == PriceInit::Flat) {
    for (int k = 0; k < K; ++k) {
      SplitMix64 rng(substream(cfg.seed, static_cast<std::uint64_t>(k)));
      pm.values.row(k).setConstant(rng.uniform(cfg.init_lo, cfg.init_hi));
    }
  } else {
    SplitMix64 rng(cfg.seed);
    for (int k = 0; k < K; ++k)
      for (int t = 0; t < T; ++t) pm.values(k, t) = rng.uniform(cfg.init_lo, cfg.init_hi);
  }
  return pm;
}

evsp::DispatchProblem station_problem(const grid::StationConfig& st,
                                      const Eigen::VectorXd& prices, const Eigen::VectorXd& load,
                                      double dt_hours) {
  evsp::DispatchProblem prob;
  prob.prices = prices;
  prob.load = load;
  prob.capacity_e = st.capacity_e;
  prob.soc_init = st.soc_init;
  prob.p_max = st.p_max;
  prob.dt_hours = dt_hours;
  return prob;
}

}  // namespace

double objective_F(const equity::PriceMatrix& prices,
                   const std::vector<evsp::DispatchSolution>& dispatches,
                   const std::vector<pf::JacobianBundle>& bundles, double alpha, double beta,
                   const std::vector<int>& charging_buses, double base_mva) {
  if (dispatches.size() != charging_buses.size())
    throw Error("objective_F: " + std::to_string(dispatches.size()) + " dispatches for " +
                std::to_string(charging_buses.size()) + " buses");
  double dev = 0.0;
  if (alpha != 0.0) {
    if (static_cast<int>(bundles.size()) != prices.T())
      throw Error("objective_F: bundle count does not match the horizon");
    dev = deviation_sum(dispatches, bundles, charging_buses, base_mva);
  }
  return alpha * dev - beta * equity::gamma(prices);
}

SensitivityBlock dispatch_sensitivity(const evsp::DispatchProblem& prob,
                                      const evsp::DispatchSolution& sol) {
  const int T = prob.T();
  SensitivityBlock block;
  block.dp_dlambda = Eigen::MatrixXd::Zero(T, T);
  if (prob.capacity_e == 0.0 || prob.p_max == 0.0) return block;

  constexpr double tol = 1e-8;
  const double r = prob.dt_hours / prob.capacity_e;
  std::vector<Eigen::VectorXd> act_rows;
  std::vector<char> box_pinned(T, 0);
  auto consider = [&](int row, double slack, const Eigen::VectorXd& coeffs, bool box, int t) {
    if (slack > tol) return;
    act_rows.push_back(coeffs);
    if (box) box_pinned[t] = 1;
    if (sol.mu.size() == 4 * T && sol.mu[row] < tol) {
      block.degenerate_active_set = true;
      block.degenerate_rows.push_back(row);
    }
  };
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(T);
    e[t] = 1.0;
    consider(t, prob.p_max - sol.p_b[t], e, true, t);
    consider(T + t, prob.p_max + sol.p_b[t], -e, true, t);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(T);
    c.head(t + 1).setConstant(r);
    consider(2 * T + t, 1.0 - sol.soc[t + 1], c, false, t);
    consider(3 * T + t, sol.soc[t + 1], -c, false, t);
  }

  const double gain = evsp::cost_scale(prob.dt_hours) / (2.0 * evsp::kDispatchRegularizer);
  if (act_rows.empty()) {
    block.dp_dlambda = -gain * Eigen::MatrixXd::Identity(T, T);
    return block;
  }
  const int a = static_cast<int>(act_rows.size());
  Eigen::MatrixXd At(T, a);  // transpose of the active constraint matrix
  for (int j = 0; j < a; ++j) At.col(j) = act_rows[j];
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(At);
  qr.setThreshold(1e-10);
  const int rank = static_cast<int>(qr.rank());
  if (rank >= T) return block;  // fully pinned
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(T, rank);
  block.dp_dlambda = -gain * (Eigen::MatrixXd::Identity(T, T) - Q * Q.transpose());
  for (int t = 0; t < T; ++t)
    if (box_pinned[t]) {
      block.dp_dlambda.row(t).setZero();
      block.dp_dlambda.col(t).setZero();
    }
  return block;
}

Eigen::MatrixXd grad_F(const equity::PriceMatrix& prices,
                       const std::vector<evsp::DispatchSolution>& dispatches,
                       const std::vector<SensitivityBlock>& sensitivities,
                       const std::vector<pf::JacobianBundle>& bundles, double alpha, double beta,
                       const std::vector<int>& charging_buses, double base_mva) {
  const int K = prices.K();
  const int T = prices.T();
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(K, T);

  if (alpha != 0.0) {
    if (static_cast<int>(bundles.size()) != T)
      throw Error("grad_F: bundle count does not match the horizon");
    std::vector<int> rows(K);
    for (int k = 0; k < K; ++k)
      rows[k] = util::reduced_p_row(bundles.front().slack, charging_buses[k]);
    // dF_dev/d(net power), station-major: current step's gram enters with a
    // positive sign, the next step's with a negative one.
    Eigen::MatrixXd g_pi = Eigen::MatrixXd::Zero(K, T);
    const double w = 2.0 * alpha / (base_mva * base_mva);
    for (int t = 1; t < T; ++t) {
      Eigen::VectorXd dpi(K);
      for (int k = 0; k < K; ++k) dpi[k] = dispatches[k].p_net[t] - dispatches[k].p_net[t - 1];
      const Eigen::VectorXd v = w * (util::gram_slice(bundles[t], rows) * dpi);
      g_pi.col(t) += v;
      g_pi.col(t - 1) -= v;
    }
    for (int k = 0; k < K; ++k)
      grad.row(k) = (sensitivities[k].dp_dlambda.transpose() * g_pi.row(k).transpose()).transpose();
  }

  if (beta != 0.0) {
    const Eigen::VectorXd gsub = equity::gamma_subgradient(equity::burden(prices));
    for (int k = 0; k < K; ++k) grad.row(k).array() -= beta * gsub[k];
  }
  return grad;
}

SdidResult run_sdid(const grid::Network& net, const std::vector<grid::LoadForecast>& forecasts,
                    const std::vector<grid::StationConfig>& stations, const SdidConfig& cfg) {
  validate_config(cfg);
  const int K = static_cast<int>(stations.size());
  if (forecasts.empty()) throw Error("sdid: no load forecasts");
  const int T = static_cast<int>(forecasts.front().p_mw.size());
  const std::vector<int> bus_idx = util::charging_bus_indices(net, stations);
  const Eigen::MatrixXd ev = util::ev_matrix(forecasts, stations, T);
  const double Sb = net.base_mva;
  const pf::OperatingPoint op0 = pf::nominal_op(net);

  equity::PriceMatrix lambda = initial_prices(cfg, K, T, util::station_ids(stations));
  double eta = cfg.eta_init;

  SdidResult out;
  out.best_F = std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= cfg.n_iters; ++iter) {
    const auto tic = std::chrono::steady_clock::now();

    std::vector<evsp::DispatchProblem> probs;
    probs.reserve(K);
    for (int k = 0; k < K; ++k)
      probs.push_back(station_problem(stations[k], lambda.values.row(k).transpose(),
                                      ev.row(k).transpose(), cfg.dt_hours));
    std::vector<evsp::DispatchSolution> dispatches;
    std::vector<pf::JacobianBundle> bundles;
    try {
      dispatches = evsp::solve_batch(probs, cfg.mode);
      Eigen::MatrixXd p_net(K, T);
      for (int k = 0; k < K; ++k) p_net.row(k) = dispatches[k].p_net.transpose();
      bundles = pf::linearize_horizon(net, util::compose_injections(net, bus_idx, p_net), op0,
                                      cfg.pf_tol, cfg.pf_max_iter, cfg.mode);
    } catch (const qp::SolverFailure& e) {
      throw qp::SolverFailure("sdid iteration " + std::to_string(iter) + ": " + e.what(),
                              e.kkt_residual);
    } catch (const pf::NonConvergence& e) {
      throw pf::NonConvergence("sdid iteration " + std::to_string(iter) + ": " + e.what(),
                               e.iterations, e.final_mismatch, e.timestep);
    }

    const double dev = deviation_sum(dispatches, bundles, bus_idx, Sb);
    const double gam = equity::gamma(lambda);
    const double F = cfg.alpha * dev - cfg.beta * gam;

    std::vector<SensitivityBlock> sens(K);
    if (cfg.alpha != 0.0) {
#pragma omp parallel for schedule(static)
      for (int k = 0; k < K; ++k) sens[k] = dispatch_sensitivity(probs[k], dispatches[k]);
    } else {
      for (int k = 0; k < K; ++k) sens[k].dp_dlambda = Eigen::MatrixXd::Zero(T, T);
    }
    const Eigen::MatrixXd grad =
        grad_F(lambda, dispatches, sens, bundles, cfg.alpha, cfg.beta, bus_idx, Sb);

    if (cfg.fd_check && iter == 1) {
      // Frozen-linearization finite-difference probe of the gradient chain.
      SplitMix64 pick(substream(cfg.seed, 0xFDull));
      const double h = 1e-5;
      double worst = 0.0;
      for (int probe = 0; probe < 3; ++probe) {
        const int k = static_cast<int>(pick.below(K));
        const int s = static_cast<int>(pick.below(T));
        if (sens[k].degenerate_active_set) continue;
        double f[2];
        for (int side = 0; side < 2; ++side) {
          equity::PriceMatrix pm = lambda;
          pm.values(k, s) += (side == 0 ? h : -h);
          std::vector<evsp::DispatchSolution> d2 = dispatches;
          d2[k] = evsp::solve_dispatch(station_problem(
              stations[k], pm.values.row(k).transpose(), ev.row(k).transpose(), cfg.dt_hours));
          f[side] = objective_F(pm, d2, bundles, cfg.alpha, cfg.beta, bus_idx, Sb);
        }
        const double fd = (f[0] - f[1]) / (2.0 * h);
        const double err =
            std::abs(fd - grad(k, s)) / std::max({1e-8, std::abs(fd), std::abs(grad(k, s))});
        worst = std::max(worst, err);
      }
      out.trace.fd_error = worst;
    }

    SdidIter rec;
    rec.iter = iter;
    rec.F = F;
    rec.deviation = dev;
    rec.gamma = gam;
    rec.eta = eta;
    rec.prices = lambda.values;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();
    out.trace.records.push_back(rec);

    if (F < out.best_F) {
      out.best_F = F;
      out.best_iter = iter;
      out.prices = lambda;
      out.deviation = dev;
      out.gamma_value = gam;
      out.dispatches = dispatches;
      out.injections = util::compose_injections(net, bus_idx, [&] {
        Eigen::MatrixXd p_net(K, T);
        for (int k = 0; k < K; ++k) p_net.row(k) = dispatches[k].p_net.transpose();
        return p_net;
      }());
    }

    lambda.values -= eta * grad;
    if (cfg.decay) eta *= cfg.gamma_decay;
  }
  return out;
}

}  // namespace nodal::sdid
