#include "nodalprice/pricing_icd.hpp"

#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "nodalprice/station_util.hpp"

namespace nodal::icd {

namespace {

constexpr double kEpsReg = 1e-6;  // uniqueness regularizer on battery powers
// Curvature on the epigraph scalars. Any value below beta / (2 max|burden|)
// leaves the optimum exact (u still lands on the largest burden, l on the
// smallest); picking it O(1) rather than tiny keeps the unconstrained pull
// on (u, l) short, which spares the solver a long transient through the
// dense burden rows.
constexpr double kEpsAux = 1.0;

void validate_config(const IcdConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw Error("icd: alpha must be positive");
  if (cfg.beta < 0.0) throw Error("icd: beta must be nonnegative");
  if (!(cfg.price_scale > 0.0)) throw Error("icd: price_scale must be positive");
  if (cfg.dt_hours <= 0.0) throw Error("icd: dt_hours must be positive");
  if (cfg.max_outer_iters < 1) throw Error("icd: max_outer_iters must be at least 1");
}

equity::PriceMatrix random_prices(int K, int T, const std::vector<int>& ids, std::uint64_t seed) {
  equity::PriceMatrix pm;
  pm.values.resize(K, T);
  pm.station_ids = ids;
  SplitMix64 rng(seed);
  for (int k = 0; k < K; ++k)
    for (int t = 0; t < T; ++t) pm.values(k, t) = rng.uniform(0.1, 0.5);
  return pm;
}

}  // namespace

equity::PriceMatrix dual_price_from_primal(const pf::JacobianBundle& bundle,
                                           const Eigen::MatrixXd& dp,
                                           const std::vector<int>& charging_buses,
                                           double price_scale, std::vector<int> station_ids) {
  Eigen::MatrixXd priced(charging_buses.size(), dp.cols());
  for (int t = 0; t < dp.cols(); ++t) {
    // Reduce the full n-vector by dropping the slack real-power row.
    Eigen::VectorXd red(bundle.n - 1);
    for (int i = 0, r = 0; i < bundle.n; ++i)
      if (i != bundle.slack) red[r++] = dp(i, t);
    Eigen::VectorXd mdp = bundle.pp_gram * red;
    for (std::size_t k = 0; k < charging_buses.size(); ++k)
      priced(k, t) =
          2.0 * price_scale * mdp[util::reduced_p_row(bundle.slack, charging_buses[k])];
  }
  equity::PriceMatrix pm;
  pm.values = priced;
  pm.station_ids = station_ids.empty() ? std::vector<int>(charging_buses.size(), 0) : station_ids;
  if (station_ids.empty())
    for (std::size_t k = 0; k < charging_buses.size(); ++k) pm.station_ids[k] = static_cast<int>(k);
  return pm;
}

equity::PriceMatrix dual_price_from_primal(const std::vector<pf::JacobianBundle>& bundles,
                                           const Eigen::MatrixXd& dp,
                                           const std::vector<int>& charging_buses,
                                           double price_scale, std::vector<int> station_ids) {
  if (bundles.empty()) throw Error("dual_price_from_primal: no bundles");
  if (static_cast<int>(bundles.size()) != dp.cols())
    throw Error("dual_price_from_primal: " + std::to_string(bundles.size()) + " bundles for " +
                std::to_string(dp.cols()) + " timesteps");
  equity::PriceMatrix pm;
  pm.values.resize(charging_buses.size(), dp.cols());
  for (int t = 0; t < dp.cols(); ++t) {
    equity::PriceMatrix col =
        dual_price_from_primal(bundles[t], dp.col(t), charging_buses, price_scale, station_ids);
    pm.values.col(t) = col.values.col(0);
    pm.station_ids = std::move(col.station_ids);
  }
  return pm;
}

InnerSolution build_and_solve_icd(const grid::Network& net,
                                  const std::vector<grid::LoadForecast>& forecasts,
                                  const std::vector<grid::StationConfig>& stations,
                                  const IcdConfig& cfg,
                                  const std::vector<pf::JacobianBundle>& bundles,
                                  const equity::PriceMatrix& lambda0,
                                  const InnerSolution* warm) {
  validate_config(cfg);
  const int K = static_cast<int>(stations.size());
  const int T = static_cast<int>(bundles.size());
  if (T < 2) throw Error("icd: horizon must have at least 2 timesteps");
  if (lambda0.values.rows() != K || lambda0.values.cols() != T)
    throw Error("icd: lambda0 is " + std::to_string(lambda0.values.rows()) + "x" +
                std::to_string(lambda0.values.cols()) + ", expected " + std::to_string(K) + "x" +
                std::to_string(T));

  const std::vector<int> bus_idx = util::charging_bus_indices(net, stations);
  std::vector<int> rows(K);
  for (int k = 0; k < K; ++k) rows[k] = util::reduced_p_row(net.slack, bus_idx[k]);
  const Eigen::MatrixXd ev = util::ev_matrix(forecasts, stations, T);

  const double Sb = net.base_mva;
  const double wdev = cfg.alpha / (Sb * Sb);
  const double ps2 = 2.0 * cfg.price_scale / Sb;  // maps station-load deltas (MW) to $/kWh
  const double escale = 1000.0 * cfg.dt_hours;    // MW * $/kWh -> $

  std::vector<Eigen::MatrixXd> M(T);  // charging-row gram slices; M[0] unused
  for (int t = 1; t < T; ++t) M[t] = util::gram_slice(bundles[t], rows);

  // Decision variables are per-station stored-energy trajectories, time-major:
  // e[t*K + k] = sum_{s<=t} p_b(k, s) (MW units; multiply by dt for MWh), plus
  // the two epigraph scalars. Battery powers are first differences of e.
  // Under energy variables the state-of-charge corridor is a plain box — one
  // entry per row — and a power cap touches two adjacent entries, so active
  // rows pin immediately instead of forcing the solver to crawl along the
  // nearly parallel cumulative rows the power formulation produces. The
  // program itself is unchanged: the differencing map is invertible, so the
  // optimum, duals, and certificates match the power-variable form exactly.
  const int N = K * T;  // stored-energy variables, time-major: x[t*K + k]
  const int nx = N + 2;

  Eigen::MatrixXd Hp = Eigen::MatrixXd::Zero(nx, nx);  // over powers; mapped below
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(nx);
  double const_dev = 0.0;
  for (int t = 1; t < T; ++t) {
    const Eigen::MatrixXd A = (2.0 * wdev) * M[t];
    Hp.block(t * K, t * K, K, K) += A;
    Hp.block((t - 1) * K, (t - 1) * K, K, K) += A;
    Hp.block(t * K, (t - 1) * K, K, K) -= A;
    Hp.block((t - 1) * K, t * K, K, K) -= A;
    const Eigen::VectorXd dev_t = ev.col(t) - ev.col(t - 1);
    const Eigen::VectorXd v = (2.0 * wdev) * (M[t] * dev_t);
    gp.segment(t * K, K) += v;
    gp.segment((t - 1) * K, K) -= v;
    const_dev += wdev * dev_t.dot(M[t] * dev_t);
  }
  for (int i = 0; i < N; ++i) Hp(i, i) += 2.0 * kEpsReg;
  Hp(N, N) = 2.0 * kEpsAux;
  Hp(N + 1, N + 1) = 2.0 * kEpsAux;
  double const_energy = 0.0;
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      gp[t * K + k] += lambda0.values(k, t) * escale;
      const_energy += ev(k, t) * lambda0.values(k, t) * escale;
    }
  gp[N] += cfg.beta;
  gp[N + 1] -= cfg.beta;

  // Differencing map: power coordinates = D * energy coordinates (identity on
  // the epigraph pair). Objective data transform by congruence.
  Eigen::SparseMatrix<double> D(nx, nx);
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(2 * N + 2);
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k) {
        trip.emplace_back(t * K + k, t * K + k, 1.0);
        if (t >= 1) trip.emplace_back(t * K + k, (t - 1) * K + k, -1.0);
      }
    trip.emplace_back(N, N, 1.0);
    trip.emplace_back(N + 1, N + 1, 1.0);
    D.setFromTriplets(trip.begin(), trip.end());
  }
  qp::Problem qpp;
  {
    Eigen::MatrixXd Hz = D.transpose() * Hp * D;
    qpp.H = 0.5 * (Hz + Hz.transpose());  // keep exactly symmetric
  }
  qpp.g = D.transpose() * gp;
  // The power-basis regularizer floors ramp directions of the energy
  // variables only at eps/T^2 (a constant power is a linear ramp in stored
  // energy), which lets the reduced systems inherit a near-singular Hessian.
  // An equal-weight term on the energies themselves restores the eps floor;
  // it is the same kind of uniqueness tiebreak, expressed in this basis.
  for (int i = 0; i < N; ++i) qpp.H(i, i) += 2.0 * kEpsReg;

  // Burden of station k as a linear form over the battery variables: the
  // closed-form dual summed over timesteps 1..T-1 telescopes into per-block
  // coefficients (the current step's gram enters positively, the next step's
  // negatively).
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K, N);
  for (int s = 0; s < T; ++s)
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < K; ++j) {
        double c = 0.0;
        if (s >= 1) c += M[s](k, j);
        if (s + 1 <= T - 1) c -= M[s + 1](k, j);
        B(k, s * K + j) = ps2 * c;
      }
  Eigen::VectorXd bconst = Eigen::VectorXd::Zero(K);
  for (int t = 1; t < T; ++t) bconst += ps2 * (M[t] * (ev.col(t) - ev.col(t - 1)));
  // Same burden form over the energy variables (columns composed with the
  // differencing map).
  Eigen::MatrixXd Bz = B;
  for (int s = 0; s + 1 < T; ++s)
    for (int j = 0; j < K; ++j) Bz.col(s * K + j) -= B.col((s + 1) * K + j);

  // Constraint rows: power caps as adjacent-entry differences (2KT), the
  // state-of-charge box (2T per live battery), then the 2K epigraph rows.
  // The layout is identical across outer iterations, so warm-started active
  // sets stay meaningful.
  std::vector<char> live(K, 0);
  int n_live = 0;
  for (int k = 0; k < K; ++k) {
    live[k] = stations[k].capacity_e > 0.0 && stations[k].p_max > 0.0;
    n_live += live[k] ? 1 : 0;
  }
  const int m = 2 * N + 2 * T * n_live + 2 * K;
  qpp.C = Eigen::MatrixXd::Zero(m, nx);
  qpp.d = Eigen::VectorXd::Zero(m);
  for (int k = 0; k < K; ++k) {
    const double pmax = live[k] ? stations[k].p_max : 0.0;
    for (int t = 0; t < T; ++t) {
      qpp.C(k * T + t, t * K + k) = 1.0;
      qpp.d[k * T + t] = pmax;
      qpp.C(N + k * T + t, t * K + k) = -1.0;
      qpp.d[N + k * T + t] = pmax;
      if (t >= 1) {
        qpp.C(k * T + t, (t - 1) * K + k) = -1.0;
        qpp.C(N + k * T + t, (t - 1) * K + k) = 1.0;
      }
    }
  }
  int row = 2 * N;
  for (int k = 0; k < K; ++k) {
    if (!live[k]) continue;
    const double r = cfg.dt_hours / stations[k].capacity_e;
    for (int t = 0; t < T; ++t) {
      qpp.C(row, t * K + k) = r;
      qpp.C(row + T, t * K + k) = -r;
      qpp.d[row] = 1.0 - stations[k].soc_init;
      qpp.d[row + T] = stations[k].soc_init;
      ++row;
    }
    row += T;
  }
  for (int k = 0; k < K; ++k) {
    qpp.C.block(row + k, 0, 1, N) = Bz.row(k);
    qpp.C(row + k, N) = -1.0;
    qpp.d[row + k] = -bconst[k];
    qpp.C.block(row + K + k, 0, 1, N) = -Bz.row(k);
    qpp.C(row + K + k, N + 1) = 1.0;
    qpp.d[row + K + k] = bconst[k];
  }

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(nx);
  std::vector<int> warm_rows;
  if (warm && warm->x.size() == nx) {
    x0.head(N) = warm->x.head(N);
    warm_rows = warm->active;
  }
  Eigen::VectorXd burdens0 = Bz * x0.head(N) + bconst;
  x0[N] = burdens0.maxCoeff();
  x0[N + 1] = burdens0.minCoeff();

  qp::Solution qsol = qp::solve(qpp, x0, warm_rows);
  if (qsol.kkt.overall() > cfg.kkt_tol)
    throw qp::SolverFailure(
        "icd inner certificate " + std::to_string(qsol.kkt.overall()) +
            " exceeds tolerance (stationarity " + std::to_string(qsol.kkt.stationarity) +
            ", primal " + std::to_string(qsol.kkt.primal) + ", dual " +
            std::to_string(qsol.kkt.dual) + ", complementarity " +
            std::to_string(qsol.kkt.complementarity) + ")",
        qsol.kkt.overall());

  InnerSolution sol;
  sol.p_b.resize(K, T);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k)
      sol.p_b(k, t) = qsol.x[t * K + k] - (t >= 1 ? qsol.x[(t - 1) * K + k] : 0.0);
  sol.u = qsol.x[N];
  sol.l = qsol.x[N + 1];

  sol.prices.values = Eigen::MatrixXd::Zero(K, T);
  sol.prices.station_ids = util::station_ids(stations);
  sol.deviation = 0.0;
  for (int t = 1; t < T; ++t) {
    const Eigen::VectorXd dpi = sol.p_b.col(t) - sol.p_b.col(t - 1) + ev.col(t) - ev.col(t - 1);
    sol.prices.values.col(t) = ps2 * (M[t] * dpi);
    sol.deviation += dpi.dot(M[t] * dpi) / (Sb * Sb);
  }
  sol.energy_cost = ((sol.p_b + ev).array() * lambda0.values.array()).sum() * escale;
  sol.objective = cfg.alpha * sol.deviation + sol.energy_cost + cfg.beta * (sol.u - sol.l);
  sol.injections = util::compose_injections(net, bus_idx, sol.p_b + ev);

  // Consensus certificate: the injection deltas at the charging buses must
  // reproduce the station-load deltas (load-signed, per-unit).
  sol.consensus_residual = 0.0;
  for (int t = 1; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      const double inj_delta = sol.injections.p(bus_idx[k], t) - sol.injections.p(bus_idx[k], t - 1);
      const double load_delta =
          (sol.p_b(k, t) - sol.p_b(k, t - 1) + ev(k, t) - ev(k, t - 1)) / Sb;
      sol.consensus_residual = std::max(sol.consensus_residual, std::abs(inj_delta + load_delta));
    }
  sol.kkt = qsol.kkt;
  sol.x = qsol.x;
  sol.active = qsol.active;
  return sol;
}

IcdSolution run_icd(const grid::Network& net, const std::vector<grid::LoadForecast>& forecasts,
                    const std::vector<grid::StationConfig>& stations, const IcdConfig& cfg,
                    const std::function<void(const IterRecord&)>& log_sink) {
  validate_config(cfg);
  const int K = static_cast<int>(stations.size());
  if (forecasts.empty()) throw Error("icd: no load forecasts");
  const int T = static_cast<int>(forecasts.front().p_mw.size());
  const std::vector<int> bus_idx = util::charging_bus_indices(net, stations);
  const Eigen::MatrixXd ev = util::ev_matrix(forecasts, stations, T);

  equity::PriceMatrix lambda = cfg.lambda0
                                   ? *cfg.lambda0
                                   : random_prices(K, T, util::station_ids(stations), cfg.seed);
  if (lambda.values.rows() != K || lambda.values.cols() != T)
    throw Error("icd: initial prices have wrong shape");
  lambda.station_ids = util::station_ids(stations);

  IcdSolution out;
  Eigen::MatrixXd p_b_prev = Eigen::MatrixXd::Zero(K, T);
  InnerSolution warm;
  bool have_warm = false;
  double best_obj = std::numeric_limits<double>::infinity();
  double prev_obj = 0.0;
  InnerSolution best;
  const pf::OperatingPoint op0 = pf::nominal_op(net);

  for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
    const auto tic = std::chrono::steady_clock::now();
    InnerSolution inner;
    try {
      pf::InjectionSchedule sched = util::compose_injections(net, bus_idx, p_b_prev + ev);
      std::vector<pf::JacobianBundle> bundles =
          pf::linearize_horizon(net, sched, op0, cfg.pf_tol, cfg.pf_max_iter, cfg.mode);
      inner = build_and_solve_icd(net, forecasts, stations, cfg, bundles, lambda,
                                  have_warm ? &warm : nullptr);
    } catch (const qp::SolverFailure& e) {
      throw qp::SolverFailure("icd outer iteration " + std::to_string(iter) + ": " + e.what(),
                              e.kkt_residual);
    } catch (const pf::NonConvergence& e) {
      throw pf::NonConvergence("icd outer iteration " + std::to_string(iter) + ": " + e.what(),
                               e.iterations, e.final_mismatch, e.timestep);
    }
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();

    IterRecord rec;
    rec.iter = iter;
    rec.objective = inner.objective;
    rec.deviation = inner.deviation;
    rec.gamma = equity::gamma(inner.prices);
    rec.price_delta_inf = (inner.prices.values - lambda.values).lpNorm<Eigen::Infinity>();
    rec.wall_ms = wall_ms;
    out.log.push_back(rec);
    if (log_sink) log_sink(rec);

    if (inner.objective < best_obj) {
      best_obj = inner.objective;
      best = inner;
    }
    lambda = inner.prices;
    p_b_prev = inner.p_b;
    warm = inner;
    have_warm = true;
    out.outer_iters = iter;

    if (rec.price_delta_inf < cfg.price_tol) break;
    if (iter >= 2 && prev_obj - inner.objective < cfg.obj_tol) break;
    prev_obj = inner.objective;
  }

  out.prices = best.prices;
  out.injections = best.injections;
  out.deviation = best.deviation;
  out.gamma_value = equity::gamma(best.prices);
  out.objective = best.objective;

  const double escale = 1000.0 * cfg.dt_hours;
  for (int k = 0; k < K; ++k) {
    evsp::DispatchSolution d;
    d.p_b = best.p_b.row(k).transpose();
    d.soc.resize(T + 1);
    d.soc[0] = stations[k].soc_init;
    const bool live = stations[k].capacity_e > 0.0;
    for (int t = 0; t < T; ++t) {
      d.soc[t + 1] = live ? d.soc[t] + d.p_b[t] * cfg.dt_hours / stations[k].capacity_e : d.soc[t];
      d.soc[t + 1] = std::clamp(d.soc[t + 1], 0.0, 1.0);
    }
    d.p_net = d.p_b + ev.row(k).transpose();
    d.cost = escale * d.p_net.dot(best.prices.values.row(k).transpose());
    d.mu = Eigen::VectorXd::Zero(4 * T);
    out.dispatches.push_back(std::move(d));
  }
  return out;
}

}  // namespace nodal::icd
