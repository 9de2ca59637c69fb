#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nodalprice/grid_model.hpp"
#include "nodalprice/power_flow.hpp"

namespace nodal::util {

// Internal bus index per station, validated: the bus must exist and must not
// be the slack (whose real-power row the pricing reduction removes).
inline std::vector<int> charging_bus_indices(const grid::Network& net,
                                             const std::vector<grid::StationConfig>& stations) {
  if (stations.empty()) throw Error("no charging stations configured");
  std::vector<int> idx;
  idx.reserve(stations.size());
  for (const auto& st : stations) {
    const int b = net.index_of(st.bus_id);
    if (b < 0)
      throw Error("station " + std::to_string(st.station_id) + ": bus " +
                  std::to_string(st.bus_id) + " is not in the network");
    if (b == net.slack)
      throw Error("station " + std::to_string(st.station_id) + ": bus " +
                  std::to_string(st.bus_id) + " is the slack bus and cannot host a station");
    idx.push_back(b);
  }
  return idx;
}

inline std::vector<int> station_ids(const std::vector<grid::StationConfig>& stations) {
  std::vector<int> ids;
  ids.reserve(stations.size());
  for (const auto& st : stations) ids.push_back(st.station_id);
  return ids;
}

// K x T matrix of EV charging demand (MW), stations in config order.
inline Eigen::MatrixXd ev_matrix(const std::vector<grid::LoadForecast>& forecasts,
                                 const std::vector<grid::StationConfig>& stations, int T) {
  Eigen::MatrixXd ev(stations.size(), T);
  for (std::size_t k = 0; k < stations.size(); ++k) {
    const grid::LoadForecast* match = nullptr;
    for (const auto& f : forecasts)
      if (f.station_id == stations[k].station_id) {
        match = &f;
        break;
      }
    if (!match)
      throw Error("station " + std::to_string(stations[k].station_id) + ": no load forecast");
    if (static_cast<int>(match->p_mw.size()) != T)
      throw Error("station " + std::to_string(stations[k].station_id) + ": forecast has " +
                  std::to_string(match->p_mw.size()) + " steps, expected " + std::to_string(T));
    for (int t = 0; t < T; ++t) ev(k, t) = match->p_mw[t];
  }
  return ev;
}

// Scheduled net injections over the horizon: the static case injections with
// each station's net consumption (MW) subtracted at its bus, in per-unit.
inline pf::InjectionSchedule compose_injections(const grid::Network& net,
                                                const std::vector<int>& bus_idx,
                                                const Eigen::MatrixXd& p_net_mw) {
  const int T = static_cast<int>(p_net_mw.cols());
  pf::InjectionSchedule sched;
  sched.p = net.injections_p().replicate(1, T);
  sched.q = net.injections_q().replicate(1, T);
  for (std::size_t k = 0; k < bus_idx.size(); ++k)
    sched.p.row(bus_idx[k]) -= p_net_mw.row(k) / net.base_mva;
  return sched;
}

// Row of a non-slack bus in the slack-reduced real-power block.
inline int reduced_p_row(int slack, int bus) { return bus - (bus > slack ? 1 : 0); }

// K x K slice of a bundle's pseudo-inverse gram at the given reduced rows.
inline Eigen::MatrixXd gram_slice(const pf::JacobianBundle& bundle, const std::vector<int>& rows) {
  const int K = static_cast<int>(rows.size());
  Eigen::MatrixXd M(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) M(i, j) = bundle.pp_gram(rows[i], rows[j]);
  return M;
}

}  // namespace nodal::util
