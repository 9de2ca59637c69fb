#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nodalprice/common.hpp"

namespace nodal::grid {

// ===========================================================================
// Network description. All power quantities are stored in per-unit on the
// system MVA base; conversion from MW/MVAr happens once, at ingestion.
// ===========================================================================

enum class BusKind { Slack, PQ };

struct Bus {
  int id = 0;  // external 1-based id from the case file
  BusKind kind = BusKind::PQ;
  double p_load = 0.0;  // p.u.
  double q_load = 0.0;  // p.u.
  double p_gen = 0.0;   // p.u.
  double q_gen = 0.0;   // p.u.
  double v_nom = 1.0;   // p.u. magnitude, initial operating point
  double theta_nom = 0.0;  // radians, initial operating point
};

struct Line {
  int from = 0;  // external bus id
  int to = 0;    // external bus id
  double g = 0.0;        // series conductance, p.u.
  double b = 0.0;        // series susceptance, p.u.
  double b_shunt = 0.0;  // total line-charging susceptance, p.u. (half per end)
};

struct Network {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  int slack = 0;  // internal index into `buses`

  int n() const { return static_cast<int>(buses.size()); }

  // Internal index of an external bus id; -1 if absent.
  int index_of(int bus_id) const {
    for (int i = 0; i < n(); ++i)
      if (buses[i].id == bus_id) return i;
    return -1;
  }

  // Scheduled net injections (generation minus load), p.u.
  Eigen::VectorXd injections_p() const;
  Eigen::VectorXd injections_q() const;
};

// Charging-station battery parameters. Powers in MW, energy in MWh.
struct StationConfig {
  int station_id = 0;
  int bus_id = 0;          // external bus id the station connects to
  double capacity_e = 0.0; // MWh
  double p_max = 0.0;      // MW; defaults to 1C (capacity_e / 1h) when not overridden
  double soc_init = 0.5;   // fraction of capacity in [0, 1]
};

// Inelastic charging-demand forecast for one station, MW per timestep.
struct LoadForecast {
  int station_id = 0;
  Eigen::VectorXd p_mw;
};

// ---------------------------------------------------------------------------
// Errors. Each message names the offending record.
// ---------------------------------------------------------------------------
struct MalformedFile : Error { using Error::Error; };
struct MissingSlack : Error { using Error::Error; };
struct DuplicateSlack : Error { using Error::Error; };
struct DuplicateBusId : Error { using Error::Error; };
struct DanglingLineEndpoint : Error { using Error::Error; };
struct RaggedRow : Error { using Error::Error; };
struct NegativeLoad : Error { using Error::Error; };
struct UnknownStation : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Case files (JSON: {base_mva, buses:[...], lines:[...]}).
// Loads/gens are MW/MVAr in the file and per-unit in memory.
// ---------------------------------------------------------------------------
Network parse_case(const std::string& path);
Network parse_case_text(const std::string& json_text, const std::string& origin = "<string>");
std::string serialize_case(const Network& net);  // inverse of parse_case

// Bus admittance matrices (G, B), dense n x n, built from the line list:
// off-diagonal (i,k) accumulates -y for every line i-k, diagonals accumulate
// +y per incident line plus half the line-charging susceptance per end.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_admittance(const Network& net);

// ---------------------------------------------------------------------------
// Demand profiles. CSV header: station_id,t0,...,t{T-1}; values MW >= 0.
// When `expected_ids` is non-empty every row's station_id must be present in
// it (UnknownStation otherwise).
// ---------------------------------------------------------------------------
std::vector<LoadForecast> parse_profiles(const std::string& path, int T,
                                         const std::vector<int>& expected_ids = {});
void write_profiles(const std::string& path, const std::vector<LoadForecast>& profiles);

// Seeded synthetic demand: per station a sum of Gaussian charging-session
// bumps, clipped at zero and rescaled so the peak equals peak_mw[k] exactly.
// Pure function of its arguments.
std::vector<LoadForecast> synth_profiles(std::uint64_t seed,
                                         const std::vector<StationConfig>& stations,
                                         const std::vector<double>& peak_mw, int T);

}  // namespace nodal::grid
