#pragma once

#include <string>
#include <vector>

#include "nodalprice/grid_model.hpp"
#include "nodalprice/pricing_icd.hpp"
#include "nodalprice/pricing_sdid.hpp"

namespace nodal::harness {

struct BadScenario : Error { using Error::Error; };
struct BadTouSchedule : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Time-of-use tariff: ordered spans covering exactly [0, 24) hours.
// CSV format: header start_hour,end_hour,price then one row per span.
// ---------------------------------------------------------------------------
struct TouSpan {
  double start_hour = 0.0;
  double end_hour = 0.0;
  double price = 0.0;  // $/kWh
};

struct TouSchedule {
  std::vector<TouSpan> spans;
};

TouSchedule parse_tou_csv(const std::string& path);
// Throws BadTouSchedule on gaps, overlaps, negative prices, or missing 24 h coverage.
void validate(const TouSchedule& schedule);
// Price per timestep, sampled at each interval's start instant.
Eigen::VectorXd expand(const TouSchedule& schedule, int T, double dt_hours);

// ---------------------------------------------------------------------------
// Scenario: one experiment definition, loaded from a TOML file. Relative paths
// inside the file resolve against the file's directory.
// ---------------------------------------------------------------------------
struct Scenario {
  std::string name;
  std::string dir;
  grid::Network net;
  std::vector<grid::StationConfig> stations;
  std::vector<grid::LoadForecast> forecasts;
  int T = 96;
  double dt_hours = 0.25;
  std::uint64_t seed = 1;

  bool has_tou = false;
  bool has_icd = false;
  bool has_sdid = false;
  TouSchedule tou;
  icd::IcdConfig icd;
  sdid::SdidConfig sdid;
};

Scenario load_scenario(const std::string& path);

// ---------------------------------------------------------------------------
// One comparison row. All voltage metrics come from the same nonlinear
// simulate_horizon pass regardless of which method produced the prices.
// ---------------------------------------------------------------------------
struct ScenarioResult {
  std::string method;
  double frobenius_deviation = 0.0;  // p.u.
  double gamma = 0.0;
  equity::PriceMatrix prices;
  Eigen::MatrixXd voltages;  // n x T bus voltage magnitudes, p.u.
  int iters = 0;
  double ms_per_iter = 0.0;
  std::string error;  // non-empty when the method failed; other fields empty

  std::vector<icd::IterRecord> icd_log;    // ICD only
  std::vector<sdid::SdidIter> sdid_trace;  // SDID only
};

// Simulate a price matrix end to end: dispatch every station against its row,
// compose injections, run the nonlinear horizon. Shared by every method.
ScenarioResult simulate_prices(const Scenario& sc, const std::string& method,
                               const equity::PriceMatrix& prices);

ScenarioResult run_baseline_tou(const Scenario& sc, const TouSchedule& schedule);
// Runs every configured method; a failing method yields an error row and the
// remaining methods still report.
std::vector<ScenarioResult> run_compare(const Scenario& sc);

// table.csv, prices_{method}.csv, voltages_{method}.csv, trace_sdid.csv,
// icd_log.csv, summary.json under out_dir (created if absent).
void write_outputs(const Scenario& sc, const std::vector<ScenarioResult>& results,
                   const std::string& out_dir);
std::string pretty_table(const std::vector<ScenarioResult>& results);

}  // namespace nodal::harness
