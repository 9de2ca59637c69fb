#include "nodalprice/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nodalprice/scenario_toml.hpp"
#include "nodalprice/station_util.hpp"

namespace nodal::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kHourTol = 1e-9;

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string resolve(const std::string& dir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute() || dir.empty()) return path;
  return (fs::path(dir) / p).string();
}

double wall_since(const std::chrono::steady_clock::time_point& tic) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic)
      .count();
}

std::vector<evsp::DispatchProblem> station_problems(const Scenario& sc,
                                                    const equity::PriceMatrix& prices) {
  const Eigen::MatrixXd ev = util::ev_matrix(sc.forecasts, sc.stations, sc.T);
  std::vector<evsp::DispatchProblem> probs(sc.stations.size());
  for (std::size_t k = 0; k < sc.stations.size(); ++k) {
    probs[k].prices = prices.values.row(static_cast<int>(k)).transpose();
    probs[k].load = ev.row(static_cast<int>(k)).transpose();
    probs[k].capacity_e = sc.stations[k].capacity_e;
    probs[k].soc_init = sc.stations[k].soc_init;
    probs[k].p_max = sc.stations[k].p_max;
    probs[k].dt_hours = sc.dt_hours;
  }
  return probs;
}

// Shared metric pass: nonlinear horizon simulation of a ready injection
// schedule, identical for every method.
void fill_metrics(const Scenario& sc, const pf::InjectionSchedule& injections,
                  ScenarioResult& row) {
  const pf::VoltageTrace trace =
      pf::simulate_horizon(sc.net, injections, pf::nominal_op(sc.net), 1e-8, 20);
  row.frobenius_deviation = trace.frobenius_deviation;
  row.voltages = trace.v;
  row.gamma = equity::gamma(row.prices);
}

void write_price_csv(const std::string& path, const equity::PriceMatrix& prices) {
  std::ofstream out(path);
  out << "station_id";
  for (int t = 0; t < prices.T(); ++t) out << ",t" << t;
  out << "\n";
  for (int k = 0; k < prices.K(); ++k) {
    out << prices.station_ids[k];
    for (int t = 0; t < prices.T(); ++t) out << "," << fmt(prices.values(k, t));
    out << "\n";
  }
}

void write_voltage_csv(const std::string& path, const grid::Network& net,
                       const Eigen::MatrixXd& v) {
  std::ofstream out(path);
  out << "bus";
  for (int t = 0; t < v.cols(); ++t) out << ",t" << t;
  out << "\n";
  for (int i = 0; i < v.rows(); ++i) {
    out << net.buses[i].id;
    for (int t = 0; t < v.cols(); ++t) out << "," << fmt(v(i, t));
    out << "\n";
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Time-of-use schedules
// ---------------------------------------------------------------------------

TouSchedule parse_tou_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BadTouSchedule("cannot open tou schedule: " + path);
  TouSchedule sched;
  std::string line;
  if (!std::getline(in, line) || line.rfind("start_hour,end_hour,price", 0) != 0)
    throw BadTouSchedule(path + ": expected header start_hour,end_hour,price");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    TouSpan span;
    char c1 = 0, c2 = 0;
    if (!(row >> span.start_hour >> c1 >> span.end_hour >> c2 >> span.price) || c1 != ',' ||
        c2 != ',')
      throw BadTouSchedule(path + ":" + std::to_string(line_no) + ": bad row: " + line);
    sched.spans.push_back(span);
  }
  validate(sched);
  return sched;
}

void validate(const TouSchedule& schedule) {
  if (schedule.spans.empty()) throw BadTouSchedule("tou schedule has no spans");
  std::vector<TouSpan> spans = schedule.spans;
  std::sort(spans.begin(), spans.end(),
            [](const TouSpan& a, const TouSpan& b) { return a.start_hour < b.start_hour; });
  if (std::abs(spans.front().start_hour) > kHourTol)
    throw BadTouSchedule("tou schedule must start at hour 0, starts at " +
                         fmt(spans.front().start_hour));
  double cursor = 0.0;
  for (const TouSpan& s : spans) {
    if (s.price < 0.0)
      throw BadTouSchedule("negative tou price " + fmt(s.price) + " in span starting at hour " +
                           fmt(s.start_hour));
    if (s.end_hour <= s.start_hour + kHourTol)
      throw BadTouSchedule("empty tou span at hour " + fmt(s.start_hour));
    if (std::abs(s.start_hour - cursor) > kHourTol) {
      const char* what = s.start_hour > cursor ? "gap" : "overlap";
      throw BadTouSchedule(std::string("tou schedule ") + what + " at hour " + fmt(cursor));
    }
    cursor = s.end_hour;
  }
  if (std::abs(cursor - 24.0) > kHourTol)
    throw BadTouSchedule("tou schedule covers " + fmt(cursor) + " h, expected 24");
}

Eigen::VectorXd expand(const TouSchedule& schedule, int T, double dt_hours) {
  validate(schedule);
  std::vector<TouSpan> spans = schedule.spans;
  std::sort(spans.begin(), spans.end(),
            [](const TouSpan& a, const TouSpan& b) { return a.start_hour < b.start_hour; });
  Eigen::VectorXd prices(T);
  for (int t = 0; t < T; ++t) {
    const double hour = t * dt_hours;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < spans.size(); ++i)
      if (spans[i].start_hour <= hour + kHourTol) pick = i;
    prices[t] = spans[pick].price;
  }
  return prices;
}

// ---------------------------------------------------------------------------
// Scenario loading
// ---------------------------------------------------------------------------

Scenario load_scenario(const std::string& path) {
  const toml::Document doc = toml::parse_file(path);
  Scenario sc;
  sc.dir = fs::path(path).parent_path().string();

  const toml::Table& top = doc.table("scenario");
  sc.name = top.get_str_or("name", fs::path(path).stem().string());
  sc.T = static_cast<int>(top.get_num_or("T", 96));
  sc.dt_hours = top.get_num_or("dt_hours", 0.25);
  sc.seed = static_cast<std::uint64_t>(top.get_num_or("seed", 1));
  if (sc.T < 2) throw BadScenario(sc.name + ": T must be at least 2");
  if (std::abs(sc.T * sc.dt_hours - 24.0) > 1e-6)
    throw BadScenario(sc.name + ": T * dt_hours must cover 24 h, got " +
                      fmt(sc.T * sc.dt_hours));
  sc.net = grid::parse_case(resolve(sc.dir, top.get_str("network", "scenario")));

  Exec mode = Exec::Parallel;
  if (top.get_str_or("exec", "parallel") == "serial") mode = Exec::Serial;

  if (!doc.arrays.count("station") || doc.array("station").empty())
    throw BadScenario(sc.name + ": at least one [[station]] is required");
  std::vector<double> peaks;
  for (const toml::Table& st : doc.array("station")) {
    grid::StationConfig cfg;
    cfg.station_id = static_cast<int>(st.get_num("id", "station"));
    cfg.bus_id = static_cast<int>(st.get_num("bus", "station"));
    cfg.capacity_e = st.get_num("capacity_e", "station");
    cfg.soc_init = st.get_num_or("soc_init", 0.5);
    cfg.p_max = st.get_num_or("p_max", cfg.capacity_e);  // 1C when not overridden
    if (cfg.capacity_e < 0.0 || cfg.p_max < 0.0 || cfg.soc_init < 0.0 || cfg.soc_init > 1.0)
      throw BadScenario(sc.name + ": station " + std::to_string(cfg.station_id) +
                        " has out-of-range battery parameters");
    sc.stations.push_back(cfg);
    peaks.push_back(st.get_num_or("peak_mw", -1.0));
  }
  util::charging_bus_indices(sc.net, sc.stations);  // early bus validation

  const toml::Table profiles = doc.has_table("profiles") ? doc.table("profiles") : toml::Table{};
  const std::string source = profiles.get_str_or("source", "synth");
  if (source == "synth") {
    const double def_peak = profiles.get_num_or("peak_mw", 4.0);
    for (double& p : peaks)
      if (p < 0.0) p = def_peak;
    const auto seed =
        static_cast<std::uint64_t>(profiles.get_num_or("seed", static_cast<double>(sc.seed)));
    sc.forecasts = grid::synth_profiles(seed, sc.stations, peaks, sc.T);
  } else if (source == "file") {
    std::vector<int> ids = util::station_ids(sc.stations);
    sc.forecasts =
        grid::parse_profiles(resolve(sc.dir, profiles.get_str("path", "profiles")), sc.T, ids);
  } else {
    throw BadScenario(sc.name + ": profiles source must be \"synth\" or \"file\"");
  }

  if (doc.has_table("tou")) {
    sc.has_tou = true;
    sc.tou = parse_tou_csv(resolve(sc.dir, doc.table("tou").get_str("schedule", "tou")));
  }
  if (doc.has_table("icd")) {
    sc.has_icd = true;
    const toml::Table& t = doc.table("icd");
    sc.icd.alpha = t.get_num_or("alpha", sc.icd.alpha);
    sc.icd.beta = t.get_num_or("beta", sc.icd.beta);
    sc.icd.price_scale = t.get_num_or("price_scale", sc.icd.price_scale);
    sc.icd.max_outer_iters = static_cast<int>(t.get_num_or("max_outer_iters", 10));
    sc.icd.price_tol = t.get_num_or("price_tol", sc.icd.price_tol);
    sc.icd.obj_tol = t.get_num_or("obj_tol", sc.icd.obj_tol);
    sc.icd.kkt_tol = t.get_num_or("kkt_tol", sc.icd.kkt_tol);
    sc.icd.seed =
        static_cast<std::uint64_t>(t.get_num_or("seed", static_cast<double>(sc.seed)));
    sc.icd.dt_hours = sc.dt_hours;
    sc.icd.mode = mode;
  }
  if (doc.has_table("sdid")) {
    sc.has_sdid = true;
    const toml::Table& t = doc.table("sdid");
    sc.sdid.alpha = t.get_num_or("alpha", sc.sdid.alpha);
    sc.sdid.beta = t.get_num_or("beta", sc.sdid.beta);
    sc.sdid.eta_init = t.get_num_or("eta", sc.sdid.eta_init);
    sc.sdid.gamma_decay = t.get_num_or("gamma_decay", sc.sdid.gamma_decay);
    sc.sdid.decay = t.get_bool_or("decay", sc.sdid.decay);
    sc.sdid.n_iters = static_cast<int>(t.get_num_or("n_iters", sc.sdid.n_iters));
    sc.sdid.seed =
        static_cast<std::uint64_t>(t.get_num_or("seed", static_cast<double>(sc.seed)));
    sc.sdid.fd_check = t.get_bool_or("fd_check", false);
    sc.sdid.init_lo = t.get_num_or("init_lo", sc.sdid.init_lo);
    sc.sdid.init_hi = t.get_num_or("init_hi", sc.sdid.init_hi);
    sc.sdid.init = t.get_str_or("init", "flat") == "per_entry" ? sdid::PriceInit::PerEntry
                                                               : sdid::PriceInit::Flat;
    sc.sdid.dt_hours = sc.dt_hours;
    sc.sdid.mode = mode;
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Method runners
// ---------------------------------------------------------------------------

ScenarioResult simulate_prices(const Scenario& sc, const std::string& method,
                               const equity::PriceMatrix& prices) {
  ScenarioResult row;
  row.method = method;
  row.prices = prices;
  const std::vector<evsp::DispatchSolution> dispatches =
      evsp::solve_batch(station_problems(sc, prices));
  const int K = static_cast<int>(dispatches.size());
  Eigen::MatrixXd p_net(K, sc.T);
  for (int k = 0; k < K; ++k) p_net.row(k) = dispatches[k].p_net.transpose();
  const std::vector<int> bus_idx = util::charging_bus_indices(sc.net, sc.stations);
  fill_metrics(sc, util::compose_injections(sc.net, bus_idx, p_net), row);
  return row;
}

ScenarioResult run_baseline_tou(const Scenario& sc, const TouSchedule& schedule) {
  const auto tic = std::chrono::steady_clock::now();
  equity::PriceMatrix prices;
  const Eigen::VectorXd period = expand(schedule, sc.T, sc.dt_hours);
  prices.values = period.transpose().replicate(static_cast<int>(sc.stations.size()), 1);
  prices.station_ids = util::station_ids(sc.stations);
  ScenarioResult row = simulate_prices(sc, "tou", prices);
  row.iters = 1;
  row.ms_per_iter = wall_since(tic);
  return row;
}

std::vector<ScenarioResult> run_compare(const Scenario& sc) {
  std::vector<ScenarioResult> rows;

  if (sc.has_tou) {
    ScenarioResult row;
    row.method = "tou";
    try {
      row = run_baseline_tou(sc, sc.tou);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  if (sc.has_icd) {
    ScenarioResult row;
    row.method = "icd";
    try {
      icd::IcdSolution sol = icd::run_icd(sc.net, sc.forecasts, sc.stations, sc.icd);
      row.prices = sol.prices;
      row.icd_log = sol.log;
      row.iters = sol.outer_iters;
      double ms = 0.0;
      for (const icd::IterRecord& r : sol.log) ms += r.wall_ms;
      row.ms_per_iter = sol.log.empty() ? 0.0 : ms / static_cast<double>(sol.log.size());
      // The accepted schedule is the consensus-certified inner optimum.
      fill_metrics(sc, sol.injections, row);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  if (sc.has_sdid) {
    ScenarioResult row;
    row.method = "sdid";
    try {
      sdid::SdidResult sol = sdid::run_sdid(sc.net, sc.forecasts, sc.stations, sc.sdid);
      row.prices = sol.prices;
      row.sdid_trace = sol.trace.records;
      row.iters = static_cast<int>(sol.trace.records.size());
      double ms = 0.0;
      for (const sdid::SdidIter& r : sol.trace.records) ms += r.wall_ms;
      row.ms_per_iter =
          sol.trace.records.empty() ? 0.0 : ms / static_cast<double>(sol.trace.records.size());
      fill_metrics(sc, sol.injections, row);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  return rows;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

void write_outputs(const Scenario& sc, const std::vector<ScenarioResult>& results,
                   const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  {
    std::ofstream table(out / "table.csv");
    table << "method,deviation_pu,gamma,iters,ms_per_iter\n";
    for (const ScenarioResult& r : results) {
      if (r.error.empty())
        table << r.method << "," << fmt(r.frobenius_deviation) << "," << fmt(r.gamma) << ","
              << r.iters << "," << fmt(r.ms_per_iter) << "\n";
      else
        table << r.method << ",nan,nan,0,0\n";
    }
  }

  json summary;
  summary["scenario"] = sc.name;
  summary["seed"] = sc.seed;
  summary["T"] = sc.T;
  summary["dt_hours"] = sc.dt_hours;
  summary["methods"] = json::array();

  for (const ScenarioResult& r : results) {
    json m;
    m["method"] = r.method;
    if (r.error.empty()) {
      m["deviation_pu"] = r.frobenius_deviation;
      m["gamma"] = r.gamma;
      m["iters"] = r.iters;
      m["ms_per_iter"] = r.ms_per_iter;
      write_price_csv((out / ("prices_" + r.method + ".csv")).string(), r.prices);
      write_voltage_csv((out / ("voltages_" + r.method + ".csv")).string(), sc.net, r.voltages);
    } else {
      m["error"] = r.error;
    }
    summary["methods"].push_back(m);

    if (r.method == "sdid" && !r.sdid_trace.empty()) {
      std::ofstream trace(out / "trace_sdid.csv");
      trace << "iter,F,deviation,gamma,eta\n";
      for (const sdid::SdidIter& it : r.sdid_trace)
        trace << it.iter << "," << fmt(it.F) << "," << fmt(it.deviation) << ","
              << fmt(it.gamma) << "," << fmt(it.eta) << "\n";
    }
    if (r.method == "icd" && !r.icd_log.empty()) {
      std::ofstream log(out / "icd_log.csv");
      log << "iter,objective,deviation,gamma,price_delta_inf\n";
      for (const icd::IterRecord& it : r.icd_log)
        log << it.iter << "," << fmt(it.objective) << "," << fmt(it.deviation) << ","
            << fmt(it.gamma) << "," << fmt(it.price_delta_inf) << "\n";
    }
  }

  std::ofstream(out / "summary.json") << summary.dump(2) << "\n";
}

std::string pretty_table(const std::vector<ScenarioResult>& results) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %14s %14s %7s %12s\n", "method", "deviation_pu",
                "gamma", "iters", "ms_per_iter");
  out << line;
  out << std::string(58, '-') << "\n";
  for (const ScenarioResult& r : results) {
    if (!r.error.empty()) {
      std::snprintf(line, sizeof line, "%-8s FAILED: %.120s\n", r.method.c_str(),
                    r.error.c_str());
    } else {
      std::snprintf(line, sizeof line, "%-8s %14.6g %14.6g %7d %12.3f\n", r.method.c_str(),
                    r.frobenius_deviation, r.gamma, r.iters, r.ms_per_iter);
    }
    out << line;
  }
  return out.str();
}

}  // namespace nodal::harness
