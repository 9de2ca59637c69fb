#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nodalprice/harness.hpp"
#include "nodalprice/power_flow.hpp"
#include "nodalprice/station_util.hpp"

namespace {

using namespace nodal;

struct Overrides {
  double alpha = -1.0, beta = -1.0, eta = -1.0;
  long long seed = -1, iters = -1;
  int decay = -1;  // tri-state: unset / false / true

  void apply(harness::Scenario& sc) const {
    if (seed >= 0) {
      sc.seed = static_cast<std::uint64_t>(seed);
      sc.icd.seed = sc.seed;
      sc.sdid.seed = sc.seed;
    }
    if (alpha >= 0.0) sc.icd.alpha = sc.sdid.alpha = alpha;
    if (beta >= 0.0) sc.icd.beta = sc.sdid.beta = beta;
    if (eta > 0.0) sc.sdid.eta_init = eta;
    if (iters > 0) {
      sc.icd.max_outer_iters = static_cast<int>(iters);
      sc.sdid.n_iters = static_cast<int>(iters);
    }
    if (decay >= 0) sc.sdid.decay = (decay != 0);
  }
};

int cmd_validate(const std::string& case_path, const std::string& scenario_path) {
  if (!case_path.empty()) {
    grid::Network net = grid::parse_case(case_path);
    std::printf("case ok: %d buses, %zu lines, slack bus %d\n", net.n(), net.lines.size(),
                net.buses[net.slack].id);
  }
  if (!scenario_path.empty()) {
    harness::Scenario sc = harness::load_scenario(scenario_path);
    std::printf("scenario ok: %s (%zu stations, T=%d, methods:%s%s%s)\n", sc.name.c_str(),
                sc.stations.size(), sc.T, sc.has_tou ? " tou" : "", sc.has_icd ? " icd" : "",
                sc.has_sdid ? " sdid" : "");
  }
  return 0;
}

int cmd_powerflow(const std::string& case_path) {
  grid::Network net = grid::parse_case(case_path);
  pf::PfResult res = pf::solve_power_flow(net, net.injections_p(), net.injections_q());
  std::printf("converged in %d iterations, max mismatch %.3e p.u.\n", res.iterations,
              res.max_mismatch);
  for (int i = 0; i < net.n(); ++i)
    std::printf("bus %2d  v = %.6f  theta = %+.6f rad\n", net.buses[i].id, res.op.v[i],
                res.op.theta[i]);
  return 0;
}

int cmd_dispatch(const harness::Scenario& sc) {
  equity::PriceMatrix prices;
  prices.station_ids = util::station_ids(sc.stations);
  if (sc.has_tou) {
    prices.values = harness::expand(sc.tou, sc.T, sc.dt_hours)
                        .transpose()
                        .replicate(static_cast<int>(sc.stations.size()), 1);
  } else {
    prices.values =
        Eigen::MatrixXd::Constant(static_cast<int>(sc.stations.size()), sc.T, 0.3);
    std::puts("no [tou] section; dispatching against a flat 0.30 $/kWh price");
  }
  const Eigen::MatrixXd ev = util::ev_matrix(sc.forecasts, sc.stations, sc.T);
  for (std::size_t k = 0; k < sc.stations.size(); ++k) {
    evsp::DispatchProblem prob;
    prob.prices = prices.values.row(static_cast<int>(k)).transpose();
    prob.load = ev.row(static_cast<int>(k)).transpose();
    prob.capacity_e = sc.stations[k].capacity_e;
    prob.soc_init = sc.stations[k].soc_init;
    prob.p_max = sc.stations[k].p_max;
    prob.dt_hours = sc.dt_hours;
    evsp::DispatchSolution sol = evsp::solve_dispatch(prob);
    std::printf("station %d: cost $%.2f, final SoC %.4f, qp iterations %d\n",
                sc.stations[k].station_id, sol.cost, sol.soc[sc.T], sol.qp_iterations);
  }
  return 0;
}

int run_methods(harness::Scenario sc, const std::string& out_dir, bool want_tou, bool want_icd,
                bool want_sdid) {
  sc.has_tou = sc.has_tou && want_tou;
  sc.has_icd = sc.has_icd && want_icd;
  sc.has_sdid = sc.has_sdid && want_sdid;
  if ((want_icd && !sc.has_icd) || (want_sdid && !sc.has_sdid))
    throw harness::BadScenario(sc.name + ": the requested pricing method is not configured");
  std::vector<harness::ScenarioResult> rows = harness::run_compare(sc);
  harness::write_outputs(sc, rows, out_dir);
  std::fputs(harness::pretty_table(rows).c_str(), stdout);
  std::printf("outputs written to %s\n", out_dir.c_str());
  for (const harness::ScenarioResult& r : rows)
    if (!r.error.empty()) return 1;
  return 0;
}

int cmd_synth_profiles(const harness::Scenario& sc, const std::string& out_file) {
  grid::write_profiles(out_file, sc.forecasts);
  std::printf("wrote %zu profiles x %d steps to %s\n", sc.forecasts.size(), sc.T,
              out_file.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equitable nodal pricing simulator"};
  app.require_subcommand(1);

  std::string scenario_path, case_path, out_dir = "results", out_file = "profiles.csv";
  Overrides ov;

  auto add_common = [&](CLI::App* cmd, bool needs_scenario) {
    if (needs_scenario)
      cmd->add_option("--scenario", scenario_path, "scenario TOML file")->required();
    cmd->add_option("--seed", ov.seed, "override the scenario seed");
    cmd->add_option("--alpha", ov.alpha, "override the deviation weight");
    cmd->add_option("--beta", ov.beta, "override the equity weight");
    cmd->add_option("--eta", ov.eta, "override the subgradient step size");
    cmd->add_option("--iters", ov.iters, "override the iteration budget");
    cmd->add_option("--decay", ov.decay, "override step-size decay (0 or 1)");
  };

  CLI::App* validate = app.add_subcommand("validate", "check a case or scenario file");
  validate->add_option("--case", case_path, "network case JSON");
  validate->add_option("--scenario", scenario_path, "scenario TOML file");

  CLI::App* powerflow = app.add_subcommand("powerflow", "solve the base-case power flow");
  powerflow->add_option("--case", case_path, "network case JSON")->required();

  CLI::App* dispatch =
      app.add_subcommand("dispatch", "solve each station's dispatch at the TOU tariff");
  add_common(dispatch, true);

  CLI::App* price_icd = app.add_subcommand("price-icd", "run the dual pricing loop");
  add_common(price_icd, true);
  price_icd->add_option("--out", out_dir, "output directory");

  CLI::App* price_sdid = app.add_subcommand("price-sdid", "run the subgradient pricing loop");
  add_common(price_sdid, true);
  price_sdid->add_option("--out", out_dir, "output directory");

  CLI::App* compare = app.add_subcommand("compare", "run every configured method");
  add_common(compare, true);
  compare->add_option("--out", out_dir, "output directory");

  CLI::App* synth = app.add_subcommand("synth-profiles", "write the synthetic demand profiles");
  add_common(synth, true);
  synth->add_option("--out", out_file, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (validate->parsed()) {
      if (case_path.empty() && scenario_path.empty()) {
        std::cerr << "validate: pass --case and/or --scenario\n";
        return 2;
      }
      return cmd_validate(case_path, scenario_path);
    }
    if (powerflow->parsed()) return cmd_powerflow(case_path);

    harness::Scenario sc = harness::load_scenario(scenario_path);
    ov.apply(sc);
    if (dispatch->parsed()) return cmd_dispatch(sc);
    if (price_icd->parsed()) return run_methods(std::move(sc), out_dir, false, true, false);
    if (price_sdid->parsed()) return run_methods(std::move(sc), out_dir, false, false, true);
    if (compare->parsed()) return run_methods(std::move(sc), out_dir, true, true, true);
    if (synth->parsed()) return cmd_synth_profiles(sc, out_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
