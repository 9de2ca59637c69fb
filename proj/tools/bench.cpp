// Serial vs OpenMP timings for the data-parallel kernels, on the shipped
// 14-bus case and on a synthetic ring network large enough to show scaling.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "nodalprice/evsp_dispatch.hpp"
#include "nodalprice/grid_model.hpp"
#include "nodalprice/power_flow.hpp"
#include "nodalprice/station_util.hpp"

namespace {

using namespace nodal;
using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& body, int reps) {
  body();  // warm-up
  const auto tic = Clock::now();
  for (int i = 0; i < reps; ++i) body();
  return std::chrono::duration<double, std::milli>(Clock::now() - tic).count() /
         static_cast<double>(reps);
}

void report(const std::string& name, double serial_ms, double parallel_ms) {
  std::printf("%-38s %10.3f ms %10.3f ms %8.2fx\n", name.c_str(), serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

// Ring of n buses with a generator at bus 1 and distributed loads.
grid::Network ring_network(int n) {
  grid::Network net;
  net.base_mva = 100.0;
  SplitMix64 rng(7);
  for (int i = 0; i < n; ++i) {
    grid::Bus bus;
    bus.id = i + 1;
    bus.kind = i == 0 ? grid::BusKind::Slack : grid::BusKind::PQ;
    bus.p_load = i == 0 ? 0.0 : rng.uniform(0.005, 0.02);
    bus.q_load = bus.p_load * 0.3;
    net.buses.push_back(bus);
  }
  net.slack = 0;
  for (int i = 0; i < n; ++i) {
    grid::Line line;
    line.from = i + 1;
    line.to = (i + 1) % n + 1;
    line.g = 5.0;
    line.b = -50.0;
    net.lines.push_back(line);
    if (i % 7 == 3 && i + 5 < n) {  // occasional chords to stiffen the ring
      grid::Line chord;
      chord.from = i + 1;
      chord.to = i + 6;
      chord.g = 3.0;
      chord.b = -30.0;
      net.lines.push_back(chord);
    }
  }
  return net;
}

void bench_jacobian(const grid::Network& net, const std::string& label, int reps) {
  const pf::OperatingPoint op = pf::nominal_op(net);
  const double s = time_ms([&] { pf::assemble_jacobian_full(net, op, Exec::Serial); }, reps);
  const double p = time_ms([&] { pf::assemble_jacobian_full(net, op, Exec::Parallel); }, reps);
  report("jacobian assembly, " + label, s, p);
}

void bench_linearize(const grid::Network& net, int T, const std::string& label, int reps) {
  pf::InjectionSchedule sched;
  sched.p = net.injections_p().replicate(1, T);
  sched.q = net.injections_q().replicate(1, T);
  SplitMix64 rng(11);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < net.n(); ++i)
      if (i != net.slack) sched.p(i, t) += rng.uniform(-0.002, 0.002);
  const pf::OperatingPoint op = pf::nominal_op(net);
  const double s =
      time_ms([&] { pf::linearize_horizon(net, sched, op, 1e-8, 20, Exec::Serial); }, reps);
  const double p =
      time_ms([&] { pf::linearize_horizon(net, sched, op, 1e-8, 20, Exec::Parallel); }, reps);
  report("horizon linearization, " + label, s, p);
}

void bench_dispatch(int K, int T, int reps) {
  SplitMix64 rng(13);
  std::vector<evsp::DispatchProblem> probs(K);
  for (int k = 0; k < K; ++k) {
    probs[k].prices.resize(T);
    probs[k].load.resize(T);
    for (int t = 0; t < T; ++t) {
      probs[k].prices[t] = rng.uniform(0.1, 0.5);
      probs[k].load[t] = rng.uniform(0.0, 4.0);
    }
    probs[k].capacity_e = rng.uniform(0.2, 10.0);
    probs[k].soc_init = rng.uniform(0.1, 0.9);
    probs[k].p_max = probs[k].capacity_e;
    probs[k].dt_hours = 0.25;
  }
  char label[64];
  std::snprintf(label, sizeof label, "dispatch batch, K=%d T=%d", K, T);
  const double s = time_ms([&] { evsp::solve_batch(probs, Exec::Serial); }, reps);
  const double p = time_ms([&] { evsp::solve_batch(probs, Exec::Parallel); }, reps);
  report(label, s, p);
}

}  // namespace

int main() {
  std::printf("%-38s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  const grid::Network small = grid::parse_case(std::string(NP_DATA_DIR) + "/ieee14.json");
  const grid::Network big = ring_network(200);

  bench_jacobian(small, "14-bus", 2000);
  bench_jacobian(big, "200-bus ring", 200);
  bench_linearize(small, 96, "14-bus, T=96", 20);
  bench_linearize(big, 96, "200-bus ring, T=96", 3);
  bench_dispatch(4, 96, 20);
  bench_dispatch(64, 96, 3);
  return 0;
}
