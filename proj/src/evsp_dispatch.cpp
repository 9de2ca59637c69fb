#include "nodalprice/evsp_dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>

#include "nodalprice/qp_solver.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nodal::evsp {

namespace {

constexpr double kEpsReg = kDispatchRegularizer;

void validate(const DispatchProblem& prob) {
  if (prob.dt_hours <= 0.0) throw Error("dispatch: dt_hours must be positive");
  if (prob.capacity_e < 0.0)
    throw Error("dispatch: capacity_e is negative (" + std::to_string(prob.capacity_e) + ")");
  if (prob.soc_init < 0.0 || prob.soc_init > 1.0)
    throw Error("dispatch: soc_init outside [0,1] (" + std::to_string(prob.soc_init) + ")");
  if (prob.p_max < 0.0)
    throw Error("dispatch: p_max is negative (" + std::to_string(prob.p_max) + ")");
  if (prob.load.size() != prob.prices.size())
    throw Error("dispatch: load length " + std::to_string(prob.load.size()) +
                " does not match price length " + std::to_string(prob.prices.size()));
  if (prob.T() == 0) throw Error("dispatch: empty horizon");
  if (!prob.prices.allFinite() || !prob.load.allFinite())
    throw Error("dispatch: non-finite price or load entry");
}

DispatchSolution idle_solution(const DispatchProblem& prob) {
  const int T = prob.T();
  DispatchSolution sol;
  sol.p_b = Eigen::VectorXd::Zero(T);
  sol.soc = Eigen::VectorXd::Constant(T + 1, prob.soc_init);
  sol.p_net = prob.load;
  sol.cost = cost_scale(prob.dt_hours) * prob.load.dot(prob.prices);
  sol.mu = Eigen::VectorXd::Zero(4 * T);
  return sol;
}

}  // namespace

double soc_step(double soc, double p_b, double dt_hours, double capacity_e) {
  if (capacity_e == 0.0)
    throw ZeroCapacity("soc_step: capacity_e = 0 has no state of charge to evolve");
  return soc + p_b * dt_hours / capacity_e;
}

DispatchSolution solve_dispatch(const DispatchProblem& prob) {
  validate(prob);
  const int T = prob.T();
  if (prob.capacity_e == 0.0 || prob.p_max == 0.0) return idle_solution(prob);

  const double scale = cost_scale(prob.dt_hours);
  const double r = prob.dt_hours / prob.capacity_e;  // SoC per MW of battery power

  qp::Problem qpp;
  qpp.H = Eigen::MatrixXd::Identity(T, T) * (2.0 * kEpsReg);
  qpp.g = prob.prices * scale;
  qpp.C = Eigen::MatrixXd::Zero(4 * T, T);
  qpp.d = Eigen::VectorXd::Zero(4 * T);
  for (int t = 0; t < T; ++t) {
    qpp.C(t, t) = 1.0;
    qpp.d[t] = prob.p_max;
    qpp.C(T + t, t) = -1.0;
    qpp.d[T + t] = prob.p_max;
    for (int s = 0; s <= t; ++s) {
      qpp.C(2 * T + t, s) = r;
      qpp.C(3 * T + t, s) = -r;
    }
    qpp.d[2 * T + t] = 1.0 - prob.soc_init;
    qpp.d[3 * T + t] = prob.soc_init;
  }

  qp::Solution qsol = qp::solve(qpp, Eigen::VectorXd::Zero(T));
  if (qsol.kkt.overall() > 1e-6)
    throw qp::SolverFailure("dispatch QP certificate exceeds 1e-6", qsol.kkt.overall());

  DispatchSolution sol;
  sol.p_b = qsol.x;
  sol.soc.resize(T + 1);
  sol.soc[0] = prob.soc_init;
  for (int t = 0; t < T; ++t) sol.soc[t + 1] = sol.soc[t] + sol.p_b[t] * r;

  // Feasibility certificate: re-check every invariant, then snap roundoff.
  const double tol = 1e-9;
  for (int t = 0; t < T; ++t) {
    if (std::abs(sol.p_b[t]) > prob.p_max + tol)
      throw qp::SolverFailure("dispatch power bound violated at t=" + std::to_string(t),
                              std::abs(sol.p_b[t]) - prob.p_max);
    if (sol.soc[t + 1] < -tol || sol.soc[t + 1] > 1.0 + tol)
      throw qp::SolverFailure("dispatch SoC bound violated at t=" + std::to_string(t + 1),
                              std::max(-sol.soc[t + 1], sol.soc[t + 1] - 1.0));
  }
  for (int t = 0; t < T; ++t) {
    sol.p_b[t] = std::clamp(sol.p_b[t], -prob.p_max, prob.p_max);
    sol.soc[t + 1] = std::clamp(sol.soc[t + 1], 0.0, 1.0);
  }
  sol.p_net = sol.p_b + prob.load;
  sol.cost = scale * sol.p_net.dot(prob.prices);  // regularizer excluded
  sol.mu = qsol.mu;
  sol.active = qsol.active;
  sol.qp_iterations = qsol.iterations;
  return sol;
}

double dispatch_oracle_dp(const DispatchProblem& prob, int soc_levels, int power_levels) {
  validate(prob);
  const int T = prob.T();
  if (T > 16)
    throw TooLarge("dispatch_oracle_dp: horizon " + std::to_string(T) + " exceeds 16 steps");
  if (soc_levels < 2 || power_levels < 2)
    throw Error("dispatch_oracle_dp: soc_levels and power_levels must be at least 2");

  const double scale = cost_scale(prob.dt_hours);
  const double load_cost = scale * prob.load.dot(prob.prices);
  if (prob.capacity_e == 0.0 || prob.p_max == 0.0) return load_cost;

  // SoC grid anchored at soc_init so the start state is represented exactly.
  const double h = 1.0 / (soc_levels - 1);
  const int j_lo = static_cast<int>(std::ceil((0.0 - prob.soc_init) / h - 1e-12));
  const int j_hi = static_cast<int>(std::floor((1.0 - prob.soc_init) / h + 1e-12));
  const int states = j_hi - j_lo + 1;
  const int start = -j_lo;  // index of soc_init in the grid

  // Grid transitions within both the discretized action count and p_max.
  const double p_per_step = h * prob.capacity_e / prob.dt_hours;
  int amax = (power_levels - 1) / 2;
  amax = std::min<int>(amax, static_cast<int>(std::floor(prob.p_max / p_per_step + 1e-12)));

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> value(states, 0.0), next(states);
  for (int t = T - 1; t >= 0; --t) {
    for (int s = 0; s < states; ++s) {
      double best = inf;
      for (int a = -amax; a <= amax; ++a) {
        const int s2 = s + a;
        if (s2 < 0 || s2 >= states) continue;
        const double cand = a * p_per_step * prob.prices[t] * scale + value[s2];
        best = std::min(best, cand);
      }
      next[s] = best;
    }
    value.swap(next);
  }
  return load_cost + value[start];
}

std::vector<DispatchSolution> solve_batch(const std::vector<DispatchProblem>& probs, Exec mode) {
  const int K = static_cast<int>(probs.size());
  std::vector<DispatchSolution> out(K);
  std::vector<std::exception_ptr> errors(K);  // rethrown with type preserved
  if (mode == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < K; ++k) {
      try {
        out[k] = solve_dispatch(probs[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  } else {
    for (int k = 0; k < K; ++k) {
      try {
        out[k] = solve_dispatch(probs[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  }
  for (int k = 0; k < K; ++k)
    if (errors[k]) std::rethrow_exception(errors[k]);
  return out;
}

}  // namespace nodal::evsp
