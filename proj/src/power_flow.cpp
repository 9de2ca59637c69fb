#include "nodalprice/power_flow.hpp"

#include <cmath>
#include <limits>

namespace nodal::pf {

namespace {

// P_i = v_i sum_k v_k (G_ik cos th_ik + B_ik sin th_ik)
// Q_i = v_i sum_k v_k (G_ik sin th_ik - B_ik cos th_ik)   with th_ik = th_i - th_k
void computed_power(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B, const OperatingPoint& op,
                    Eigen::VectorXd& p, Eigen::VectorXd& q) {
  const int n = static_cast<int>(op.v.size());
  p.resize(n);
  q.resize(n);
  for (int i = 0; i < n; ++i) {
    double pi = 0.0, qi = 0.0;
    for (int k = 0; k < n; ++k) {
      const double th = op.theta[i] - op.theta[k];
      const double c = std::cos(th), s = std::sin(th);
      pi += op.v[k] * (G(i, k) * c + B(i, k) * s);
      qi += op.v[k] * (G(i, k) * s - B(i, k) * c);
    }
    p[i] = op.v[i] * pi;
    q[i] = op.v[i] * qi;
  }
}

void check_op(const OperatingPoint& op) {
  for (Eigen::Index i = 0; i < op.v.size(); ++i)
    if (!(op.v[i] > 0.0))
      throw SingularOperatingPoint("voltage magnitude at bus index " + std::to_string(i) +
                                   " is not positive");
}

// Fills rows i and n+i of the full Jacobian. Each call touches a disjoint row
// pair, so the assembly loop can fan out without synchronization.
void jacobian_rows(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B, const OperatingPoint& op,
                   int i, Eigen::MatrixXd& J) {
  const int n = static_cast<int>(op.v.size());
  const double vi = op.v[i];
  double dp_dvi = 2.0 * vi * G(i, i);
  double dq_dvi = -2.0 * vi * B(i, i);
  double dp_dthi = 0.0;
  double dq_dthi = 0.0;
  for (int k = 0; k < n; ++k) {
    if (k == i) continue;
    const double th = op.theta[i] - op.theta[k];
    const double c = std::cos(th), s = std::sin(th);
    const double vk = op.v[k];
    const double gc_bs = G(i, k) * c + B(i, k) * s;   // appears in P and dQ/dtheta
    const double gs_bc = G(i, k) * s - B(i, k) * c;   // appears in Q and dP/dtheta
    // off-diagonal columns
    J(i, k) = vi * gc_bs;                    // dP_i/dv_k
    J(i, n + k) = vi * vk * gs_bc;           // dP_i/dtheta_k
    J(n + i, k) = vi * gs_bc;                // dQ_i/dv_k
    J(n + i, n + k) = vi * vk * (-G(i, k) * c - B(i, k) * s);  // dQ_i/dtheta_k
    // diagonal accumulators
    dp_dvi += vk * gc_bs;
    dq_dvi += vk * gs_bc;
    dp_dthi += vi * vk * (-G(i, k) * s + B(i, k) * c);
    dq_dthi += vi * vk * gc_bs;
  }
  J(i, i) = dp_dvi;
  J(i, n + i) = dp_dthi;
  J(n + i, i) = dq_dvi;
  J(n + i, n + i) = dq_dthi;
}

Eigen::MatrixXd jacobian_full(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B,
                              const OperatingPoint& op, Exec mode) {
  const int n = static_cast<int>(op.v.size());
  Eigen::MatrixXd J(2 * n, 2 * n);
  if (mode == Exec::Parallel) {
#pragma omp parallel for schedule(static) if (n >= 32)
    for (int i = 0; i < n; ++i) jacobian_rows(G, B, op, i, J);
  } else {
    for (int i = 0; i < n; ++i) jacobian_rows(G, B, op, i, J);
  }
  return J;
}

Eigen::MatrixXd reduce_jacobian(const Eigen::MatrixXd& Jfull, int n, int slack) {
  // Drop the slack real-power row and the slack angle column; keep the slack
  // voltage column and reactive row.
  Eigen::MatrixXd J(2 * n - 1, 2 * n - 1);
  int r = 0;
  for (int row = 0; row < 2 * n; ++row) {
    if (row == slack) continue;  // slack P row
    int c = 0;
    for (int col = 0; col < 2 * n; ++col) {
      if (col == n + slack) continue;  // slack angle column
      J(r, c) = Jfull(row, col);
      ++c;
    }
    ++r;
  }
  return J;
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::VectorXd> ac_residual(const grid::Network& net,
                                                        const OperatingPoint& op,
                                                        const Eigen::VectorXd& inj_p,
                                                        const Eigen::VectorXd& inj_q) {
  check_op(op);
  auto [G, B] = grid::build_admittance(net);
  Eigen::VectorXd p, q;
  computed_power(G, B, op, p, q);
  return {inj_p - p, inj_q - q};
}

Eigen::MatrixXd assemble_jacobian_full(const grid::Network& net, const OperatingPoint& op,
                                       Exec mode) {
  check_op(op);
  auto [G, B] = grid::build_admittance(net);
  return jacobian_full(G, B, op, mode);
}

Eigen::MatrixXd assemble_jacobian(const grid::Network& net, const OperatingPoint& op, Exec mode) {
  return reduce_jacobian(assemble_jacobian_full(net, op, mode), net.n(), net.slack);
}

OperatingPoint nominal_op(const grid::Network& net) {
  OperatingPoint op;
  const int n = net.n();
  op.v.resize(n);
  op.theta.resize(n);
  for (int i = 0; i < n; ++i) {
    op.v[i] = net.buses[i].v_nom;
    op.theta[i] = net.buses[i].theta_nom;
  }
  op.theta.array() -= op.theta[net.slack];  // invariant: theta[slack] == 0
  return op;
}

PfResult solve_power_flow(const grid::Network& net, const Eigen::VectorXd& inj_p,
                          const Eigen::VectorXd& inj_q, double tol, int max_iter,
                          const OperatingPoint* start) {
  const int n = net.n();
  auto [G, B] = grid::build_admittance(net);

  OperatingPoint op = start ? *start : nominal_op(net);
  check_op(op);
  op.theta.array() -= op.theta[net.slack];
  op.v[net.slack] = net.buses[net.slack].v_nom;  // slack magnitude is held fixed

  // Unknown layout: v then theta, non-slack buses only.
  const int m = n - 1;
  std::vector<int> ns;  // non-slack indices
  ns.reserve(m);
  for (int i = 0; i < n; ++i)
    if (i != net.slack) ns.push_back(i);

  Eigen::VectorXd p, q;
  double best = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iter; ++it) {
    computed_power(G, B, op, p, q);
    double mis = 0.0;
    Eigen::VectorXd rhs(2 * m);
    for (int j = 0; j < m; ++j) {
      rhs[j] = inj_p[ns[j]] - p[ns[j]];
      rhs[m + j] = inj_q[ns[j]] - q[ns[j]];
      mis = std::max(mis, std::max(std::abs(rhs[j]), std::abs(rhs[m + j])));
    }
    if (mis < tol || m == 0) return {op, it, mis};
    if (mis > 10.0 * best)
      throw NonConvergence("power flow diverged: mismatch " + std::to_string(mis) +
                               " p.u. after " + std::to_string(it) + " iterations",
                           it, mis);
    best = std::min(best, mis);
    if (it == max_iter) break;

    const Eigen::MatrixXd Jfull = jacobian_full(G, B, op, Exec::Serial);
    Eigen::MatrixXd J(2 * m, 2 * m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) {
        J(r, c) = Jfull(ns[r], ns[c]);              // dP/dv
        J(r, m + c) = Jfull(ns[r], n + ns[c]);      // dP/dtheta
        J(m + r, c) = Jfull(n + ns[r], ns[c]);      // dQ/dv
        J(m + r, m + c) = Jfull(n + ns[r], n + ns[c]);
      }
    const Eigen::VectorXd dx = J.partialPivLu().solve(rhs);
    if (!dx.allFinite())
      throw NonConvergence("power flow step produced non-finite update", it, mis);
    for (int j = 0; j < m; ++j) {
      op.v[ns[j]] += dx[j];
      op.theta[ns[j]] += dx[m + j];
      if (!(op.v[ns[j]] > 0.0))
        throw NonConvergence("voltage magnitude collapsed at bus id " +
                                 std::to_string(net.buses[ns[j]].id),
                             it, mis);
    }
  }
  computed_power(G, B, op, p, q);
  double mis = 0.0;
  for (int i : ns)
    mis = std::max(mis, std::max(std::abs(inj_p[i] - p[i]), std::abs(inj_q[i] - q[i])));
  throw NonConvergence("power flow did not converge in " + std::to_string(max_iter) +
                           " iterations (mismatch " + std::to_string(mis) + " p.u.)",
                       max_iter, mis);
}

JacobianBundle make_bundle(const grid::Network& net, const OperatingPoint& op) {
  JacobianBundle b;
  b.op = op;
  b.n = net.n();
  b.slack = net.slack;
  b.full = assemble_jacobian(net, op, Exec::Serial);
  // Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b.full, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = 1e-10 * (sv.size() ? sv[0] : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) inv[i] = 1.0 / sv[i];
  b.pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  b.reduced_cols = b.pinv.leftCols(b.n - 1);  // real-power mismatch directions
  b.pp_gram = b.reduced_cols.transpose() * b.reduced_cols;
  return b;
}

std::vector<JacobianBundle> linearize_horizon(const grid::Network& net,
                                              const InjectionSchedule& schedule,
                                              const OperatingPoint& initial_op, double tol,
                                              int max_iter, Exec mode) {
  const int T = schedule.T();
  std::vector<OperatingPoint> ops(T);
  if (T > 0) ops[0] = initial_op;
  for (int t = 1; t < T; ++t) {
    try {
      ops[t] = solve_power_flow(net, schedule.p.col(t - 1), schedule.q.col(t - 1), tol, max_iter,
                                &ops[t - 1])
                   .op;
    } catch (const NonConvergence& e) {
      throw NonConvergence(std::string(e.what()) + " (while linearizing timestep " +
                               std::to_string(t - 1) + ")",
                           e.iterations, e.final_mismatch, t - 1);
    }
  }
  std::vector<JacobianBundle> bundles(T);
  if (mode == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) bundles[t] = make_bundle(net, ops[t]);
  } else {
    for (int t = 0; t < T; ++t) bundles[t] = make_bundle(net, ops[t]);
  }
  return bundles;
}

double voltage_deviation(const JacobianBundle& bundle, const Eigen::VectorXd& dp,
                         const Eigen::VectorXd& dq) {
  const int n = bundle.n;
  Eigen::VectorXd rhs(2 * n - 1);
  int r = 0;
  for (int i = 0; i < n; ++i)
    if (i != bundle.slack) rhs[r++] = dp[i];
  rhs.tail(n) = dq;
  return (bundle.pinv * rhs).squaredNorm();
}

VoltageTrace simulate_horizon(const grid::Network& net, const InjectionSchedule& schedule,
                              const OperatingPoint& initial_op, double tol, int max_iter) {
  const int T = schedule.T();
  const int n = net.n();
  VoltageTrace trace;
  trace.v.resize(n, T);
  trace.iterations.resize(T);
  OperatingPoint prev = initial_op;
  for (int t = 0; t < T; ++t) {
    try {
      PfResult res = solve_power_flow(net, schedule.p.col(t), schedule.q.col(t), tol, max_iter, &prev);
      prev = res.op;
      trace.v.col(t) = res.op.v;
      trace.iterations[t] = res.iterations;
    } catch (const NonConvergence& e) {
      throw NonConvergence(std::string(e.what()) + " (at timestep " + std::to_string(t) + ")",
                           e.iterations, e.final_mismatch, t);
    }
  }
  double sq = 0.0;
  for (int t = 1; t < T; ++t) sq += (trace.v.col(t) - trace.v.col(t - 1)).squaredNorm();
  trace.frobenius_deviation = std::sqrt(sq);
  return trace;
}

}  // namespace nodal::pf
