#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "nodalprice/grid_model.hpp"

namespace nodal::pf {

using nodal::Exec;

struct OperatingPoint {
  Eigen::VectorXd v;      // magnitudes, p.u., strictly positive
  Eigen::VectorXd theta;  // radians, theta[slack] == 0
};

// Linearization of the power-flow equations at one operating point, in the
// reduced coordinates used by the pricing machinery: the slack bus keeps its
// voltage-magnitude column and reactive-power row, but the slack angle column
// and the slack real-power row are removed, giving a square (2n-1) system.
// Row order: P at non-slack buses, then Q at all buses.
// Column order: V at all buses, then theta at non-slack buses.
struct JacobianBundle {
  OperatingPoint op;
  int n = 0;      // bus count
  int slack = 0;  // internal slack index
  Eigen::MatrixXd full;          // (2n-1) x (2n-1)
  Eigen::MatrixXd pinv;          // Moore-Penrose pseudo-inverse of `full`
  Eigen::MatrixXd reduced_cols;  // pinv columns hit by real-power deltas, (2n-1) x (n-1)
  Eigen::MatrixXd pp_gram;       // reduced_cols' * reduced_cols, (n-1) x (n-1)
};

// Net scheduled injections per timestep (generation minus load), p.u.
struct InjectionSchedule {
  Eigen::MatrixXd p;  // n x T
  Eigen::MatrixXd q;  // n x T

  int T() const { return static_cast<int>(p.cols()); }
};

struct VoltageTrace {
  Eigen::MatrixXd v;                // n x T solved magnitudes
  std::vector<int> iterations;      // Newton iterations per timestep
  double frobenius_deviation = 0.0; // Frobenius norm of the n x (T-1) successive-difference matrix
};

struct SingularOperatingPoint : Error { using Error::Error; };

struct NonConvergence : Error {
  int iterations;
  double final_mismatch;
  int timestep;  // -1 outside horizon operations
  NonConvergence(const std::string& msg, int iters, double mismatch, int t = -1)
      : Error(msg), iterations(iters), final_mismatch(mismatch), timestep(t) {}
};

// Power-flow mismatch (scheduled minus computed) at every bus, p.u.
std::pair<Eigen::VectorXd, Eigen::VectorXd> ac_residual(const grid::Network& net,
                                                        const OperatingPoint& op,
                                                        const Eigen::VectorXd& inj_p,
                                                        const Eigen::VectorXd& inj_q);

// Full analytic Jacobian, 2n x 2n: rows [P; Q], columns [V; theta].
Eigen::MatrixXd assemble_jacobian_full(const grid::Network& net, const OperatingPoint& op,
                                       Exec mode = Exec::Parallel);

// Reduced (2n-1) x (2n-1) Jacobian (see JacobianBundle for the convention).
Eigen::MatrixXd assemble_jacobian(const grid::Network& net, const OperatingPoint& op,
                                  Exec mode = Exec::Parallel);

struct PfResult {
  OperatingPoint op;
  int iterations = 0;      // mismatch evaluations, final (passing) check included
  double max_mismatch = 0; // max |residual| over non-slack rows at the returned point
};

// Newton-Raphson with the conventional slack treatment: the slack bus holds
// v = v_nom, theta = 0 and absorbs the P/Q imbalance; unknowns and mismatch
// rows live at non-slack buses. Steps solve the reduced linear system by LU
// with partial pivoting. Divergence (mismatch above 10x its running minimum)
// and iteration exhaustion raise NonConvergence.
PfResult solve_power_flow(const grid::Network& net, const Eigen::VectorXd& inj_p,
                          const Eigen::VectorXd& inj_q, double tol = 1e-8, int max_iter = 20,
                          const OperatingPoint* start = nullptr);

// Nominal operating point from the case data.
OperatingPoint nominal_op(const grid::Network& net);

JacobianBundle make_bundle(const grid::Network& net, const OperatingPoint& op);

// One bundle per timestep: bundle t is assembled at the operating point
// implied by timestep t-1's injections (full nonlinear solve, warm-started
// along the horizon); bundle 0 uses initial_op. Operating points are found
// sequentially; bundle assembly/SVD fans out across timesteps.
std::vector<JacobianBundle> linearize_horizon(const grid::Network& net,
                                              const InjectionSchedule& schedule,
                                              const OperatingPoint& initial_op, double tol = 1e-8,
                                              int max_iter = 20, Exec mode = Exec::Parallel);

// Squared 2-norm of the first-order voltage response ||pinv [dp; dq]||^2;
// dp/dq are full n-vectors, the slack dp row is dropped consistently with the
// bundle reduction.
double voltage_deviation(const JacobianBundle& bundle, const Eigen::VectorXd& dp,
                         const Eigen::VectorXd& dq);

// Sequential nonlinear validation of a whole horizon.
VoltageTrace simulate_horizon(const grid::Network& net, const InjectionSchedule& schedule,
                              const OperatingPoint& initial_op, double tol = 1e-8,
                              int max_iter = 20);

}  // namespace nodal::pf
