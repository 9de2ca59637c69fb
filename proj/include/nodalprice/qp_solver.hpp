#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nodalprice/common.hpp"

namespace nodal::qp {

// Strictly convex quadratic program
//     minimize    0.5 x' H x + g' x
//     subject to  C x <= d
// H must be symmetric positive definite (callers add a tiny diagonal
// regularizer when the natural Hessian is only semidefinite).
struct Problem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd C;
  Eigen::VectorXd d;

  int n() const { return static_cast<int>(g.size()); }
  int m() const { return static_cast<int>(d.size()); }
};

struct KktResidual {
  double stationarity = 0.0;    // ||Hx + g + C'mu||_inf, relative
  double primal = 0.0;          // worst constraint violation, relative
  double dual = 0.0;            // worst negative multiplier, relative
  double complementarity = 0.0; // worst |mu_i * slack_i|, relative

  double overall() const {
    return std::max(std::max(stationarity, primal), std::max(dual, complementarity));
  }
};

struct Solution {
  Eigen::VectorXd x;
  Eigen::VectorXd mu;         // one multiplier per constraint row, >= 0
  std::vector<int> active;    // working set at termination (independent rows)
  int iterations = 0;
  KktResidual kkt;
};

struct SolverFailure : Error {
  double kkt_residual;
  SolverFailure(const std::string& msg, double r) : Error(msg), kkt_residual(r) {}
};

struct InfeasibleStart : Error { using Error::Error; };

// Primal active-set method (feasible iterates throughout). x0 must satisfy
// C x0 <= d. warm_active optionally seeds the working set with rows that are
// tight at x0; dependent or slack rows in it are ignored. Deterministic:
// ties break toward the lowest row index.
Solution solve(const Problem& prob, const Eigen::VectorXd& x0,
               const std::vector<int>& warm_active = {}, int max_iter = 0);

KktResidual kkt_residual(const Problem& prob, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& mu);

}  // namespace nodal::qp
