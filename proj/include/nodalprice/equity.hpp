#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nodalprice/common.hpp"

namespace nodal::equity {

// Per-station price trajectories: row k holds station station_ids[k]'s $/kWh
// price for each timestep.
struct PriceMatrix {
  Eigen::MatrixXd values;  // K x T
  std::vector<int> station_ids;

  int K() const { return static_cast<int>(values.rows()); }
  int T() const { return static_cast<int>(values.cols()); }
};

// Economic burden per station: row sums of the price matrix ($/kWh totals).
Eigen::VectorXd burden(const PriceMatrix& prices);

// Equity penalty: min_k burden - max_k burden. Always <= 0; zero exactly when
// every station carries the same burden.
double gamma(const PriceMatrix& prices);

// Epigraph encoding of -gamma = max - min for embedding in a convex program
// with auxiliary scalars [u, l] appended to the decision vector:
//   for each station k:  burden_k - u <= 0   (rows_u row k on [u,l], offset +burden_k)
//                        l - burden_k <= 0   (rows_l row k on [u,l], offset -burden_k)
// and the objective gains obj . [u, l] = u - l, which equals -gamma at the
// minimizer.
struct EpigraphTerms {
  int K = 0;
  Eigen::Vector2d obj;     // (1, -1)
  Eigen::MatrixXd rows_u;  // K x 2, each row (-1, 0)
  Eigen::MatrixXd rows_l;  // K x 2, each row (0, +1)
};

EpigraphTerms gamma_epigraph_terms(int K);

// One element of the subdifferential of gamma with respect to the burden
// vector: e_argmin - e_argmax with lowest-index tie-breaking; the zero vector
// when all burdens are equal (argmin == argmax).
Eigen::VectorXd gamma_subgradient(const Eigen::VectorXd& burdens);

}  // namespace nodal::equity
