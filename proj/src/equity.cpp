#include "nodalprice/equity.hpp"

#include <string>

namespace nodal::equity {

Eigen::VectorXd burden(const PriceMatrix& prices) {
  if (!prices.values.allFinite()) throw Error("burden: non-finite price entry");
  return prices.values.rowwise().sum();
}

double gamma(const PriceMatrix& prices) {
  if (prices.K() < 1) throw Error("gamma: price matrix has no stations");
  Eigen::VectorXd b = burden(prices);
  return b.minCoeff() - b.maxCoeff();
}

EpigraphTerms gamma_epigraph_terms(int K) {
  if (K < 1) throw Error("gamma_epigraph_terms: K must be at least 1, got " + std::to_string(K));
  EpigraphTerms terms;
  terms.K = K;
  terms.obj << 1.0, -1.0;
  terms.rows_u = Eigen::MatrixXd::Zero(K, 2);
  terms.rows_l = Eigen::MatrixXd::Zero(K, 2);
  terms.rows_u.col(0).setConstant(-1.0);
  terms.rows_l.col(1).setConstant(1.0);
  return terms;
}

Eigen::VectorXd gamma_subgradient(const Eigen::VectorXd& burdens) {
  const int K = static_cast<int>(burdens.size());
  if (K < 1) throw Error("gamma_subgradient: empty burden vector");
  int lo = 0, hi = 0;
  for (int k = 1; k < K; ++k) {
    if (burdens[k] < burdens[lo]) lo = k;
    if (burdens[k] > burdens[hi]) hi = k;
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(K);
  g[lo] += 1.0;
  g[hi] -= 1.0;
  return g;
}

}  // namespace nodal::equity
