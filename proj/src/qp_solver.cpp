#include "nodalprice/qp_solver.hpp"

#include <Eigen/SparseCholesky>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

namespace nodal::qp {

namespace {

// Working-set state. R is the upper Cholesky factor of S = CW H^-1 CW',
// maintained so that both adds and drops are O(|W|^2): an add appends one
// column, a drop deletes one and restores triangularity with Givens
// rotations instead of refactoring the minor.
struct WorkingSet {
  std::vector<int> idx;
  Eigen::MatrixXd CW;   // |W| x n rows of C
  Eigen::MatrixXd Y;    // n x |W| = H^-1 CW'
  Eigen::MatrixXd R;    // upper Cholesky factor of S
  Eigen::VectorXd sw;   // CW * hg, kept in step with idx
  Eigen::VectorXd hg;   // H^-1 g, set once by the caller before any add
  Eigen::VectorXd reject_gamma;  // expansion coefficients of the last rejected row

  int size() const { return static_cast<int>(idx.size()); }

  // Append one row; returns false (state unchanged, reject_gamma filled) when
  // the row is linearly dependent on the current set.
  bool add(int row, const Eigen::VectorXd& c, const Eigen::VectorXd& w) {
    const int k = size();
    const int n = static_cast<int>(c.size());
    Eigen::VectorXd s_col = (k > 0) ? Eigen::VectorXd(CW.topRows(k) * w) : Eigen::VectorXd(0);
    const double sigma = c.dot(w);
    Eigen::VectorXd r(k);
    if (k > 0)
      r = R.topLeftCorner(k, k).transpose().triangularView<Eigen::Lower>().solve(s_col);
    const double rho2 = sigma - r.squaredNorm();
    if (!(rho2 > 1e-12 * std::abs(sigma) + 1e-300)) {  // dependent
      reject_gamma = (k > 0)
                         ? Eigen::VectorXd(
                               R.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(r))
                         : Eigen::VectorXd(0);
      return false;
    }
    grow(k + 1, n);
    CW.row(k) = c.transpose();
    Y.col(k) = w;
    sw[k] = c.dot(hg);
    if (k > 0) R.block(0, k, k, 1) = r;
    R.row(k).head(k).setZero();
    R(k, k) = std::sqrt(rho2);
    idx.push_back(row);
    return true;
  }

  // Delete one row. Removing column pos of R leaves an upper-Hessenberg
  // matrix whose subdiagonal is chased out with Givens rotations; R'R is
  // preserved exactly under the orthogonal transforms, so the factor stays
  // as accurate as the adds that built it.
  void drop(int pos) {
    const int k = size();
    for (int j = pos; j + 1 < k; ++j) {
      idx[j] = idx[j + 1];
      CW.row(j) = CW.row(j + 1);
      Y.col(j) = Y.col(j + 1);
      sw[j] = sw[j + 1];
    }
    idx.pop_back();
    const int k2 = k - 1;
    for (int c = pos; c < k2; ++c) R.col(c).head(k) = R.col(c + 1).head(k);
    for (int j = pos; j < k2; ++j) {
      const double a = R(j, j), b = R(j + 1, j);
      const double rho = std::hypot(a, b);
      if (rho <= 0.0) continue;
      const double cth = a / rho, sth = b / rho;
      for (int c = j; c < k2; ++c) {
        const double t1 = R(j, c), t2 = R(j + 1, c);
        R(j, c) = cth * t1 + sth * t2;
        R(j + 1, c) = cth * t2 - sth * t1;
      }
    }
  }

 private:
  void grow(int k, int n) {
    if (CW.rows() < k) {
      const int cap = std::max(2 * k, 16);
      CW.conservativeResize(cap, n);
      Y.conservativeResize(n, cap);
      R.conservativeResize(cap, cap);
      sw.conservativeResize(cap);
    }
  }
};

}  // namespace

KktResidual kkt_residual(const Problem& prob, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& mu) {
  KktResidual res;
  const double gscale = std::max(1.0, prob.g.lpNorm<Eigen::Infinity>());
  const double dscale = std::max(1.0, prob.d.size() ? prob.d.lpNorm<Eigen::Infinity>() : 0.0);
  Eigen::VectorXd stat = prob.H * x + prob.g;
  if (prob.m() > 0) stat += prob.C.transpose() * mu;
  res.stationarity = stat.lpNorm<Eigen::Infinity>() / gscale;
  if (prob.m() > 0) {
    Eigen::VectorXd slack = prob.C * x - prob.d;
    res.primal = std::max(0.0, slack.maxCoeff()) / dscale;
    res.dual = std::max(0.0, -mu.minCoeff()) / gscale;
    res.complementarity = (mu.array() * slack.array()).abs().maxCoeff() / gscale;
  }
  return res;
}

Solution solve(const Problem& prob, const Eigen::VectorXd& x0,
               const std::vector<int>& warm_active, int max_iter) {
  const int n = prob.n();
  const int m = prob.m();
  if (max_iter <= 0) max_iter = 200 + 20 * (n + m);

  // The Hessians this library produces are diagonal or block-tridiagonal, so
  // a sparse factorization keeps the per-iteration cost near-linear.
  Eigen::SparseMatrix<double> h_sp = prob.H.sparseView(1.0, 0.0);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h_sp);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
    throw SolverFailure("Hessian is not positive definite",
                        std::numeric_limits<double>::infinity());
  auto hsolve = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd { return ldlt.solve(rhs); };

  Eigen::SparseMatrix<double> c_sp;
  if (m > 0) c_sp = prob.C.sparseView(1.0, 0.0);

  Eigen::VectorXd x = x0;
  Eigen::VectorXd slack(m);  // d - Cx, maintained incrementally
  if (m > 0) {
    slack = prob.d - c_sp * x;
    const double viol = -std::min(0.0, slack.minCoeff());
    if (viol > 1e-7 * std::max(1.0, prob.d.lpNorm<Eigen::Infinity>()))
      throw InfeasibleStart("starting point violates constraints by " + std::to_string(viol));
  }

  // H^-1 g, polished by one residual correction so the unconstrained pull is
  // as accurate as the refined subproblem solutions built on top of it.
  Eigen::VectorXd hg0 = hsolve(prob.g);
  hg0 -= hsolve(Eigen::VectorXd(h_sp * hg0 - prob.g));

  WorkingSet ws;
  ws.hg = hg0;
  std::vector<char> in_ws(m, 0);
  std::vector<char> rejected(m, 0);  // near-dependent tight rows, kept out of the ratio test
  for (int row : warm_active) {
    if (row < 0 || row >= m || in_ws[row]) continue;
    if (std::abs(slack[row]) > 1e-7 * std::max(1.0, std::abs(prob.d[row]))) continue;
    if (ws.size() >= n) break;
    Eigen::VectorXd c = prob.C.row(row).transpose();
    if (ws.add(row, c, hsolve(c))) in_ws[row] = 1;
  }

  const double gscale = std::max(1.0, prob.g.lpNorm<Eigen::Infinity>());
  const double dscale = std::max(1.0, m > 0 ? prob.d.lpNorm<Eigen::Infinity>() : 0.0);
  Eigen::VectorXd row_scale(m);
  for (int i = 0; i < m; ++i)
    row_scale[i] = std::max(1.0, prob.C.row(i).lpNorm<Eigen::Infinity>());
  const double mu_tol = -1e-9 * gscale;
  const bool trace = std::getenv("NP_QP_TRACE") != nullptr;

  // Each iteration solves the equality-constrained subproblem on the current
  // working set directly from (g, d_W), so x never accumulates drift, then
  // walks toward that target under a ratio test. The subproblem solution is
  // refined against the true operator because S = CW H^-1 CW' inherits the
  // Hessian's conditioning and raw Cholesky noise would stall the loop or
  // corrupt the multiplier signs that drive drops.
  Eigen::VectorXd xt(n), p(n);
  // Distance walked since the last drop event; a drop batch that re-forms
  // its vertex without any movement was invalid and demotes to single drops.
  double moved_since_drop = std::numeric_limits<double>::infinity();
  // Rows released at the current vertex. They still sit at zero slack, so a
  // later add at the same point could sweep them straight back in as
  // passengers and re-form the vertex the drop just broke; until the iterate
  // actually moves they may re-enter only by winning the ratio test.
  std::vector<char> dropped_here(m, 0);
  bool any_dropped_here = false;
  for (int it = 1; it <= max_iter; ++it) {
    const int k = ws.size();
    Eigen::VectorXd mu_w(k);
    auto ssolve = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd {
      Eigen::VectorXd y =
          ws.R.topLeftCorner(k, k).transpose().triangularView<Eigen::Lower>().solve(rhs);
      return ws.R.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(y);
    };
    Eigen::VectorXd dw(k);
    if (k > 0) {
      for (int j = 0; j < k; ++j) dw[j] = prob.d[ws.idx[j]];
      mu_w = -ssolve(dw + ws.sw.head(k));
      xt = -hg0 - ws.Y.leftCols(k) * mu_w;
    } else {
      xt = -hg0;
    }
    p = xt - x;
    double pnorm = p.lpNorm<Eigen::Infinity>();
    const double xscale = std::max(1.0, x.lpNorm<Eigen::Infinity>());

    // Ratio test against rows outside the working set.
    Eigen::VectorXd cp;
    double alpha = 1.0;
    int blocker = -1;
    auto ratio_test = [&]() {
      alpha = 1.0;
      blocker = -1;
      if (m == 0) return;
      cp = c_sp * p;
      for (int i = 0; i < m; ++i) {
        if (in_ws[i] || rejected[i]) continue;
        if (cp[i] <= 1e-12 * pnorm * row_scale[i]) continue;
        const double ratio = std::max(0.0, slack[i]) / cp[i];
        if (ratio < alpha - 1e-15) {
          alpha = ratio;
          blocker = i;
        }
      }
    };
    ratio_test();  // raw direction: fine while the steps are large
    if (k > 0 && (blocker < 0 || pnorm <= 1e-3 * xscale)) {
      // Accuracy starts to matter in two places: when the full step would
      // land on the subproblem optimum, and when the step has shrunk to
      // where the raw triangular solve's eps*cond(S) noise could dominate
      // the true direction — walking on noise corrupts the ratio test and
      // the slack bookkeeping at exactly the degenerate vertices that need
      // care. One residual-correction pass against the true operators
      // squares the noise away (the returned certificate still verifies the
      // final multipliers independently); the ratio test reruns because the
      // correction moves the target. Large partial steps toward a blocking
      // row skip all of this, keeping the add-churn phase cheap.
      Eigen::VectorXd stat = h_sp * xt + prob.g + ws.CW.topRows(k).transpose() * mu_w;
      Eigen::VectorXd face = dw - ws.CW.topRows(k) * xt;
      Eigen::VectorXd hs = hsolve(stat);
      Eigen::VectorXd dmu = -ssolve(ws.CW.topRows(k) * hs + face);
      mu_w += dmu;
      xt += -hs - ws.Y.leftCols(k) * dmu;
      p = xt - x;
      pnorm = p.lpNorm<Eigen::Infinity>();
      ratio_test();
    }

    // Feasibility-restore helper: force row i into the working set,
    // exchanging out a working row when i is dependent on the set. The
    // evicted row is the one whose multiplier first reaches zero as weight
    // shifts onto i (ratio test on mu against the expansion gamma); rows
    // with gamma <= 0 only move away from zero and cannot be released. Only
    // called at a converged subproblem where mu_w is trustworthy.
    auto enforce_row = [&](int i) -> bool {
      Eigen::VectorXd c = prob.C.row(i).transpose();
      Eigen::VectorXd w = hsolve(c);
      if (ws.add(i, c, w)) {
        in_ws[i] = 1;
        std::fill(rejected.begin(), rejected.end(), 0);  // geometry changed
        return true;
      }
      const Eigen::VectorXd& gamma = ws.reject_gamma;
      const double gmax = (gamma.size() > 0) ? gamma.cwiseAbs().maxCoeff() : 0.0;
      int evict = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < gamma.size(); ++j) {
        if (gamma[j] <= 1e-8 * gmax) continue;
        const double ratio = std::max(0.0, mu_w[j]) / gamma[j];
        if (ratio < best - 1e-15 ||
            (ratio < best + 1e-15 && (evict < 0 || ws.idx[j] < ws.idx[evict]))) {
          best = ratio;
          evict = j;
        }
      }
      if (evict < 0) {
        rejected[i] = 1;
        return false;
      }
      if (trace)
        std::fprintf(stderr, "qp it=%d exchange: drop row %d for row %d\n", it, ws.idx[evict], i);
      in_ws[ws.idx[evict]] = 0;
      ws.drop(evict);
      std::fill(rejected.begin(), rejected.end(), 0);
      if (ws.add(i, c, w)) {
        in_ws[i] = 1;
        return true;
      }
      rejected[i] = 1;
      return false;
    };

    // A blocker found on a step this small is ratio-test noise (slack and
    // c'p both at rounding level), so it does not veto the optimum branch;
    // the feasibility scan below catches any genuinely violated row.
    if (pnorm <= 1e-9 * xscale) {
      // At the subproblem optimum: either done or drop the worst multiplier.
      int worst = -1;
      double worst_mu = mu_tol;
      for (int j = 0; j < k; ++j)
        if (mu_w[j] < worst_mu) {
          worst_mu = mu_w[j];
          worst = j;
        }
      if (trace && worst >= 0)
        std::fprintf(stderr, "qp it=%d drop row %d mu=%.3e\n", it, ws.idx[worst], worst_mu);
      if (worst < 0) {
        // Verify primal feasibility against every row before declaring
        // victory; incremental slack bookkeeping can mask a violated row
        // that went rejected while tight.
        Eigen::VectorXd true_slack = prob.d - c_sp * xt;
        int viol = -1;
        double vmin = -1e-8 * std::max(1.0, dscale);
        for (int i = 0; i < m; ++i)
          if (!in_ws[i] && true_slack[i] < vmin) {
            vmin = true_slack[i];
            viol = i;
          }
        if (viol < 0) {
          Solution sol;
          sol.x = xt;
          sol.mu = Eigen::VectorXd::Zero(m);
          for (int j = 0; j < k; ++j) sol.mu[ws.idx[j]] = std::max(0.0, mu_w[j]);
          sol.active = std::vector<int>(ws.idx.begin(), ws.idx.end());
          sol.iterations = it;
          sol.kkt = kkt_residual(prob, sol.x, sol.mu);
          return sol;
        }
        if (trace)
          std::fprintf(stderr, "qp it=%d feasibility restore: row %d slack %.3e\n", it, viol,
                       vmin);
        x = xt;
        slack = true_slack;
        slack[viol] = 0.0;
        moved_since_drop = std::numeric_limits<double>::infinity();
        if (any_dropped_here) {
          std::fill(dropped_here.begin(), dropped_here.end(), 0);
          any_dropped_here = false;
        }
        if (!enforce_row(viol))
          throw SolverFailure("cannot restore feasibility of constraint row " +
                                  std::to_string(viol),
                              -vmin / std::max(1.0, dscale));
        continue;
      }
      // Release every decisively negative row in one sweep (highest position
      // first so the remaining positions stay valid); peeling them off one
      // subproblem at a time would spend a full solve-and-polish iteration
      // per row, and a warm start under shifted prices leaves hundreds of
      // wrong rows. The sign argument only holds one row at a time, though:
      // a joint release can drive the step straight back into a released
      // constraint at alpha = 0 and re-form the same vertex. That shows up
      // as a drop event with no movement since the previous one, in which
      // case this vertex gets the classical single-worst release, which
      // cannot re-block immediately. Marginally negative entries also stay
      // put in bulk mode — at a degenerate vertex the multipliers are not
      // unique and a small negative value does not prove its row wrong.
      int released = 0;
      if (moved_since_drop > 1e-10 * xscale) {
        const double decisive = -1e-6 * gscale;
        for (int j = k - 1; j >= 0; --j)
          if (mu_w[j] < decisive) {
            in_ws[ws.idx[j]] = 0;
            dropped_here[ws.idx[j]] = 1;
            ws.drop(j);
            ++released;
          }
      }
      if (released == 0) {
        in_ws[ws.idx[worst]] = 0;
        dropped_here[ws.idx[worst]] = 1;
        ws.drop(worst);
      }
      any_dropped_here = true;
      moved_since_drop = 0.0;
      std::fill(rejected.begin(), rejected.end(), 0);  // geometry changed
      continue;
    }

    // Take the step.
    if (m > 0) {
      if (alpha > 0.0) {
        x += alpha * p;
        slack -= alpha * cp;
        moved_since_drop += alpha * pnorm;
        if (any_dropped_here && moved_since_drop > 1e-10 * xscale) {
          std::fill(dropped_here.begin(), dropped_here.end(), 0);
          any_dropped_here = false;
        }
      }
      if ((it & 63) == 0) slack = prob.d - c_sp * x;  // drift control
    } else {
      x += p;
    }
    if (trace)
      std::fprintf(stderr, "qp it=%d k=%d step alpha=%.3e |p|=%.3e blocker=%d |x|=%.3e |mu|=%.3e\n",
                   it, k, alpha, pnorm, blocker,
                   x.lpNorm<Eigen::Infinity>(),
                   k > 0 ? mu_w.lpNorm<Eigen::Infinity>() : 0.0);
    if (blocker >= 0) {
      // Every row pinned at the new point and violated by the current
      // direction joins in one sweep. Ties are the common case here — a
      // battery hitting a power cap pins a run of cumulative-energy rows
      // at the same instant — and taking them one per direction solve
      // spends a full iteration each to rediscover the same point. Rows
      // merely near the point stay out (they may never bind); each joining
      // row passes the usual independence test or is set aside as
      // dependent. Unlike seeding from a guessed pattern, every row here
      // carries direct evidence: the current descent direction violates it.
      int added = 0;
      for (int i = 0; i < m; ++i) {
        if (in_ws[i] || rejected[i]) continue;
        if (i != blocker && dropped_here[i]) continue;
        if (cp[i] <= 1e-12 * pnorm * row_scale[i]) continue;
        if (i != blocker && slack[i] > 1e-10 * row_scale[i] * xscale) continue;
        slack[i] = 0.0;
        Eigen::VectorXd c = prob.C.row(i).transpose();
        if (ws.add(i, c, hsolve(c))) {
          in_ws[i] = 1;
          ++added;
        } else {
          rejected[i] = 1;  // numerically dependent; span rows hold it
        }
      }
      if (trace)
        std::fprintf(stderr, "qp it=%d batch add %d rows at alpha=%.3e\n", it, added, alpha);
    }
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  throw SolverFailure("active-set iteration limit (" + std::to_string(max_iter) + ") exceeded",
                      kkt_residual(prob, x, mu).overall());
}

}  // namespace nodal::qp
