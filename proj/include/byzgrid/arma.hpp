#pragma once

// ARMA coefficient estimation for a vector-valued series with scalar
// coefficients shared across entries.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"

namespace byzgrid {

struct ArmaCoefficients {
  Eigen::VectorXd psi;    // AR, length p
  Eigen::VectorXd theta;  // MA, length q
};

enum class MomentSolve {
  Strict,        // rank-deficient moments raise SingularMoments
  MinimumNorm    // use the minimum-norm solution instead
};

/// Largest root modulus of z^p - psi_1 z^{p-1} - ... - psi_p.
inline double ar_spectral_radius(const Eigen::VectorXd& psi) {
  const Eigen::Index p = psi.size();
  if (p == 0) return 0.0;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(p, p);
  C.row(0) = psi.transpose();
  if (p > 1) C.bottomLeftCorner(p - 1, p - 1).setIdentity();
  return C.eigenvalues().cwiseAbs().maxCoeff();
}

/// Ordinary Yule-Walker on the biased autocovariance sequence. The Toeplitz
/// system is positive semidefinite, so the solution is causal.
inline Eigen::VectorXd toeplitz_yule_walker(std::span<const Eigen::VectorXd> g, int p) {
  const int T = static_cast<int>(g.size());
  Eigen::VectorXd acov = Eigen::VectorXd::Zero(p + 1);
  for (int h = 0; h <= p; ++h)
    for (int t = h; t < T; ++t) acov(h) += g[t].dot(g[t - h]);
  Eigen::MatrixXd R(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) R(i, j) = acov(std::abs(i - j));
  if (!(acov(0) > 0)) return Eigen::VectorXd::Zero(p);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(R);
  cod.setThreshold(1e-12);
  return cod.solve(acov.tail(p));
}

/// AR part from the high-lag (modified) Yule-Walker equations
///   sum_m psi_m c(q+k, m) = c(q+k, 0),  k = 1..p,
/// with c(a, b) = sum_t <g_{t-a}, g_{t-b}> over a common range of t, so the
/// moments are consistent for ARMA(p, q) and exact for noiseless AR data.
/// The MA part is fitted by iterated least squares on the AR residuals
/// a_t = e_t - sum_m theta_m e_{t-m}, clamped to |theta| <= 0.99. A non-causal
/// AR estimate is replaced by the ordinary Yule-Walker solution.
inline ArmaCoefficients estimate_arma(std::span<const Eigen::VectorXd> g, int p, int q,
                                      MomentSolve mode = MomentSolve::Strict) {
  const int T = static_cast<int>(g.size());
  if (p < 0 || q < 0) throw LengthError("negative ARMA order");
  if (T < p + q + 1) throw LengthError("series too short for the requested ARMA order");
  ArmaCoefficients c{Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(q)};
  auto dot = [&](int a, int b) { return g[a].dot(g[b]); };

  if (p > 0) {
    Eigen::MatrixXd Phi = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd r = Eigen::VectorXd::Zero(p);
    for (int t = p + q; t < T; ++t) {
      for (int k = 1; k <= p; ++k) {
        const int inst = t - q - k;
        r(k - 1) += dot(inst, t);
        for (int m = 1; m <= p; ++m) Phi(k - 1, m - 1) += dot(inst, t - m);
      }
    }
    const double scale = Phi.cwiseAbs().maxCoeff();
    if (mode == MomentSolve::Strict) {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(Phi);
      lu.setThreshold(1e-10);
      if (!(scale > 0) || lu.rank() < p) throw SingularMoments("autocovariance matrix is rank deficient");
      c.psi = lu.solve(r);
    } else if (scale > 0) {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Phi);
      cod.setThreshold(1e-10);
      c.psi = cod.solve(r);
    }
  }

  if (p > 0 && ar_spectral_radius(c.psi) > 1.0 + 1e-6) c.psi = toeplitz_yule_walker(g, p);

  if (q > 0) {
    std::vector<Eigen::VectorXd> a(T), e(T);
    for (int t = 0; t < T; ++t) {
      a[t] = g[t];
      for (int m = 1; m <= p && t - m >= 0; ++m) a[t] -= c.psi(m - 1) * g[t - m];
      e[t] = t >= p ? a[t] : Eigen::VectorXd::Zero(g[t].size());
    }
    for (int sweep = 0; sweep < 10; ++sweep) {
      Eigen::MatrixXd Ge = Eigen::MatrixXd::Zero(q, q);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q);
      for (int t = p + q; t < T; ++t)
        for (int m = 1; m <= q; ++m) {
          rhs(m - 1) -= e[t - m].dot(a[t]);
          for (int mm = 1; mm <= q; ++mm) Ge(m - 1, mm - 1) += e[t - m].dot(e[t - mm]);
        }
      if (!(Ge.cwiseAbs().maxCoeff() > 0)) break;
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Ge);
      cod.setThreshold(1e-10);
      Eigen::VectorXd th = cod.solve(rhs).cwiseMax(-0.99).cwiseMin(0.99);
      const bool done = (th - c.theta).lpNorm<Eigen::Infinity>() < 1e-10;
      c.theta = th;
      for (int t = p; t < T; ++t) {
        e[t] = a[t];
        for (int m = 1; m <= q && t - m >= p; ++m) e[t] += c.theta(m - 1) * e[t - m];
      }
      if (done) break;
    }
  }
  if (!c.psi.allFinite() || !c.theta.allFinite()) throw SingularMoments("non-finite ARMA estimate");
  return c;
}

}  // namespace byzgrid
