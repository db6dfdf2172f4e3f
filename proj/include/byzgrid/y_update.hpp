#pragma once

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"

namespace byzgrid {

/// Closed-form y-update for one agent with G = eta I.
struct YUpdateKernel {
  Eigen::MatrixXd Q;
  double eta = 1.0;
  double q_inv_norm = 0.0;  // spectral norm of pinv(Q) on null(M)
};

/// Q = G^{-1} M' (M G^{-1} M')^{-1} M G^{-1} - G^{-1}.
inline YUpdateKernel precompute_y_kernel(const Eigen::MatrixXd& M, double eta) {
  if (!(eta > 0)) throw RankError("penalty must be positive");
  const Eigen::Index n = M.cols();
  YUpdateKernel k;
  k.eta = eta;
  const double ginv = 1.0 / eta;
  k.Q = -ginv * Eigen::MatrixXd::Identity(n, n);
  if (M.rows() > 0) {
    const Eigen::MatrixXd S = ginv * M * M.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    lu.setThreshold(1e-12);
    if (lu.rank() < M.rows()) throw RankError("coupling matrix is not of full row rank");
    k.Q += ginv * ginv * M.transpose() * lu.solve(M);
    k.Q = 0.5 * (k.Q + k.Q.transpose());
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(k.Q);
  const auto& sv = svd.singularValues();
  double smallest = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-10 * sv(0)) smallest = sv(i);
  k.q_inv_norm = smallest > 0 ? 1.0 / smallest : 0.0;
  return k;
}

/// y = Q (-mu - eta x).
inline Eigen::VectorXd solve_y(const YUpdateKernel& k, const Eigen::VectorXd& x, const Eigen::VectorXd& mu) {
  return k.Q * (-mu - k.eta * x);
}

}  // namespace byzgrid
