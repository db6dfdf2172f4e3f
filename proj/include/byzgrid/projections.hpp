#pragma once

// Euclidean projections onto the convex sets that make up a prosumer's local
// feasible region, and Dykstra's method for their intersection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"

namespace byzgrid {

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  if (x.size() != lo.size() || x.size() != hi.size()) throw BoundsError("box dimension mismatch");
  if ((lo.array() > hi.array()).any()) throw BoundsError("box lower bound exceeds upper bound");
  return x.cwiseMax(lo).cwiseMin(hi);
}

inline Eigen::VectorXd project_halfspace(const Eigen::VectorXd& x, const Eigen::VectorXd& a, double b) {
  const double viol = a.dot(x) - b;
  if (viol <= 0) return x;
  return x - (viol / a.squaredNorm()) * a;
}

/// Projection onto the Lorentz cone {(z, t) : ||z|| <= t}.
inline std::pair<Eigen::VectorXd, double> project_soc(const Eigen::VectorXd& z, double t) {
  const double nz = z.norm();
  if (nz <= t) return {z, t};
  if (nz <= -t) return {Eigen::VectorXd::Zero(z.size()), 0.0};
  const double scale = (nz + t) / (2.0 * nz);
  return {scale * z, scale * nz};
}

/// Projection onto the rotated cone {P^2 + Q^2 <= v l, v >= 0, l >= 0}.
///
/// With d = (v - l)/sqrt2 and s = (v + l)/sqrt2 the set reads
/// 2P^2 + 2Q^2 + d^2 <= s^2, an ellipsoidal cone y'Dy <= s^2, D = diag(2,2,1).
/// Outside both the cone and its polar the projection is
/// y = (I + theta D)^{-1} y0, s = s0 / (1 - theta), with theta the root of a
/// scalar equation found by safeguarded Newton.
inline void project_flow_cone(double& P, double& Q, double& v, double& l) {
  constexpr double r2 = 1.4142135623730951;
  const double y0[3] = {P, Q, (v - l) / r2};
  const double D[3] = {2.0, 2.0, 1.0};
  const double s0 = (v + l) / r2;
  double in = 0, polar = 0;
  for (int k = 0; k < 3; ++k) {
    in += D[k] * y0[k] * y0[k];
    polar += y0[k] * y0[k] / D[k];
  }
  if (s0 >= 0 && in <= s0 * s0) return;
  if (s0 <= 0 && polar <= s0 * s0) {
    P = Q = v = l = 0.0;
    return;
  }
  // phi(theta) = (1 - theta)^2 * sum D y0^2 / (1 + theta D)^2 - s0^2 on the
  // branch where s0 / (1 - theta) >= 0.
  auto phi = [&](double th, double* dphi) {
    double a = 0, da = 0;
    for (int k = 0; k < 3; ++k) {
      const double den = 1.0 + th * D[k];
      const double tk = D[k] * y0[k] * y0[k];
      a += tk / (den * den);
      da += -2.0 * tk * D[k] / (den * den * den);
    }
    const double om = 1.0 - th;
    if (dphi) *dphi = -2.0 * om * a + om * om * da;
    return om * om * a - s0 * s0;
  };
  double theta;
  if (s0 == 0.0) {
    theta = 1.0;
  } else {
    double lo, hi;
    if (s0 > 0) {
      lo = 0.0;
      hi = 1.0;  // phi(0) > 0, phi(1) < 0
    } else {
      lo = 1.0;
      hi = 2.0;  // phi(1) < 0, phi grows towards sum y0^2/D - s0^2 > 0
      while (phi(hi, nullptr) < 0) hi *= 2.0;
    }
    const double sign_lo = phi(lo, nullptr) > 0 ? 1.0 : -1.0;
    theta = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      double dp;
      const double f = phi(theta, &dp);
      if (f == 0.0) break;
      if ((f > 0) == (sign_lo > 0))
        lo = theta;
      else
        hi = theta;
      double next = theta - f / dp;
      if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
      if (std::abs(next - theta) <= 1e-16 * std::max(1.0, std::abs(theta))) {
        theta = next;
        break;
      }
      theta = next;
      if (hi - lo <= 1e-16 * std::max(1.0, std::abs(hi))) break;
    }
  }
  double y[3];
  double sy = 0;
  for (int k = 0; k < 3; ++k) {
    y[k] = y0[k] / (1.0 + theta * D[k]);
    sy += D[k] * y[k] * y[k];
  }
  const double s = std::sqrt(sy);
  P = y[0];
  Q = y[1];
  v = (s + y[2]) / r2;
  l = (s - y[2]) / r2;
}

struct BoxSet {
  Eigen::VectorXd lower, upper;
};
struct HalfspaceSet {
  Eigen::VectorXd a;
  double b = 0;
};
/// Rotated flow cone over the given coordinates of the vector.
struct FlowConeSet {
  int P = 0, Q = 1, v = 2, l = 3;
};
/// Null space {y : M y = 0} of a full-row-rank matrix.
struct AffineNullspaceSet {
  Eigen::MatrixXd M;
};

using ProjectionSet = std::variant<BoxSet, HalfspaceSet, FlowConeSet, AffineNullspaceSet>;

inline Eigen::VectorXd project(const ProjectionSet& set, const Eigen::VectorXd& x) {
  return std::visit(
      [&](const auto& s) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxSet>) {
          return project_box(x, s.lower, s.upper);
        } else if constexpr (std::is_same_v<T, HalfspaceSet>) {
          return project_halfspace(x, s.a, s.b);
        } else if constexpr (std::is_same_v<T, FlowConeSet>) {
          Eigen::VectorXd y = x;
          project_flow_cone(y(s.P), y(s.Q), y(s.v), y(s.l));
          return y;
        } else {
          if (s.M.rows() == 0) return x;
          const Eigen::MatrixXd MMt = s.M * s.M.transpose();
          return x - s.M.transpose() * MMt.ldlt().solve(s.M * x);
        }
      },
      set);
}

/// Dykstra's alternating projections. Stops when a full sweep moves the
/// iterate and the correction terms by at most `tol` (infinity norm).
inline Eigen::VectorXd dykstra(const Eigen::VectorXd& x0, std::span<const ProjectionSet> sets,
                               double tol = 1e-10, int max_iter = 10000) {
  if (sets.empty()) return x0;
  if (sets.size() == 1) return project(sets[0], x0);
  Eigen::VectorXd x = x0;
  std::vector<Eigen::VectorXd> inc(sets.size(), Eigen::VectorXd::Zero(x0.size()));
  double change = 0;
  for (int it = 0; it < max_iter; ++it) {
    change = 0;
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const Eigen::VectorXd z = x + inc[k];
      Eigen::VectorXd nx = project(sets[k], z);
      Eigen::VectorXd ninc = z - nx;
      change = std::max(change, (nx - x).lpNorm<Eigen::Infinity>());
      change = std::max(change, (ninc - inc[k]).lpNorm<Eigen::Infinity>());
      x = std::move(nx);
      inc[k] = std::move(ninc);
    }
    if (change <= tol) return x;
  }
  throw NonConvergence("Dykstra projection did not converge", x, change, max_iter);
}

}  // namespace byzgrid
