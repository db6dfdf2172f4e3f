#pragma once

// Local x-subproblem: minimise f_i(x) + sum_c [mu_c (x - y_c) + eta/2 (x - y_c)^2]
// over the agent's feasible set, by Douglas-Rachford splitting between the
// quadratic's proximal map and the projection onto the feasible set.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"
#include "byzgrid/market.hpp"
#include "byzgrid/projections.hpp"

namespace byzgrid {

/// One copy of an own variable as seen by the owner: current copy value and dual.
struct CopyTerm {
  int index = 0;
  double y = 0;
  double mu = 0;
};

struct XSolveSettings {
  double tol = 1e-8;
  int max_iter = 5000;
};

struct XSolveResult {
  Eigen::VectorXd x;
  Eigen::VectorXd z;  // splitting state, reusable as a warm start
  int iterations = 0;
  double residual = 0;
  double gap_bound = 0;
};

/// Exact projection onto {lo <= x <= hi} intersected with {a'x <= b}.
inline Eigen::VectorXd project_box_halfspace(const Eigen::VectorXd& z, const Eigen::VectorXd& lo,
                                             const Eigen::VectorXd& hi, const Eigen::VectorXd& a,
                                             double b) {
  auto at = [&](double lam) { return (z - lam * a).cwiseMax(lo).cwiseMin(hi).eval(); };
  Eigen::VectorXd x = at(0.0);
  if (a.dot(x) <= b) return x;
  double lo_l = 0.0, hi_l = 1.0;
  while (a.dot(at(hi_l)) > b) {
    hi_l *= 2.0;
    if (hi_l > 1e300) throw BoundsError("box and halfspace do not intersect");
  }
  for (int it = 0; it < 200 && hi_l - lo_l > 1e-15 * hi_l; ++it) {
    const double mid = 0.5 * (lo_l + hi_l);
    (a.dot(at(mid)) > b ? lo_l : hi_l) = mid;
  }
  // Solve the linear piece with the active set found at hi_l exactly.
  x = at(hi_l);
  double fixed = 0, free_az = 0, free_aa = 0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double t = z(k) - hi_l * a(k);
    if (a(k) != 0 && t > lo(k) && t < hi(k)) {
      free_az += a(k) * z(k);
      free_aa += a(k) * a(k);
    } else {
      fixed += a(k) * x(k);
    }
  }
  if (free_aa > 0) {
    const double lam = (fixed + free_az - b) / free_aa;
    const Eigen::VectorXd cand = at(lam);
    if (lam >= 0 && std::abs(a.dot(cand) - b) <= 1e-12 * (1.0 + std::abs(b))) return cand;
  }
  return x;
}

/// Projection of w = (P, Q, v, l) onto the flow cone intersected with the box
/// [lo, hi], for boxes with 0 < lo_v <= hi_v < inf. On such a box the cone is
/// g(x) = (P^2 + Q^2) / v - l <= 0 with g convex, so the projection minimizes
/// the Lagrangian 0.5 |x - w|^2 + t g(x) for the multiplier t >= 0 at which
/// g vanishes. For fixed t, l is clamped, (P, Q) are clamped for each v, and
/// v solves a one-dimensional convex problem. g at the minimizer is
/// non-increasing in t, so t is found by bisection. Returns nullopt when the
/// box has no such form or the intersection is empty.
inline std::optional<Eigen::Vector4d> project_flow_cone_box(const Eigen::Vector4d& w, const Eigen::Vector4d& lo,
                                                            const Eigen::Vector4d& hi) {
  if (!(lo(2) > 0) || !std::isfinite(hi(2)) || (lo.array() > hi.array()).any()) return std::nullopt;
  auto g = [](const Eigen::Vector4d& x) { return (x(0) * x(0) + x(1) * x(1)) / x(2) - x(3); };
  auto minimizer = [&](double t) {
    Eigen::Vector4d x;
    x(3) = std::clamp(w(3) + t, std::max(lo(3), 0.0), hi(3));
    auto flows = [&](double v) {
      const double s = v / (v + 2 * t);
      return Eigen::Vector2d(std::clamp(w(0) * s, lo(0), hi(0)), std::clamp(w(1) * s, lo(1), hi(1)));
    };
    // Envelope derivative of the partially minimized objective in v.
    auto slope = [&](double v) { return (v - w(2)) - t * flows(v).squaredNorm() / (v * v); };
    double a = lo(2), b = hi(2);
    if (slope(a) >= 0) {
      b = a;
    } else if (slope(b) <= 0) {
      a = b;
    } else {
      for (int it = 0; it < 200 && b - a > 1e-16 * b; ++it) {
        const double mid = 0.5 * (a + b);
        (slope(mid) < 0 ? a : b) = mid;
      }
    }
    x(2) = 0.5 * (a + b);
    x.head<2>() = flows(x(2));
    return x;
  };

  Eigen::Vector4d x = minimizer(0.0);
  if (g(x) <= 0) return x;
  double t_lo = 0, t_hi = 1;
  for (x = minimizer(t_hi); g(x) > 0; x = minimizer(t_hi)) {
    t_lo = t_hi;
    t_hi *= 2;
    if (t_hi > 1e300) return std::nullopt;
  }
  for (int it = 0; it < 200 && t_hi - t_lo > 1e-15 * t_hi; ++it) {
    const double mid = 0.5 * (t_lo + t_hi);
    const Eigen::Vector4d xm = minimizer(mid);
    if (g(xm) <= 0) {
      t_hi = mid;
      x = xm;
    } else {
      t_lo = mid;
    }
  }
  return x;
}

/// Projector onto an agent's feasible set. The halfspace touches only (p, q, e)
/// style coordinates and the cone only (P, Q, v, l), so the set is a product
/// and each block is projected on its own.
class LocalSetProjector {
 public:
  explicit LocalSetProjector(const AgentProblem& a) : lower_(a.lower), upper_(a.upper), soc_(a.soc) {
    for (const auto& h : a.halfspaces) halfspaces_.push_back(h);
    if (soc_) {
      for (const auto& h : halfspaces_)
        for (int k : {soc_->P, soc_->Q, soc_->v, soc_->l})
          if (h.a(k) != 0) separable_ = false;
    }
    if (halfspaces_.size() > 1) separable_ = false;
    if (!separable_) {
      sets_.push_back(BoxSet{lower_, upper_});
      for (const auto& h : halfspaces_) sets_.push_back(HalfspaceSet{h.a, h.b});
      if (soc_) sets_.push_back(FlowConeSet{soc_->P, soc_->Q, soc_->v, soc_->l});
    }
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& z, double tol) const {
    if (!separable_) return dykstra(z, sets_, tol, 100000);
    Eigen::VectorXd x = halfspaces_.empty()
                            ? project_box(z, lower_, upper_)
                            : project_box_halfspace(z, lower_, upper_, halfspaces_[0].a, halfspaces_[0].b);
    if (soc_) {
      const int idx[4] = {soc_->P, soc_->Q, soc_->v, soc_->l};
      Eigen::Vector4d w, lo, hi;
      for (int k = 0; k < 4; ++k) {
        w(k) = z(idx[k]);
        lo(k) = lower_(idx[k]);
        hi(k) = upper_(idx[k]);
      }
      Eigen::Vector4d c = w;
      project_flow_cone(c(0), c(1), c(2), c(3));
      auto inside = [&](const Eigen::Vector4d& t) {
        return !((t.array() < lo.array()).any() || (t.array() > hi.array()).any());
      };
      if (!inside(c)) {
        if (const auto t = project_flow_cone_box(w, lo, hi)) {
          c = *t;
        } else {
          const ProjectionSet pair[2] = {BoxSet{lo, hi}, FlowConeSet{0, 1, 2, 3}};
          try {
            c = dykstra(w, pair, tol, 100000);
          } catch (const NonConvergence& e) {
            c = project_box(e.best, lo, hi);
          }
        }
      }
      for (int k = 0; k < 4; ++k) x(idx[k]) = c(k);
    }
    return x;
  }

 private:
  Eigen::VectorXd lower_, upper_;
  std::vector<HalfspaceRow> halfspaces_;
  std::optional<FlowConeIndex> soc_;
  bool separable_ = true;
  std::vector<ProjectionSet> sets_;
};

/// Cached solver for one agent: the quadratic part of the objective is fixed
/// for the whole run, only the linear term moves with copies and duals.
class XSolver {
 public:
  /// `copy_count[k]` is the number of copies of variable k (including the own one).
  XSolver(const AgentProblem& a, const Eigen::VectorXd& copy_count, double eta)
      : eta_(eta), project_(a) {
    const QuadraticCost f = quadratic_cost(a);
    H_ = f.H;
    H_.diagonal() += eta * copy_count;
    g0_ = f.g;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H_);
    lmin_ = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    if (!(lmin_ > 0)) throw NumericalError("x-subproblem is not strongly convex");
    gamma_ = 1.0 / std::sqrt(lmin_ * lmax);
    const Eigen::Index n = H_.rows();
    prox_ = (Eigen::MatrixXd::Identity(n, n) + gamma_ * H_).inverse();
    gap_op_ = H_ - Eigen::MatrixXd::Identity(n, n) / gamma_;
  }

  /// Linear coefficient of the subproblem for the given copies.
  Eigen::VectorXd linear_term(std::span<const CopyTerm> copies) const {
    Eigen::VectorXd g = g0_;
    for (const auto& c : copies) g(c.index) += c.mu - eta_ * c.y;
    return g;
  }

  XSolveResult solve(const Eigen::VectorXd& g, const Eigen::VectorXd* warm, const XSolveSettings& s) const {
    const Eigen::Index n = H_.rows();
    Eigen::VectorXd z = warm && warm->size() == n ? *warm : Eigen::VectorXd::Zero(n);
    const double inner_tol = std::max(s.tol * 1e-2, 1e-14);
    XSolveResult best;
    best.residual = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= s.max_iter; ++it) {
      const Eigen::VectorXd x = prox_ * (z - gamma_ * g);
      const Eigen::VectorXd u = project_(2.0 * x - z, inner_tol);
      const Eigen::VectorXd d = u - x;
      z += d;
      const double res = d.lpNorm<Eigen::Infinity>();
      if (res < best.residual) {
        best.residual = res;
        best.x = u;
        best.z = z;
        best.iterations = it;
        best.gap_bound = (gap_op_ * d).squaredNorm() / (2.0 * lmin_);
      }
      if (res <= s.tol && best.gap_bound <= s.tol) {
        best.iterations = it;
        return best;
      }
    }
    throw NonConvergence("x-subproblem splitting hit its iteration cap", best.x, best.residual,
                         s.max_iter);
  }

  const Eigen::MatrixXd& hessian() const { return H_; }
  double step() const { return gamma_; }

 private:
  double eta_;
  LocalSetProjector project_;
  Eigen::MatrixXd H_, prox_, gap_op_;
  Eigen::VectorXd g0_;
  double lmin_ = 0, gamma_ = 1;
};

/// Stand-alone x-update. Every copy listed in `copies` contributes one penalty term.
inline Eigen::VectorXd solve_x(const AgentProblem& a, std::span<const CopyTerm> copies, double eta,
                               double tol = 1e-8, int max_iter = 5000) {
  Eigen::VectorXd count = Eigen::VectorXd::Zero(a.dim());
  for (const auto& c : copies) {
    if (c.index < 0 || c.index >= a.dim()) throw LayoutError("copy index outside the layout");
    count(c.index) += 1.0;
  }
  XSolver solver(a, count, eta);
  return solver.solve(solver.linear_term(copies), nullptr, {tol, max_iter}).x;
}

}  // namespace byzgrid
