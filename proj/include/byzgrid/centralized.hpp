#pragma once

// Reference solver for the undecomposed market problem: Douglas-Rachford
// splitting between (cost + linear coupling) and the product of the agents'
// local feasible sets.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"
#include "byzgrid/market.hpp"
#include "byzgrid/x_update.hpp"

namespace byzgrid {

struct CentralizedSettings {
  double tol = 1e-9;
  int max_iter = 400000;
  double step = 1.0;
};

struct CentralizedResult {
  MarketOutcome outcome;
  std::vector<Eigen::VectorXd> x;
  int iterations = 0;
  double residual = 0;
};

inline CentralizedResult centralized_solve(const NetworkCase& net, std::span<const CostParams> params,
                                           const CentralizedSettings& s = {},
                                           UtilityForm utility = UtilityForm::Aggregate) {
  const auto problems = assemble(net, params, utility);
  const std::size_t na = problems.size();
  std::vector<int> offset(na + 1, 0);
  for (std::size_t i = 0; i < na; ++i) offset[i + 1] = offset[i] + problems[i].dim();
  const int n = offset[na];

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd g(n);
  for (std::size_t i = 0; i < na; ++i) {
    const auto f = quadratic_cost(problems[i]);
    H.block(offset[i], offset[i], f.H.rows(), f.H.cols()) = f.H;
    g.segment(offset[i], f.g.size()) = f.g;
  }

  std::vector<Eigen::VectorXd> rows;
  for (const auto& a : problems) {
    for (Eigen::Index r = 0; r < a.coupling.rows(); ++r) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
      bool duplicate_trade = false;
      for (Eigen::Index c = 0; c < a.coupling.cols(); ++c) {
        const double coef = a.coupling(r, c);
        if (coef == 0) continue;
        const VarRef ref = a.y_layout[c];
        row(offset[ref.owner] + ref.index) += coef;
        // Reciprocity rows appear at both partners; keep the buyer's.
        if (ref.owner != a.id && ref.index >= var::first_trade && a.role == AgentRole::Seller)
          duplicate_trade = true;
      }
      if (!duplicate_trade) rows.push_back(row);
    }
  }
  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t r = 0; r < rows.size(); ++r) A.row(r) = rows[r].transpose();

  const double gamma = s.step;
  const Eigen::MatrixXd K = H + Eigen::MatrixXd::Identity(n, n) / gamma;
  const Eigen::MatrixXd Kinv = K.llt().solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd map = Kinv / gamma;
  Eigen::VectorXd shift = -Kinv * g;
  if (A.rows() > 0) {
    const Eigen::MatrixXd KAt = Kinv * A.transpose();
    const Eigen::MatrixXd S = A * KAt;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (lu.rank() < S.rows()) throw RankError("coupling rows are linearly dependent");
    const Eigen::MatrixXd corr = KAt * lu.solve(A);
    map -= corr * Kinv / gamma;
    shift += corr * Kinv * g;
  }

  std::vector<LocalSetProjector> proj;
  for (const auto& a : problems) proj.emplace_back(a);
  auto project_all = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out(n);
    for (std::size_t i = 0; i < na; ++i)
      out.segment(offset[i], problems[i].dim()) = proj[i](v.segment(offset[i], problems[i].dim()), 1e-13);
    return out;
  };

  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd u = z;
  double res = std::numeric_limits<double>::infinity();
  int it = 0;
  for (it = 1; it <= s.max_iter; ++it) {
    const Eigen::VectorXd x = map * z + shift;
    u = project_all(2.0 * x - z);
    const Eigen::VectorXd d = u - x;
    z += d;
    res = d.lpNorm<Eigen::Infinity>();
    if (res <= s.tol) break;
  }
  if (res > s.tol) throw NonConvergence("centralized splitting hit its iteration cap", u, res, s.max_iter);

  CentralizedResult out;
  for (std::size_t i = 0; i < na; ++i) out.x.push_back(u.segment(offset[i], problems[i].dim()));
  out.outcome = outcome(out.x, problems, net);
  out.iterations = it;
  out.residual = res;
  return out;
}

}  // namespace byzgrid
