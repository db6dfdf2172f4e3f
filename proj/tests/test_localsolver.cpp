#include <catch_amalgamated.hpp>

#include <array>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace byzgrid;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Projection onto {lo <= x <= hi, a'x <= b} by enumerating active sets.
Eigen::VectorXd box_halfspace_kkt(const Eigen::VectorXd& z, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                  const Eigen::VectorXd& a, double b) {
  const int n = static_cast<int>(z.size());
  int combos = 1;
  for (int i = 0; i < n; ++i) combos *= 3;
  Eigen::VectorXd best;
  double best_d = kInf;
  for (int hs = 0; hs < 2; ++hs)
    for (int c = 0; c < combos; ++c) {
      Eigen::VectorXd x = z;
      std::vector<int> free;
      int code = c;
      for (int i = 0; i < n; ++i, code /= 3) {
        if (code % 3 == 1) x(i) = lo(i);
        else if (code % 3 == 2) x(i) = hi(i);
        else free.push_back(i);
      }
      if (hs) {
        double fixed = 0, aa = 0, az = 0;
        for (int i = 0; i < n; ++i) {
          if (std::find(free.begin(), free.end(), i) == free.end()) fixed += a(i) * x(i);
          else {
            aa += a(i) * a(i);
            az += a(i) * z(i);
          }
        }
        if (aa == 0) continue;
        const double lam = (fixed + az - b) / aa;
        if (lam < 0) continue;
        for (int i : free) x(i) = z(i) - lam * a(i);
      }
      const bool feasible = (x.array() >= lo.array() - 1e-12).all() && (x.array() <= hi.array() + 1e-12).all() &&
                            a.dot(x) <= b + 1e-12;
      if (feasible && (x - z).squaredNorm() < best_d) {
        best_d = (x - z).squaredNorm();
        best = x;
      }
    }
  return best;
}

/// Rotated cone membership and the Moreau conditions for p = proj(z).
void check_flow_cone_projection(const Eigen::Vector4d& z, const Eigen::Vector4d& p) {
  const double tol = 1e-9 * (1 + z.norm());
  CHECK(p(2) >= -tol);
  CHECK(p(3) >= -tol);
  CHECK(p(0) * p(0) + p(1) * p(1) <= p(2) * p(3) + tol);
  const Eigen::Vector4d r = z - p;  // must lie in the polar cone
  CHECK(-r(2) >= -tol);
  CHECK(-r(3) >= -tol);
  CHECK((r(0) * r(0) + r(1) * r(1)) / 4 <= r(2) * r(3) + tol);
  CHECK(std::abs(r.dot(p)) <= tol);
}

}  // namespace

TEST_CASE("box projection", "[projections]") {
  Eigen::VectorXd lo(1), hi(1), x(1);
  lo << 0;
  hi << 1;
  x << 5;
  CHECK(project_box(x, lo, hi)(0) == 1.0);
  x << 0.3;
  CHECK(project_box(x, lo, hi)(0) == 0.3);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-3, 3);
  for (int t = 0; t < 50; ++t) {
    x << U(rng);
    double best = 0, bd = kInf;
    for (int g = 0; g <= 100000; ++g) {
      const double y = g / 100000.0;
      if (std::abs(y - x(0)) < bd) {
        bd = std::abs(y - x(0));
        best = y;
      }
    }
    CHECK_THAT(project_box(x, lo, hi)(0), WithinAbs(best, 1e-5));
  }
  CHECK_THROWS_AS(project_box(x, hi, lo), BoundsError);
}

TEST_CASE("second-order cone projection", "[projections]") {
  Eigen::VectorXd z(2);
  z << 1, 0;
  auto [p, s] = project_soc(z, 2);
  CHECK(p == z);
  CHECK(s == 2);

  Eigen::VectorXd z3(3);
  z3 << 3, 4, 0;
  std::tie(p, s) = project_soc(z3, 0);
  CHECK_THAT(p(0), WithinAbs(1.5, 1e-15));
  CHECK_THAT(p(1), WithinAbs(2.0, 1e-15));
  CHECK(p(2) == 0.0);
  CHECK_THAT(s, WithinAbs(2.5, 1e-15));

  std::tie(p, s) = project_soc(z, -5);
  CHECK(p.isZero());
  CHECK(s == 0.0);
}

TEST_CASE("second-order cone projection agrees with brute-force search", "[projections][oracle]") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector2d z(U(rng), U(rng));
    const double t = U(rng);
    const auto [p, s] = project_soc(Eigen::VectorXd(z), t);
    const auto [pb, sb] = testsupport::soc_brute(z, t);
    const double dist = std::sqrt((p - z).squaredNorm() + (s - t) * (s - t));
    const double dist_b = std::sqrt((pb - z).squaredNorm() + (sb - t) * (sb - t));
    CHECK(dist <= dist_b + 1e-9);
    CHECK_THAT((Eigen::Vector3d(p(0), p(1), s) - Eigen::Vector3d(pb(0), pb(1), sb)).norm(), WithinAbs(0, 1e-6));
  }
}

TEST_CASE("rotated flow cone projection satisfies the Moreau conditions", "[projections][property]") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> U(-3, 3);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::Vector4d z(U(rng), U(rng), U(rng), U(rng));
    Eigen::Vector4d p = z;
    project_flow_cone(p(0), p(1), p(2), p(3));
    check_flow_cone_projection(z, p);
  }
  Eigen::Vector4d inside(0.1, 0.1, 1, 1), p = inside;
  project_flow_cone(p(0), p(1), p(2), p(3));
  CHECK(p == inside);
}

TEST_CASE("cone-box projection matches high-precision Dykstra", "[projections][oracle]") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> U(-1, 1);
  const Eigen::Vector4d lo(-0.5, -0.5, 0.81, 0.0), hi(0.5, 0.5, 1.21, kInf);
  const ProjectionSet sets[2] = {BoxSet{lo, hi}, FlowConeSet{0, 1, 2, 3}};
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector4d w(U(rng), U(rng), 1 + U(rng), U(rng));
    const auto fast = project_flow_cone_box(w, lo, hi);
    REQUIRE(fast.has_value());
    const Eigen::VectorXd ref = dykstra(w, sets, 1e-13, 2000000);
    CHECK((*fast - ref).norm() <= 1e-6);
  }
  CHECK_FALSE(project_flow_cone_box(Eigen::Vector4d::Zero(), Eigen::Vector4d(-1, -1, 0, 0), hi).has_value());
}

TEST_CASE("projections are idempotent and non-expansive", "[projections][property]") {
  std::mt19937_64 rng(31);
  const Eigen::Index n = 4;
  Eigen::VectorXd lo = -Eigen::VectorXd::Ones(n), hi = Eigen::VectorXd::Ones(n);
  const ProjectionSet sets[] = {BoxSet{lo, hi}, HalfspaceSet{Eigen::VectorXd::Ones(n), 0.5},
                                FlowConeSet{0, 1, 2, 3}, AffineNullspaceSet{testsupport::random_matrix(rng, 2, n)}};
  for (const auto& s : sets) {
    for (int t = 0; t < 100; ++t) {
      const Eigen::VectorXd a = testsupport::random_vector(rng, n, 2), b = testsupport::random_vector(rng, n, 2);
      const Eigen::VectorXd pa = project(s, a), pb = project(s, b);
      CHECK((project(s, pa) - pa).norm() <= 1e-10);
      CHECK((pa - pb).norm() <= (a - b).norm() + 1e-10);
    }
  }
}

TEST_CASE("Dykstra on simple intersections", "[projections]") {
  std::mt19937_64 rng(37);
  const Eigen::VectorXd lo1 = Eigen::VectorXd::Constant(3, -1), hi1 = Eigen::VectorXd::Constant(3, 2);
  const Eigen::VectorXd lo2 = Eigen::VectorXd::Constant(3, 0), hi2 = Eigen::VectorXd::Constant(3, 3);
  const ProjectionSet one[] = {BoxSet{lo1, hi1}};
  const ProjectionSet two[] = {BoxSet{lo1, hi1}, BoxSet{lo2, hi2}};
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd x = testsupport::random_vector(rng, 3, 3);
    CHECK((dykstra(x, one) - project_box(x, lo1, hi1)).norm() <= 1e-12);
    CHECK((dykstra(x, two) - project_box(x, lo2, hi1)).norm() <= 1e-9);
  }
}

TEST_CASE("box and halfspace projections match the active-set oracle", "[projections][oracle]") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> U(-2, 2);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd z = testsupport::random_vector(rng, 3, 2);
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(3, -1), hi = Eigen::VectorXd::Constant(3, 1);
    const Eigen::VectorXd a = testsupport::random_vector(rng, 3);
    const double b = U(rng) * 0.5;
    const Eigen::VectorXd ref = box_halfspace_kkt(z, lo, hi, a, b);
    REQUIRE(ref.size() == 3);
    const ProjectionSet sets[] = {BoxSet{lo, hi}, HalfspaceSet{a, b}};
    CHECK((dykstra(z, sets, 1e-12, 1000000) - ref).norm() <= 1e-6);
    CHECK((project_box_halfspace(z, lo, hi, a, b) - ref).norm() <= 1e-9);
  }
}

TEST_CASE("y-update closed form", "[yupdate]") {
  Eigen::MatrixXd M(1, 2);
  M << 1, 1;
  const auto k = precompute_y_kernel(M, 1.0);
  const Eigen::VectorXd x = Eigen::Vector2d(1, 3), mu = Eigen::Vector2d::Zero();
  const Eigen::VectorXd y = solve_y(k, x, mu);
  CHECK_THAT(y(0), WithinAbs(-1.0, 1e-12));
  CHECK_THAT(y(1), WithinAbs(1.0, 1e-12));

  const auto none = precompute_y_kernel(Eigen::MatrixXd(0, 2), 2.0);
  const Eigen::VectorXd mu2 = Eigen::Vector2d(0.4, -1);
  CHECK((solve_y(none, x, mu2) - (x + mu2 / 2.0)).norm() <= 1e-14);

  Eigen::MatrixXd dup(2, 2);
  dup << 1, 1, 2, 2;
  CHECK_THROWS_AS(precompute_y_kernel(dup, 1.0), RankError);
  CHECK_THROWS_AS(precompute_y_kernel(M, 0.0), RankError);
}

TEST_CASE("y-update matches the KKT solve on random instances", "[yupdate][oracle]") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> E(0.2, 5);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = 3 + t % 6, m = 1 + t % 3;
    const Eigen::MatrixXd M = testsupport::random_matrix(rng, m, n);
    const double eta = E(rng);
    const auto k = precompute_y_kernel(M, eta);
    const Eigen::VectorXd x = testsupport::random_vector(rng, n), mu = testsupport::random_vector(rng, n);
    const Eigen::VectorXd y = solve_y(k, x, mu);
    const Eigen::VectorXd ref = testsupport::kkt_nullspace(M, x + mu / eta);
    CHECK((y - ref).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK((M * y).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK((solve_y(k, 3.0 * x, 3.0 * mu) - 3.0 * y).norm() <= 1e-10);
  }
}

TEST_CASE("y-update fixed point on the nullspace", "[yupdate]") {
  std::mt19937_64 rng(47);
  const Eigen::MatrixXd M = testsupport::random_matrix(rng, 2, 5);
  const auto k = precompute_y_kernel(M, 1.5);
  const Eigen::VectorXd x = project(AffineNullspaceSet{M}, testsupport::random_vector(rng, 5));
  CHECK((solve_y(k, x, Eigen::VectorXd::Zero(5)) - x).norm() <= 1e-10);
  // With mu = -eta x the argument of the closed form vanishes.
  CHECK(solve_y(k, x, -1.5 * x).norm() <= 1e-12);
}

namespace {

AgentProblem free_agent(int n) {
  AgentProblem a;
  a.role = AgentRole::Passive;
  a.partners.assign(n - var::first_trade, 0);
  a.lower = Eigen::VectorXd::Constant(n, -kInf);
  a.upper = Eigen::VectorXd::Constant(n, kInf);
  return a;
}

std::vector<CopyTerm> random_copies(std::mt19937_64& rng, int n, int per_var) {
  std::normal_distribution<double> N(0, 1);
  std::vector<CopyTerm> c;
  for (int k = 0; k < n; ++k)
    for (int r = 0; r < per_var; ++r) c.push_back({k, N(rng), N(rng)});
  return c;
}

}  // namespace

TEST_CASE("x-update without constraints is the prox point", "[xupdate]") {
  std::mt19937_64 rng(53);
  AgentProblem a = free_agent(8);
  a.role = AgentRole::Buyer;
  a.cost = CostParams{0.05, 2, 3, 10, 5, 20};
  a.s_base = 100;
  const auto copies = random_copies(rng, a.dim(), 2);
  const double eta = 1.3;
  const QuadraticCost f = quadratic_cost(a);
  Eigen::MatrixXd H = f.H;
  Eigen::VectorXd g = f.g;
  for (const auto& c : copies) {
    H(c.index, c.index) += eta;
    g(c.index) += c.mu - eta * c.y;
  }
  const Eigen::VectorXd ref = H.ldlt().solve(-g);
  CHECK((solve_x(a, copies, eta, 1e-12, 100000) - ref).norm() <= 1e-10);
}

TEST_CASE("x-update with a box matches the per-coordinate solution", "[xupdate]") {
  std::mt19937_64 rng(59);
  AgentProblem a = free_agent(7);
  a.lower = Eigen::VectorXd::Constant(7, -0.3);
  a.upper = Eigen::VectorXd::Constant(7, 0.4);
  const auto copies = random_copies(rng, a.dim(), 3);
  const double eta = 0.7;
  Eigen::VectorXd num = Eigen::VectorXd::Zero(7), den = Eigen::VectorXd::Zero(7);
  for (const auto& c : copies) {
    num(c.index) += eta * c.y - c.mu;
    den(c.index) += eta;
  }
  const Eigen::VectorXd ref = num.cwiseQuotient(den).cwiseMax(a.lower).cwiseMin(a.upper);
  CHECK((solve_x(a, copies, eta, 1e-12, 100000) - ref).norm() <= 1e-9);
}

TEST_CASE("x-update for a buyer with every constraint matches projected gradient", "[xupdate][oracle]") {
  const NetworkCase net = testsupport::three_bus();
  const auto probs = assemble(net, sample_params(2, net));
  const AgentProblem& a = probs[1];
  REQUIRE(a.role == AgentRole::Buyer);
  REQUIRE(a.soc.has_value());
  std::mt19937_64 rng(61);
  const double eta = 1.0;
  std::vector<ProjectionSet> sets{BoxSet{a.lower, a.upper}, HalfspaceSet{a.halfspaces[0].a, a.halfspaces[0].b},
                                  FlowConeSet{var::P, var::Q, var::v, var::l}};
  for (int trial = 0; trial < 5; ++trial) {
    std::normal_distribution<double> N(0, 0.05);
    std::vector<CopyTerm> copies;
    for (int k = 0; k < a.dim(); ++k) copies.push_back({k, (k == var::v ? 1.0 : 0.0) + N(rng), N(rng)});
    const Eigen::VectorXd x = solve_x(a, copies, eta, 1e-10, 200000);

    const QuadraticCost f = quadratic_cost(a);
    Eigen::MatrixXd H = f.H;
    Eigen::VectorXd g = f.g;
    for (const auto& c : copies) {
      H(c.index, c.index) += eta;
      g(c.index) += c.mu - eta * c.y;
    }
    const double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff();
    Eigen::VectorXd z = dykstra(Eigen::VectorXd::Zero(a.dim()), sets, 1e-13, 1000000);
    for (int it = 0; it < 3000; ++it) {
      const Eigen::VectorXd next = dykstra(z - (H * z + g) / L, sets, 1e-13, 1000000);
      const double step = (next - z).norm();
      z = next;
      if (step <= 1e-12) break;
    }
    CHECK((x - z).norm() <= 1e-6);
  }
}

TEST_CASE("x-update rejects copies outside the layout", "[xupdate]") {
  AgentProblem a = free_agent(6);
  const CopyTerm bad[] = {{9, 0, 0}};
  CHECK_THROWS_AS(solve_x(a, bad, 1.0), LayoutError);
}

TEST_CASE("centralized solve on a case with no trading", "[centralized]") {
  const NetworkCase net = testsupport::parse(
      "[bus]\n0 1 1 -5 5 -5 5 0\n1 0.81 1.21 0 0 0 0 0\n2 0.81 1.21 0 0 0 0 0\n[line]\n0 1 0.01 0.02 -50 50 -50 "
      "50\n1 2 0.01 0.02 -50 50 -50 50\n");
  const auto r = centralized_solve(net, sample_params(1, net));
  CHECK(r.outcome.objective == 0.0);
  CHECK(r.outcome.total_traded == 0.0);
  // The relaxation leaves the currents free when nothing is priced, so p0 is
  // only pinned down as the resistive losses of whatever currents remain.
  double losses = 0;
  for (const auto& l : net.lines) losses += l.r * r.x[l.to_bus](var::l);
  CHECK(r.outcome.substation_injection >= -1e-6);
  CHECK_THAT(r.outcome.substation_injection, WithinAbs(net.s_base_kva * losses, 1e-5));
}
