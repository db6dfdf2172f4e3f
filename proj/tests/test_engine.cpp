#include <catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"

using namespace byzgrid;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

EngineConfig quick(int k_max = 3000) {
  EngineConfig c;
  c.k_max = k_max;
  return c;
}

}  // namespace

TEST_CASE("theorem checker arithmetic", "[engine][theorem]") {
  const AgentTheorem a = check_theorem1(1.0, 0.1, 1.0, 1.0, 1.0);
  CHECK_THAT(a.condition1, WithinAbs(0.48, 1e-15));
  CHECK_THAT(a.condition2, WithinAbs(0.98, 1e-15));
  CHECK((a.satisfied1 && a.satisfied2));

  const AgentTheorem b = check_theorem1(0.7, 0.0, 0.3, 2.0, 0.5);
  CHECK_THAT(b.condition1, WithinAbs(0.5 * 0.7 / 2, 1e-15));
  CHECK_THAT(b.condition2, WithinAbs(0.5 * 1.0 / 2, 1e-15));
  CHECK((b.satisfied1 && b.satisfied2));

  const AgentTheorem c = check_theorem1(1.0, 1.0, 0.1, 1.0, 1.0);
  CHECK_THAT(c.condition2, WithinAbs(0.55 - 2.0, 1e-15));
  CHECK_FALSE(c.satisfied2);

  const AgentTheorem d = check_theorem1(1.0, 0.1, 1.0, 1.0, 0.0);
  CHECK_FALSE(d.satisfied1);
  CHECK_FALSE(d.satisfied2);
}

TEST_CASE("theorem report covers every agent", "[engine][theorem]") {
  const NetworkCase net = load_case(testsupport::case_path("ieee15.case"));
  const auto probs = assemble(net, sample_params(1, net));
  EngineConfig cfg;
  cfg.lambda = 0;
  const TheoremReport ok = theorem_report(probs, cfg);
  CHECK(ok.agents.size() == net.size());
  CHECK(ok.all_satisfied());
  cfg.lambda = 1;
  CHECK_FALSE(theorem_report(probs, cfg).all_satisfied());
}

TEST_CASE("residuals by hand on two agents", "[engine]") {
  const NetworkCase net = testsupport::two_bus();
  const auto probs = assemble(net, sample_params(1, net));
  const CopyMap map(probs);
  std::vector<AgentState> st(2);
  for (int i = 0; i < 2; ++i) {
    st[i].x = Eigen::VectorXd::Zero(probs[i].dim());
    st[i].y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(probs[i].y_layout.size()));
  }
  std::vector<Eigen::VectorXd> prev{st[0].y, st[1].y};
  Residuals r = residuals(map, st, prev, 1.0);
  CHECK(r.primal == 0.0);
  CHECK(r.dual == 0.0);

  // Agent 0 holds the child's P, Q, l and e; agent 1 holds the root's v and e.
  st[1].x(var::P) = 3.0;
  st[1].x(var::Q) = 4.0;
  st[0].x(var::v) = 1.0;
  st[0].y(probs[0].y_index({1, var::P})) = 0.5;
  prev[1](probs[1].y_index({0, var::v})) = -2.0;
  r = residuals(map, st, prev, 2.0);
  // Group (1 -> 0): (3 - 0.5, 4); group (0 -> 1): (1); own copies ignored.
  CHECK_THAT(r.primal, WithinAbs(std::hypot(2.5, 4.0) + 1.0, 1e-12));
  CHECK_THAT(r.dual, WithinAbs(2.0 * 0.5 + 2.0 * 2.0, 1e-12));
}

TEST_CASE("packet fields follow the sharing rules", "[engine][protocol]") {
  const NetworkCase net = testsupport::three_bus();
  const Simulation sim(net, sample_params(1, net), quick());
  for (const SharedPacket& p : sim.share(Stage::X)) {
    if (p.edge == EdgeKind::ParentToChild) {
      CHECK(p.sender == 0);
      REQUIRE(p.payload.size() == 2);
      CHECK(p.payload[0].var.index == var::v);
      CHECK_FALSE(p.payload[0].dual);
      CHECK(p.payload[1].dual);
    }
    if (p.edge == EdgeKind::ChildToParent) {
      CHECK(p.receiver == 0);
      CHECK(p.find(var::P));
      CHECK(p.find(var::Q));
      CHECK(p.find(var::l));
    }
  }
  int partner = 0;
  for (const SharedPacket& p : sim.share(Stage::Y)) {
    for (const auto& f : p.payload) CHECK_FALSE(f.dual);
    if (p.edge == EdgeKind::Partner) {
      ++partner;
      REQUIRE(p.payload.size() == 1);
      CHECK(p.payload[0].var.index >= var::first_trade);
      CHECK(p.payload[0].var.owner == p.receiver);
    }
  }
  CHECK(partner == 2);
}

TEST_CASE("leaf without partners only talks to its parent", "[engine][protocol]") {
  const NetworkCase net = testsupport::parse(
      "[bus]\n0 1 1 -5 5 -5 5 0\n1 0.81 1.21 0 1 0 1 0\n[line]\n0 1 0.01 0.02 -5 5 -5 5\n");
  const Simulation sim(net, sample_params(1, net), quick());
  for (Stage s : {Stage::X, Stage::Y})
    for (const SharedPacket& p : sim.share(s)) CHECK(((p.sender == 1 && p.receiver == 0) || (p.sender == 0 && p.receiver == 1)));
}

TEST_CASE("faultless run on a small case matches the centralized optimum", "[engine]") {
  const NetworkCase net = testsupport::three_bus();
  const auto params = sample_params(4, net);
  const RunReport r = run(net, params, std::nullopt, false, quick());
  REQUIRE(r.converged);
  const auto c = centralized_solve(net, params);
  CHECK_THAT(r.outcome.objective, WithinRel(c.outcome.objective, 1e-3));
  // Residuals are measured in per-unit, so the stopping rule bounds the gap by varpi1 * s_base.
  CHECK(r.outcome.max_reciprocity_gap <= quick().varpi1 * net.s_base_kva);
  CHECK(r.trace.size() == static_cast<std::size_t>(r.iterations));
  CHECK(r.trace.back().gamma_p <= 1e-4);
  CHECK(r.trace.back().gamma_d <= 1e-4);
  CHECK(r.subproblem_failures == 0);
}

TEST_CASE("runs are deterministic and a dormant attack changes nothing", "[engine][property]") {
  const NetworkCase net = testsupport::three_bus();
  const auto params = sample_params(4, net);
  const RunReport a = run(net, params, std::nullopt, false, quick(200));
  const RunReport b = run(net, params, std::nullopt, false, quick(200));
  AttackScenario never;
  never.targets = {{1, 0}};
  never.start_iter = std::numeric_limits<int>::max();
  const RunReport c = run(net, params, never, false, quick(200));
  REQUIRE(a.trace.size() == b.trace.size());
  REQUIRE(a.trace.size() == c.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    CHECK(a.trace[k].gamma_p == b.trace[k].gamma_p);
    CHECK(a.trace[k].omega == b.trace[k].omega);
    CHECK(a.trace[k].gamma_p == c.trace[k].gamma_p);
    CHECK(a.trace[k].p0 == c.trace[k].p0);
  }
}

TEST_CASE("detector stays quiet on a clean run", "[engine][detector]") {
  const NetworkCase net = testsupport::three_bus();
  const RunReport r = run(net, sample_params(4, net), std::nullopt, true, quick(400));
  CHECK(r.flag_rate() <= 0.05);
  CHECK(r.detector_failures == 0);
  for (const auto& row : r.detector_log) {
    CHECK(row.k > EngineConfig{}.window);
    if (row.gamma == 0) CHECK(row.source == DataSource::Received);
    if (row.gamma == 1) CHECK(row.source != DataSource::Received);
  }
}

TEST_CASE("invalid engine settings are rejected", "[engine]") {
  EngineConfig c;
  c.eta = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EngineConfig{};
  c.window = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EngineConfig{};
  c.upsilon = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
