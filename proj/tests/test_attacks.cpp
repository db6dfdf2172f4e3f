#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace byzgrid;
using Catch::Matchers::WithinAbs;

namespace {

SharedPacket flow_packet(double P, double Q, double l) {
  SharedPacket p;
  p.sender = 3;
  p.receiver = 1;
  p.stage = Stage::X;
  p.iteration = 40;
  p.payload = {{{3, var::P}, false, P}, {{3, var::Q}, false, Q}, {{3, var::l}, false, l}, {{3, var::l}, true, 0.7}};
  return p;
}

AttackScenario static_attack() {
  AttackScenario a;
  a.targets = {{3, 1}};
  return a;
}

const LineRecord kLine{1, 3, 0.01, 0.02, -1, 1, -1, 1};

}  // namespace

TEST_CASE("static injection shifts the flows along the line impedance", "[attacks]") {
  const SharedPacket p = flow_packet(5, 6, 10);
  const SharedPacket c = corrupt(p, static_attack(), 40, kLine);
  CHECK_THAT(c.find(var::l)->value, WithinAbs(210.0, 1e-12));
  CHECK_THAT(c.find(var::P)->value, WithinAbs(7.0, 1e-12));
  CHECK_THAT(c.find(var::Q)->value, WithinAbs(10.0, 1e-12));
  CHECK(c.find(var::l, true)->value == 0.7);
}

TEST_CASE("packets off schedule or off target pass unchanged", "[attacks]") {
  const SharedPacket p = flow_packet(5, 6, 10);
  const AttackScenario a = static_attack();
  for (int k : {0, 39, 41, 44, 46}) CHECK(corrupt(p, a, k, kLine).find(var::l)->value == 10.0);
  CHECK(corrupt(p, a, 45, kLine).find(var::l)->value == 210.0);
  SharedPacket other = p;
  other.receiver = 2;
  CHECK(corrupt(other, a, 40, kLine).find(var::l)->value == 10.0);
  SharedPacket y = p;
  y.stage = Stage::Y;
  CHECK(corrupt(y, a, 40, kLine).find(var::l)->value == 10.0);
}

TEST_CASE("targeted packet without flow fields is an error", "[attacks]") {
  SharedPacket p;
  p.sender = 3;
  p.receiver = 1;
  p.payload = {{{1, var::v}, false, 1.0}};
  CHECK_THROWS_AS(corrupt(p, static_attack(), 40, kLine), FieldError);
}

TEST_CASE("dynamic noise is bounded and reproducible", "[attacks]") {
  AttackScenario a = static_attack();
  a.kind = AttackKind::DynamicNoise;
  a.lo = 0;
  a.hi = 3;
  a.seed = 9;
  const SharedPacket p = flow_packet(5, 6, 10);
  bool varied = false;
  double first = -1;
  for (int k = 40; k < 400; k += 5) {
    const SharedPacket c1 = corrupt(p, a, k, kLine), c2 = corrupt(p, a, k, kLine);
    const double kappa = c1.find(var::l)->value - 10.0;
    CHECK((kappa >= 0.0 && kappa <= 3.0));
    CHECK(c1.find(var::l)->value == c2.find(var::l)->value);
    if (first < 0) first = kappa;
    varied |= kappa != first;
  }
  CHECK(varied);
  AttackScenario b = a;
  b.seed = 10;
  CHECK(injection_size(a, 40, 3, 1) != injection_size(b, 40, 3, 1));
}

TEST_CASE("correlation identity holds for every injection", "[attacks][property]") {
  AttackScenario a = static_attack();
  a.kind = AttackKind::DynamicNoise;
  for (int k = 40; k < 200; k += 5) {
    const SharedPacket p = flow_packet(0.1 * k, -0.2 * k, 0.05 * k);
    const SharedPacket c = corrupt(p, a, k, kLine);
    const double dl = c.find(var::l)->value - p.find(var::l)->value;
    CHECK_THAT((c.find(var::P)->value - p.find(var::P)->value) / kLine.r, WithinAbs(dl, 1e-9));
    CHECK_THAT((c.find(var::Q)->value - p.find(var::Q)->value) / kLine.x, WithinAbs(dl, 1e-9));
  }
}

TEST_CASE("stealthiness of correlated and naive injections", "[attacks]") {
  const SharedPacket p = flow_packet(5, 6, 10);
  CHECK(stealthiness_check(p, corrupt(p, static_attack(), 40, kLine), kLine));
  SharedPacket naive = p;
  naive.find(var::l)->value += 200;
  CHECK_FALSE(stealthiness_check(p, naive, kLine));
  CHECK(stealthiness_check(p, p, kLine));
}

TEST_CASE("scenario validation", "[attacks]") {
  AttackScenario a = static_attack();
  a.period = 0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = static_attack();
  a.lo = 4;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = static_attack();
  a.targets.clear();
  CHECK_THROWS_AS(a.validate(), ConfigError);
}
