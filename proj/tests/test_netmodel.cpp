#include <catch_amalgamated.hpp>

#include <algorithm>

#include "support.hpp"

using namespace byzgrid;
using testsupport::parse;

TEST_CASE("shipped 15-bus case loads as a 14-line tree", "[netmodel]") {
  const NetworkCase c = load_case(testsupport::case_path("ieee15.case"));
  CHECK(c.size() == 15);
  CHECK(c.lines.size() == 14);
  CHECK(c.root == 0);
  CHECK_FALSE(c.trading_pairs.empty());
}

TEST_CASE("shipped 85-bus case loads as an 84-line tree", "[netmodel]") {
  const NetworkCase c = load_case(testsupport::case_path("ieee85.case"));
  CHECK(c.size() == 85);
  CHECK(c.lines.size() == 84);
}

TEST_CASE("smallest tree is a valid case", "[netmodel]") {
  const NetworkCase c = testsupport::two_bus();
  CHECK(c.size() == 2);
  REQUIRE(c.lines.size() == 1);
  CHECK(c.lines[0].from_bus == 0);
  CHECK(c.lines[0].to_bus == 1);
}

TEST_CASE("malformed and invalid cases are rejected", "[netmodel]") {
  SECTION("cycle among buses 2, 3, 4") {
    CHECK_THROWS_AS(parse(R"([bus]
0 1 1 0 0 0 0 0
1 1 1 0 0 0 0 0
2 1 1 0 0 0 0 0
3 1 1 0 0 0 0 0
4 1 1 0 0 0 0 0
[line]
0 1 0.1 0.1 0 1 0 1
2 3 0.1 0.1 0 1 0 1
3 4 0.1 0.1 0 1 0 1
4 2 0.1 0.1 0 1 0 1
)"),
                    TopologyError);
  }
  SECTION("disconnected graph with the right line count") {
    CHECK_THROWS_AS(parse(R"([bus]
0 1 1 0 0 0 0 0
1 1 1 0 0 0 0 0
2 1 1 0 0 0 0 0
[line]
1 2 0.1 0.1 0 1 0 1
2 1 0.1 0.1 0 1 0 1
)"),
                    TopologyError);
  }
  SECTION("inverted voltage bounds") {
    CHECK_THROWS_AS(parse("[bus]\n0 1.2 0.8 0 0 0 0 0\n1 1 1 0 0 0 0 0\n[line]\n0 1 0.1 0.1 0 1 0 1\n"),
                    BoundsError);
  }
  SECTION("negative resistance") {
    CHECK_THROWS_AS(parse("[bus]\n0 1 1 0 0 0 0 0\n1 1 1 0 0 0 0 0\n[line]\n0 1 -0.1 0.1 0 1 0 1\n"),
                    BoundsError);
  }
  SECTION("bad number") {
    CHECK_THROWS_AS(parse("[bus]\n0 1 1 0 0 0 0 x\n1 1 1 0 0 0 0 0\n[line]\n0 1 0.1 0.1 0 1 0 1\n"), ParseError);
  }
  SECTION("wrong field count") {
    CHECK_THROWS_AS(parse("[bus]\n0 1 1 0 0 0 0\n1 1 1 0 0 0 0 0\n[line]\n0 1 0.1 0.1 0 1 0 1\n"), ParseError);
  }
  SECTION("unknown section") {
    CHECK_THROWS_AS(parse("[buses]\n"), ParseError);
  }
  SECTION("pair of two buyers") {
    CHECK_THROWS_AS(parse(R"([bus]
0 1 1 0 0 0 0 0
1 1 1 0 9 0 0 5
2 1 1 0 9 0 0 5
[line]
0 1 0.1 0.1 0 1 0 1
0 2 0.1 0.1 0 1 0 1
[trade]
1 2
)"),
                    RoleError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_case("/nonexistent/case.case"), ParseError);
  }
}

TEST_CASE("buses are renumbered breadth-first from the root", "[netmodel]") {
  // Chain 0 - 5 - 9 with 0 listed last and the lines written child to parent.
  const NetworkCase c = parse(R"([bus]
9 1 1 0 0 0 0 -3
5 1 1 0 0 0 0 0
0 1 1 0 0 0 0 3
[line]
9 5 0.3 0.4 0 1 0 1
5 0 0.1 0.2 0 1 0 1
[trade]
0 9
)");
  REQUIRE(c.size() == 3);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.buses[i].id == static_cast<int>(i));
  CHECK(c.buses[0].p_desired == 3);
  CHECK(c.buses[2].p_desired == -3);
  CHECK(c.lines[0] == LineRecord{0, 1, 0.1, 0.2, 0, 1, 0, 1});
  CHECK(c.lines[1] == LineRecord{1, 2, 0.3, 0.4, 0, 1, 0, 1});
  CHECK(c.trading_pairs == std::vector<std::pair<int, int>>{{0, 2}});
}

TEST_CASE("neighbour sets satisfy parent/child duality and partner symmetry", "[netmodel]") {
  for (const char* name : {"ieee15.case", "ieee85.case"}) {
    const NetworkCase c = load_case(testsupport::case_path(name));
    const auto sets = derive_sets(c);
    CHECK_FALSE(sets[c.root].parent.has_value());
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (static_cast<int>(i) != c.root) {
        REQUIRE(sets[i].parent.has_value());
        CHECK(c.line_to(static_cast<int>(i)).to_bus == static_cast<int>(i));
      }
      for (int j : sets[i].children) {
        REQUIRE(sets[j].parent.has_value());
        CHECK(*sets[j].parent == static_cast<int>(i));
      }
      if (sets[i].parent) {
        const auto& siblings = sets[*sets[i].parent].children;
        CHECK(std::count(siblings.begin(), siblings.end(), static_cast<int>(i)) == 1);
      }
      for (int s : sets[i].partners) {
        const auto& back = sets[s].partners;
        CHECK(std::count(back.begin(), back.end(), static_cast<int>(i)) == 1);
      }
    }
    for (std::size_t i = 0; i < c.size(); ++i)
      if (sets[i].children.empty()) CHECK(static_cast<int>(i) != c.root);
  }
}

TEST_CASE("a single trading pair is symmetric", "[netmodel]") {
  const NetworkCase c = parse(R"([bus]
0 1 1 0 0 0 0 0
1 1 1 0 0 0 0 0
2 1 1 0 0 0 0 0
3 1 1 0 9 0 0 4
4 1 1 0 0 0 0 0
5 1 1 0 0 0 0 0
6 1 1 0 0 0 0 0
7 1 1 -9 0 0 0 -4
[line]
0 1 0.1 0.1 0 1 0 1
1 2 0.1 0.1 0 1 0 1
2 3 0.1 0.1 0 1 0 1
3 4 0.1 0.1 0 1 0 1
4 5 0.1 0.1 0 1 0 1
5 6 0.1 0.1 0 1 0 1
6 7 0.1 0.1 0 1 0 1
[trade]
3 7
)");
  const auto sets = derive_sets(c);
  CHECK(sets[3].partners == std::vector<int>{7});
  CHECK(sets[7].partners == std::vector<int>{3});
  CHECK(sets[7].children.empty());
}

TEST_CASE("serialize then parse reproduces the case field for field", "[netmodel]") {
  for (const char* name : {"ieee15.case", "ieee85.case"}) {
    const NetworkCase c = load_case(testsupport::case_path(name));
    CHECK(testsupport::parse(serialize_case(c)) == c);
  }
  const NetworkCase odd = parse("[base]\n250\n[bus]\n0 1 1 0 0 0 0 0\n1 0.9 1.1 0 0.3 0 0 0.1\n[line]\n0 1 0.1 0.1 0 1 0 1\n");
  CHECK(odd.s_base_kva == 250.0);
  CHECK(parse(serialize_case(odd)) == odd);
}

TEST_CASE("line impedance squared is r^2 + x^2", "[netmodel]") {
  const LineRecord l{0, 1, 0.3, 0.4};
  CHECK(l.z2() == 0.3 * 0.3 + 0.4 * 0.4);
}
