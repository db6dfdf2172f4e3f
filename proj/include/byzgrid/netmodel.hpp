#pragma once

// Radial distribution network cases: records, case-file parsing, validation
// and neighbour-set derivation.
//
// Units. Case files give powers in kW/kVAr, r and x per unit on the case
// base `s_base_kva` and voltage bounds as squared per-unit magnitudes. The
// optimisation runs entirely in per unit on that base:
//   v_parent - v_i + 2 (r P_i + x Q_i) - (r^2 + x^2) l_i = 0,
//   P_i^2 + Q_i^2 <= v_i l_i,   line losses = r l_i.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "byzgrid/errors.hpp"

namespace byzgrid {

struct BusRecord {
  int id = 0;
  double v_min = 0.81, v_max = 1.21;  // p.u.^2
  double p_min = 0, p_max = 0;        // kW
  double q_min = 0, q_max = 0;        // kVAr
  double p_desired = 0;               // kW

  bool operator==(const BusRecord&) const = default;
};

/// A line is keyed by its child (end) bus `to_bus`.
struct LineRecord {
  int from_bus = 0, to_bus = 0;
  double r = 0, x = 0;
  double P_min = 0, P_max = 0, Q_min = 0, Q_max = 0;

  double z2() const { return r * r + x * x; }
  bool operator==(const LineRecord&) const = default;
};

struct NetworkCase {
  std::vector<BusRecord> buses;  // breadth-first from the root, buses[i].id == i
  std::vector<LineRecord> lines; // breadth-first by child bus
  int root = 0;
  std::vector<std::pair<int, int>> trading_pairs;  // (buyer, seller)
  double s_base_kva = 1000.0;

  std::size_t size() const { return buses.size(); }

  /// Line whose child bus is `bus`. Throws for the root.
  const LineRecord& line_to(int bus) const {
    for (const auto& l : lines)
      if (l.to_bus == bus) return l;
    throw TopologyError("bus " + std::to_string(bus) + " has no incoming line");
  }

  bool operator==(const NetworkCase&) const = default;
};

struct NeighborSets {
  std::optional<int> parent;
  std::vector<int> children;  // ascending
  std::vector<int> partners;  // ascending
};

namespace detail {

inline void check_bus_bounds(const BusRecord& b) {
  auto bad = [&](const char* what) {
    throw BoundsError("bus " + std::to_string(b.id) + ": " + what + " min > max");
  };
  if (b.v_min > b.v_max) bad("v");
  if (b.p_min > b.p_max) bad("p");
  if (b.q_min > b.q_max) bad("q");
}

inline void check_line_bounds(const LineRecord& l) {
  const std::string tag = "line " + std::to_string(l.from_bus) + "-" + std::to_string(l.to_bus);
  if (l.r < 0 || l.x < 0) throw BoundsError(tag + ": negative impedance");
  if (l.P_min > l.P_max) throw BoundsError(tag + ": P min > max");
  if (l.Q_min > l.Q_max) throw BoundsError(tag + ": Q min > max");
}

inline double parse_number(const std::string& tok, int line_no) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
  if (used != tok.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  return v;
}

inline int parse_id(const std::string& tok, int line_no) {
  const double v = parse_number(tok, line_no);
  if (v < 0 || v != std::floor(v) || v > std::numeric_limits<int>::max())
    throw ParseError("line " + std::to_string(line_no) + ": bad bus id '" + tok + "'");
  return static_cast<int>(v);
}

}  // namespace detail

/// Validates a case and renumbers it breadth-first from bus id 0.
/// Lines are re-oriented parent -> child. Children are visited in ascending
/// original id order so the numbering is deterministic.
inline NetworkCase normalize_case(const NetworkCase& in) {
  const std::size_t n = in.buses.size();
  if (n == 0) throw TopologyError("case has no buses");
  std::map<int, std::size_t> pos;
  for (std::size_t k = 0; k < n; ++k) {
    detail::check_bus_bounds(in.buses[k]);
    if (!pos.emplace(in.buses[k].id, k).second)
      throw ParseError("duplicate bus id " + std::to_string(in.buses[k].id));
  }
  if (!pos.count(in.root)) throw TopologyError("root bus missing");
  if (in.lines.size() != n - 1)
    throw TopologyError("a radial case needs |lines| = |buses| - 1");

  std::vector<std::vector<std::pair<int, std::size_t>>> adj(n);  // (neighbour id, line index)
  for (std::size_t k = 0; k < in.lines.size(); ++k) {
    const auto& l = in.lines[k];
    detail::check_line_bounds(l);
    if (!pos.count(l.from_bus) || !pos.count(l.to_bus))
      throw TopologyError("line references unknown bus");
    if (l.from_bus == l.to_bus) throw TopologyError("self loop");
    adj[pos[l.from_bus]].push_back({l.to_bus, k});
    adj[pos[l.to_bus]].push_back({l.from_bus, k});
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());

  std::vector<int> order;            // original ids in BFS order
  std::map<int, int> new_id;         // original id -> BFS position
  std::vector<std::size_t> via(n, SIZE_MAX);
  std::queue<int> frontier;
  frontier.push(in.root);
  new_id[in.root] = 0;
  order.push_back(in.root);
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (auto [w, li] : adj[pos[u]]) {
      if (new_id.count(w)) continue;
      new_id[w] = static_cast<int>(order.size());
      order.push_back(w);
      via[pos[w]] = li;
      frontier.push(w);
    }
  }
  if (order.size() != n) throw TopologyError("network is not a connected tree");

  NetworkCase out;
  out.root = 0;
  out.s_base_kva = in.s_base_kva;
  for (int orig : order) {
    BusRecord b = in.buses[pos[orig]];
    b.id = new_id[orig];
    out.buses.push_back(b);
  }
  for (std::size_t k = 1; k < order.size(); ++k) {
    const int orig = order[k];
    LineRecord l = in.lines[via[pos[orig]]];
    const int other = (l.to_bus == orig) ? l.from_bus : l.to_bus;
    l.from_bus = new_id[other];
    l.to_bus = new_id[orig];
    out.lines.push_back(l);
  }
  for (auto [b, s] : in.trading_pairs) {
    if (!pos.count(b) || !pos.count(s))
      throw ParseError("trading pair references unknown bus");
    const int nb = new_id[b], ns = new_id[s];
    if (!(out.buses[nb].p_desired > 0) || !(out.buses[ns].p_desired < 0))
      throw RoleError("trading pair (" + std::to_string(b) + "," + std::to_string(s) +
                      ") must join a buyer and a seller");
    out.trading_pairs.push_back({nb, ns});
  }
  std::sort(out.trading_pairs.begin(), out.trading_pairs.end());
  if (std::adjacent_find(out.trading_pairs.begin(), out.trading_pairs.end()) !=
      out.trading_pairs.end())
    throw ParseError("duplicate trading pair");
  return out;
}

/// Parses the three-section case format. An optional `[base]` section holds
/// a single value, the power base in kVA (default 1000).
inline NetworkCase parse_case(std::istream& is) {
  NetworkCase c;
  std::string section;
  std::string raw;
  int line_no = 0;
  bool saw_bus = false, saw_line = false;
  while (std::getline(is, raw)) {
    ++line_no;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok[0].front() == '[') {
      if (tok.size() != 1 || tok[0].back() != ']')
        throw ParseError("line " + std::to_string(line_no) + ": bad section header");
      section = tok[0].substr(1, tok[0].size() - 2);
      if (section != "bus" && section != "line" && section != "trade" && section != "base")
        throw ParseError("line " + std::to_string(line_no) + ": unknown section " + section);
      saw_bus |= section == "bus";
      saw_line |= section == "line";
      continue;
    }
    auto expect = [&](std::size_t count) {
      if (tok.size() != count)
        throw ParseError("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(count) + " fields in [" + section + "]");
    };
    auto num = [&](std::size_t k) { return detail::parse_number(tok[k], line_no); };
    if (section == "bus") {
      expect(8);
      BusRecord b;
      b.id = detail::parse_id(tok[0], line_no);
      b.v_min = num(1); b.v_max = num(2);
      b.p_min = num(3); b.p_max = num(4);
      b.q_min = num(5); b.q_max = num(6);
      b.p_desired = num(7);
      c.buses.push_back(b);
    } else if (section == "line") {
      expect(8);
      LineRecord l;
      l.from_bus = detail::parse_id(tok[0], line_no);
      l.to_bus = detail::parse_id(tok[1], line_no);
      l.r = num(2); l.x = num(3);
      l.P_min = num(4); l.P_max = num(5);
      l.Q_min = num(6); l.Q_max = num(7);
      c.lines.push_back(l);
    } else if (section == "trade") {
      expect(2);
      c.trading_pairs.push_back({detail::parse_id(tok[0], line_no), detail::parse_id(tok[1], line_no)});
    } else if (section == "base") {
      expect(1);
      c.s_base_kva = num(0);
      if (!(c.s_base_kva > 0)) throw ParseError("base power must be positive");
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": data outside a section");
    }
  }
  if (!saw_bus || !saw_line) throw ParseError("case needs [bus] and [line] sections");
  c.root = 0;
  return normalize_case(c);
}

inline NetworkCase load_case(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open case file " + path);
  return parse_case(f);
}

/// Writes a case in the text format; `parse_case(serialize_case(c)) == c`.
inline std::string serialize_case(const NetworkCase& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  if (c.s_base_kva != 1000.0) os << "[base]\n" << c.s_base_kva << "\n\n";
  os << "[bus]\n# id v_min v_max p_min p_max q_min q_max p_desired\n";
  for (const auto& b : c.buses)
    os << b.id << ' ' << b.v_min << ' ' << b.v_max << ' ' << b.p_min << ' ' << b.p_max << ' '
       << b.q_min << ' ' << b.q_max << ' ' << b.p_desired << '\n';
  os << "\n[line]\n# from to r x P_min P_max Q_min Q_max\n";
  for (const auto& l : c.lines)
    os << l.from_bus << ' ' << l.to_bus << ' ' << l.r << ' ' << l.x << ' ' << l.P_min << ' '
       << l.P_max << ' ' << l.Q_min << ' ' << l.Q_max << '\n';
  os << "\n[trade]\n# buyer seller\n";
  for (auto [b, s] : c.trading_pairs) os << b << ' ' << s << '\n';
  return os.str();
}

/// Parent, children and trading partners of every bus.
inline std::vector<NeighborSets> derive_sets(const NetworkCase& c) {
  std::vector<NeighborSets> sets(c.size());
  for (const auto& l : c.lines) {
    sets[l.to_bus].parent = l.from_bus;
    sets[l.from_bus].children.push_back(l.to_bus);
  }
  for (auto [b, s] : c.trading_pairs) {
    sets[b].partners.push_back(s);
    sets[s].partners.push_back(b);
  }
  for (auto& s : sets) {
    std::sort(s.children.begin(), s.children.end());
    std::sort(s.partners.begin(), s.partners.end());
  }
  return sets;
}

}  // namespace byzgrid
