#pragma once

// Per-prosumer market data: cost parameters, variable layout, local
// constraint set and the coupling rows shared with neighbours.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"
#include "byzgrid/netmodel.hpp"

namespace byzgrid {

enum class AgentRole { Buyer, Seller, Passive };

inline AgentRole role_of(double p_desired) {
  if (p_desired > 0) return AgentRole::Buyer;
  if (p_desired < 0) return AgentRole::Seller;
  return AgentRole::Passive;
}

inline const char* to_string(AgentRole r) {
  switch (r) {
    case AgentRole::Buyer: return "buyer";
    case AgentRole::Seller: return "seller";
    default: return "passive";
  }
}

enum class UtilityForm { Aggregate, PerPair };

struct CostParams {
  double alpha = 0.05;    // cents / kWh^2
  double beta = 1.0;      // cents / kWh
  double epsilon = 3.0;   // cents / kWh^2
  double omega_b = 10.0;  // cents / kWh
  double omega_s = 5.0;   // cents / kWh
  double p_desired = 0.0; // kW
};

struct PriceSettings {
  double omega_b = 10.0;
  double omega_s = 5.0;
};

/// Index of each variable in x_i = (v, p, q, P, Q, l, e_{i,s}...).
namespace var {
inline constexpr int v = 0, p = 1, q = 2, P = 3, Q = 4, l = 5, first_trade = 6;
inline const char* name(int k) {
  static const char* names[] = {"v", "p", "q", "P", "Q", "l"};
  return k < first_trade ? names[k] : "e";
}
}  // namespace var

/// Reference to variable `index` of agent `owner`'s local vector.
struct VarRef {
  int owner = 0;
  int index = 0;
  bool operator==(const VarRef&) const = default;
  auto operator<=>(const VarRef&) const = default;
};

struct HalfspaceRow {
  Eigen::VectorXd a;
  double b = 0;
};

/// Indices of (P, Q, v, l) for the rotated cone P^2 + Q^2 <= v l.
struct FlowConeIndex {
  int P = var::P, Q = var::Q, v = var::v, l = var::l;
};

struct AgentProblem {
  int id = 0;
  AgentRole role = AgentRole::Passive;
  CostParams cost;
  UtilityForm utility = UtilityForm::Aggregate;
  std::optional<int> parent;
  std::vector<int> children;
  std::vector<int> partners;  // x[first_trade + k] trades with partners[k]

  Eigen::VectorXd lower, upper;
  std::vector<HalfspaceRow> halfspaces;
  std::optional<FlowConeIndex> soc;

  /// Variables the agent keeps a copy of: its own block first, then the
  /// parent's v, the (P, Q, l) of each child and e_{s,i} of each partner.
  std::vector<VarRef> y_layout;
  Eigen::MatrixXd coupling;  // rows over y_layout
  double delta = 0;
  double s_base = 1000.0;  // kVA per unit power

  int dim() const { return var::first_trade + static_cast<int>(partners.size()); }
  int trade_index(int partner) const {
    auto it = std::find(partners.begin(), partners.end(), partner);
    if (it == partners.end()) throw LayoutError("not a trading partner");
    return var::first_trade + static_cast<int>(it - partners.begin());
  }
  int y_index(VarRef r) const {
    auto it = std::find(y_layout.begin(), y_layout.end(), r);
    if (it == y_layout.end()) throw LayoutError("variable not held by agent");
    return static_cast<int>(it - y_layout.begin());
  }
};

/// f(x) = 1/2 x'Hx + g'x + c, exact on the agent's feasible set.
struct QuadraticCost {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double c = 0;
};

struct MarketOutcome {
  double total_traded = 0;         // Omega, kWh
  double substation_injection = 0; // p_0, kWh
  double objective = 0;            // cents
  std::map<std::pair<int, int>, double> per_pair_trades;  // (buyer, seller) -> e_{buyer,seller}
  double max_reciprocity_gap = 0;  // max |e_ij + e_ji|
};

/// Draws alpha, beta, epsilon per agent from the ranges of the simulation
/// study. Passive agents draw from the buyer ranges so the stream of draws does
/// not depend on how roles are assigned to later agents.
inline std::vector<CostParams> sample_params(std::uint64_t seed, std::span<const AgentRole> roles,
                                             const PriceSettings& prices = {}) {
  std::mt19937_64 rng(seed);
  using U = std::uniform_real_distribution<double>;
  std::vector<CostParams> out;
  out.reserve(roles.size());
  for (AgentRole r : roles) {
    CostParams c;
    if (r == AgentRole::Seller) {
      c.alpha = U(0.02, 0.1)(rng);
      c.beta = U(0.1, 0.8)(rng);
    } else {
      c.alpha = U(0.01, 0.1)(rng);
      c.beta = U(1.0, 3.0)(rng);
    }
    c.epsilon = U(2.5, 3.5)(rng);
    c.omega_b = prices.omega_b;
    c.omega_s = prices.omega_s;
    out.push_back(c);
  }
  return out;
}

/// Roles from the case and desired powers copied into the sampled parameters.
inline std::vector<CostParams> sample_params(std::uint64_t seed, const NetworkCase& c,
                                             const PriceSettings& prices = {}) {
  std::vector<AgentRole> roles;
  for (const auto& b : c.buses) roles.push_back(role_of(b.p_desired));
  auto params = sample_params(seed, roles, prices);
  for (std::size_t i = 0; i < params.size(); ++i) params[i].p_desired = c.buses[i].p_desired;
  return params;
}

/// Reads `id alpha beta epsilon omega_b omega_s` rows; `#` starts a comment.
inline std::vector<CostParams> load_params_file(const std::string& path, const NetworkCase& c) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open parameter file " + path);
  std::vector<std::optional<CostParams>> rows(c.size());
  std::string raw;
  int line_no = 0;
  while (std::getline(f, raw)) {
    ++line_no;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 6)
      throw ParseError("parameter file line " + std::to_string(line_no) + ": expected 6 fields");
    const int id = detail::parse_id(tok[0], line_no);
    if (id >= static_cast<int>(c.size()))
      throw ParseError("parameter file line " + std::to_string(line_no) + ": unknown bus");
    CostParams p;
    p.alpha = detail::parse_number(tok[1], line_no);
    p.beta = detail::parse_number(tok[2], line_no);
    p.epsilon = detail::parse_number(tok[3], line_no);
    p.omega_b = detail::parse_number(tok[4], line_no);
    p.omega_s = detail::parse_number(tok[5], line_no);
    p.p_desired = c.buses[id].p_desired;
    rows[id] = p;
  }
  std::vector<CostParams> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i]) throw ParseError("parameter file misses bus " + std::to_string(i));
    out.push_back(*rows[i]);
  }
  return out;
}

inline double strong_convexity_modulus(const CostParams& c, AgentRole role) {
  if (role == AgentRole::Passive) return 0.0;
  return 2.0 * std::min(c.alpha, c.epsilon);
}

/// Cost in per-unit variables, divided by s_base^2 so the quadratic
/// coefficients keep their kW values: f_pu(x) = f_kW(s_base x) / s_base^2.
inline QuadraticCost quadratic_cost(const AgentProblem& a) {
  const int n = a.dim();
  QuadraticCost f{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n), 0.0};
  if (a.role == AgentRole::Passive) return f;
  const auto& c = a.cost;
  const double S = a.s_base;
  const double pd = c.p_desired / S;
  const int m = static_cast<int>(a.partners.size());
  auto e = Eigen::seqN(var::first_trade, m);
  if (a.utility == UtilityForm::Aggregate)
    f.H(e, e).setConstant(2.0 * c.alpha);
  else
    f.H(e, e).diagonal().setConstant(2.0 * c.alpha);
  f.H(var::p, var::p) = 2.0 * c.epsilon;
  f.g(var::p) = -2.0 * c.epsilon * pd;
  f.c = c.epsilon * pd * pd;
  // Grid term, linear on the feasible set.
  const double w = a.role == AgentRole::Buyer ? c.omega_b : c.omega_s;
  f.g(e).setConstant((c.beta + w) / S);
  f.g(var::p) -= w / S;
  return f;
}

/// Operating cost in cents of a per-unit local vector; the two grid terms are
/// evaluated with their positive parts so the value is meaningful off the
/// feasible set too.
inline double cost_eval(const AgentProblem& a, const Eigen::VectorXd& x) {
  if (x.size() != a.dim()) throw LayoutError("x does not match the agent layout");
  if (a.role == AgentRole::Passive) return 0.0;
  const auto& c = a.cost;
  const auto e = a.s_base * x.segment(var::first_trade, a.partners.size());
  const double sum_e = e.sum();
  const double p = a.s_base * x(var::p);
  const double quad = a.utility == UtilityForm::Aggregate ? sum_e * sum_e : e.squaredNorm();
  return c.alpha * quad + c.beta * sum_e + c.epsilon * (p - c.p_desired) * (p - c.p_desired) +
         c.omega_b * std::max(sum_e - p, 0.0) - c.omega_s * std::max(p - sum_e, 0.0);
}

/// Builds every agent's local problem.
inline std::vector<AgentProblem> assemble(const NetworkCase& net, std::span<const CostParams> params,
                                          UtilityForm utility = UtilityForm::Aggregate) {
  if (params.size() != net.size()) throw LayoutError("one parameter set per bus required");
  const auto sets = derive_sets(net);
  const double inf = std::numeric_limits<double>::infinity();
  const double S = net.s_base_kva;
  std::vector<AgentProblem> out(net.size());

  for (std::size_t i = 0; i < net.size(); ++i) {
    AgentProblem& a = out[i];
    const BusRecord& b = net.buses[i];
    a.id = static_cast<int>(i);
    a.cost = params[i];
    a.cost.p_desired = b.p_desired;
    a.role = role_of(b.p_desired);
    a.utility = utility;
    a.parent = sets[i].parent;
    a.children = sets[i].children;
    a.partners = sets[i].partners;
    for (int s : a.partners) {
      if (role_of(net.buses[s].p_desired) == a.role || a.role == AgentRole::Passive)
        throw RoleError("trading pair " + std::to_string(i) + "-" + std::to_string(s) +
                        " must join a buyer and a seller");
    }
    a.delta = strong_convexity_modulus(a.cost, a.role);

    const int n = a.dim();
    a.lower.resize(n);
    a.upper.resize(n);
    a.s_base = S;
    a.lower(var::v) = b.v_min;
    a.upper(var::v) = b.v_max;
    a.lower(var::p) = b.p_min / S;
    a.upper(var::p) = b.p_max / S;
    a.lower(var::q) = b.q_min / S;
    a.upper(var::q) = b.q_max / S;
    if (a.parent) {
      const LineRecord& l = net.line_to(a.id);
      a.lower(var::P) = l.P_min / S;
      a.upper(var::P) = l.P_max / S;
      a.lower(var::Q) = l.Q_min / S;
      a.upper(var::Q) = l.Q_max / S;
      a.lower(var::l) = 0.0;
      a.upper(var::l) = inf;
      a.soc = FlowConeIndex{};
    } else {
      for (int k : {var::P, var::Q, var::l}) a.lower(k) = a.upper(k) = 0.0;
    }
    for (int k = var::first_trade; k < n; ++k) {
      a.lower(k) = a.role == AgentRole::Buyer ? 0.0 : -inf;
      a.upper(k) = a.role == AgentRole::Buyer ? inf : 0.0;
    }
    if (a.role != AgentRole::Passive) {
      HalfspaceRow h{Eigen::VectorXd::Zero(n), 0.0};
      const double sign = a.role == AgentRole::Buyer ? 1.0 : -1.0;
      h.a(var::p) = sign;
      h.a.tail(n - var::first_trade).setConstant(-sign);
      a.halfspaces.push_back(h);
    }

    // Copies: own block, parent's v, children's flows, partners' trades.
    for (int k = 0; k < n; ++k) a.y_layout.push_back({a.id, k});
    if (a.parent) a.y_layout.push_back({*a.parent, var::v});
    for (int j : a.children)
      for (int k : {var::P, var::Q, var::l}) a.y_layout.push_back({j, k});
    for (int s : a.partners) {
      const auto& ps = sets[s].partners;
      const int k = var::first_trade + static_cast<int>(
                                           std::find(ps.begin(), ps.end(), a.id) - ps.begin());
      a.y_layout.push_back({s, k});
    }
  }

  // Coupling rows in y coordinates.
  for (auto& a : out) {
    std::vector<Eigen::VectorXd> rows;
    const int ny = static_cast<int>(a.y_layout.size());
    auto at = [&](int owner, int k) { return a.y_index({owner, k}); };
    for (int s : a.partners) {  // e_{i,s} + e_{s,i} = 0
      Eigen::VectorXd r = Eigen::VectorXd::Zero(ny);
      r(at(a.id, a.trade_index(s))) = 1.0;
      r(at(s, out[s].trade_index(a.id))) = 1.0;
      rows.push_back(r);
    }
    if (a.parent) {  // voltage drop along the incoming line
      const LineRecord& l = net.line_to(a.id);
      Eigen::VectorXd r = Eigen::VectorXd::Zero(ny);
      r(at(*a.parent, var::v)) = 1.0;
      r(at(a.id, var::v)) = -1.0;
      r(at(a.id, var::P)) = 2.0 * l.r;
      r(at(a.id, var::Q)) = 2.0 * l.x;
      r(at(a.id, var::l)) = -l.z2();
      rows.push_back(r);
    }
    for (int flow : {var::P, var::Q}) {  // active / reactive balance
      Eigen::VectorXd r = Eigen::VectorXd::Zero(ny);
      for (int j : a.children) {
        const LineRecord& l = net.line_to(j);
        r(at(j, flow)) = 1.0;
        r(at(j, var::l)) = -(flow == var::P ? l.r : l.x);
      }
      r(at(a.id, flow)) = -1.0;
      r(at(a.id, flow == var::P ? var::p : var::q)) = 1.0;
      rows.push_back(r);
    }
    a.coupling.resize(static_cast<int>(rows.size()), ny);
    for (int k = 0; k < static_cast<int>(rows.size()); ++k) a.coupling.row(k) = rows[k].transpose();
  }
  return out;
}

/// Market summary in kW and cents from the agents' per-unit local vectors.
inline MarketOutcome outcome(std::span<const Eigen::VectorXd> xs, std::span<const AgentProblem> problems,
                             const NetworkCase& net) {
  MarketOutcome m;
  const double S = net.s_base_kva;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& a = problems[i];
    m.objective += cost_eval(a, xs[i]);
    if (a.role != AgentRole::Buyer) continue;
    for (int s : a.partners) {
      const double e = S * xs[i](a.trade_index(s));
      m.total_traded += e;
      m.per_pair_trades[{a.id, s}] = e;
      m.max_reciprocity_gap =
          std::max(m.max_reciprocity_gap, std::abs(e + S * xs[s](problems[s].trade_index(a.id))));
    }
  }
  m.substation_injection = S * xs[net.root](var::p);
  return m;
}

}  // namespace byzgrid
