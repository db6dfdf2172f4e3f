#pragma once

// Synchronous consensus ADMM over the prosumer network. Every iteration runs
// x-update, x-stage sharing, (attack), (detection), y-update, y-stage sharing,
// (attack), (detection), dual update and residual bookkeeping. Agents only
// learn about each other through the packets of the message bus.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/attacks.hpp"
#include "byzgrid/detector.hpp"
#include "byzgrid/errors.hpp"
#include "byzgrid/market.hpp"
#include "byzgrid/netmodel.hpp"
#include "byzgrid/protocol.hpp"
#include "byzgrid/x_update.hpp"
#include "byzgrid/y_update.hpp"

namespace byzgrid {

struct EngineConfig {
  double eta = 1.0;
  double varpi1 = 1e-4, varpi2 = 1e-4;
  int k_max = 500;
  XSolveSettings inner;
  UtilityForm utility = UtilityForm::Aggregate;

  DetectorHyper hyper;
  int window = 30;      // L, also the warm-up length
  double phi = 0.1;
  double lambda = 1.0;
  bool detect_x_stage = true;
  bool detect_y_stage = true;
  double upsilon = 1.0;

  void validate() const {
    if (!(eta > 0)) throw ConfigError("eta must be positive");
    if (!(varpi1 > 0) || !(varpi2 > 0)) throw ConfigError("stopping tolerances must be positive");
    if (k_max < 1) throw ConfigError("k_max must be at least 1");
    if (!(inner.tol > 0) || inner.max_iter < 1) throw ConfigError("invalid inner solver settings");
    if (hyper.p < 0 || hyper.d < 0 || hyper.q < 0 || hyper.H < 1 || hyper.R < 1 || hyper.tau < 1)
      throw ConfigError("detector orders must be non-negative and H, R, tau positive");
    if (window < 2 || window < hyper.tau) throw ConfigError("window must cover the embedding length");
    if (window - hyper.tau + 1 < hyper.p + hyper.d + hyper.q + 1)
      throw ConfigError("window too short for the ARIMA order");
    if (!(xi_ok())) throw ConfigError("xi must be positive");
    if (phi < 0 || lambda < 0) throw ConfigError("phi and lambda must be non-negative");
    if (upsilon < 0 || upsilon > 1) throw ConfigError("upsilon must lie in [0, 1]");
  }

 private:
  bool xi_ok() const { return hyper.xi > 0; }
};

struct Residuals {
  double primal = 0;
  double dual = 0;
};

struct TraceRow {
  int k = 0;
  double gamma_p = 0, gamma_d = 0, omega = 0, p0 = 0;
};

struct DetectorLogRow {
  int k = 0;
  int agent = 0;
  Stage stage = Stage::X;
  int gamma = 0;
  double pred_error = 0;
  DataSource source = DataSource::Received;
};

struct AgentTheorem {
  int agent = 0;
  double eta = 0, lambda = 0, delta = 0, q_inv_norm = 0, upsilon = 0;
  double condition1 = 0, condition2 = 0;
  bool satisfied1 = false, satisfied2 = false;
};

struct TheoremReport {
  std::vector<AgentTheorem> agents;
  bool all_satisfied() const {
    return std::all_of(agents.begin(), agents.end(), [](const AgentTheorem& a) { return a.satisfied1 && a.satisfied2; });
  }
};

/// Sufficient conditions of the convergence theorem for one agent:
///   c1 = U eta / 2 - 2 ||Q^{-1}||^2 lambda^2 / eta,
///   c2 = U (delta + eta) / 2 - 2 eta lambda^2, satisfied when > 0.
inline AgentTheorem check_theorem1(double eta, double lambda, double delta, double q_inv_norm, double upsilon) {
  AgentTheorem t;
  t.eta = eta;
  t.lambda = lambda;
  t.delta = delta;
  t.q_inv_norm = q_inv_norm;
  t.upsilon = upsilon;
  t.condition1 = upsilon * eta / 2.0 - 2.0 * q_inv_norm * q_inv_norm * lambda * lambda / eta;
  t.condition2 = upsilon * (delta + eta) / 2.0 - 2.0 * eta * lambda * lambda;
  t.satisfied1 = t.condition1 > 0;
  t.satisfied2 = t.condition2 > 0;
  return t;
}

inline TheoremReport theorem_report(std::span<const AgentProblem> problems, const EngineConfig& cfg) {
  TheoremReport r;
  for (const auto& a : problems) {
    const YUpdateKernel k = precompute_y_kernel(a.coupling, cfg.eta);
    AgentTheorem t = check_theorem1(cfg.eta, cfg.lambda, a.delta, k.q_inv_norm, cfg.upsilon);
    t.agent = a.id;
    r.agents.push_back(t);
  }
  return r;
}

/// Starting point with every coupling row satisfied: no trades, traders at the
/// point of their box closest to zero net power, and the resulting loads
/// carried by a backward/forward DistFlow sweep on a tight cone.
inline std::vector<Eigen::VectorXd> flat_start(const NetworkCase& net, std::span<const AgentProblem> problems,
                                               int sweeps = 20) {
  const std::size_t n = problems.size();
  std::vector<Eigen::VectorXd> x(n);
  for (const auto& a : problems) {
    x[a.id] = Eigen::VectorXd::Zero(a.dim());
    x[a.id](var::v) = std::clamp(1.0, a.lower(var::v), a.upper(var::v));
    for (int k : {var::p, var::q}) x[a.id](k) = std::clamp(0.0, a.lower(k), a.upper(k));
  }
  const int root = net.root;
  for (int it = 0; it < sweeps; ++it) {
    // Buses are breadth-first ordered, so reverse order visits children first.
    for (int i = static_cast<int>(n) - 1; i >= 0; --i) {
      if (i == root) continue;
      auto& xi = x[i];
      double P = xi(var::p), Q = xi(var::q);
      for (int j : problems[i].children) {
        const LineRecord& l = net.line_to(j);
        P += x[j](var::P) - l.r * x[j](var::l);
        Q += x[j](var::Q) - l.x * x[j](var::l);
      }
      xi(var::P) = P;
      xi(var::Q) = Q;
    }
    double p0 = 0, q0 = 0;
    for (int j : problems[root].children) {
      const LineRecord& l = net.line_to(j);
      p0 -= x[j](var::P) - l.r * x[j](var::l);
      q0 -= x[j](var::Q) - l.x * x[j](var::l);
    }
    x[root](var::p) = p0;
    x[root](var::q) = q0;
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<int>(i) == root) continue;
      const LineRecord& l = net.line_to(static_cast<int>(i));
      auto& xi = x[i];
      const double vp = x[l.from_bus](var::v);
      xi(var::l) = (xi(var::P) * xi(var::P) + xi(var::Q) * xi(var::Q)) / vp;
      xi(var::v) = vp - 2.0 * (l.r * xi(var::P) + l.x * xi(var::Q)) + l.z2() * xi(var::l);
    }
  }
  return x;
}

/// Who holds which copy of whose variable.
struct CopyMap {
  struct Copy {
    int owner, index, holder, pos;
    EdgeKind edge;
  };
  std::vector<Copy> copies;
  std::vector<std::vector<int>> by_owner;
  std::vector<std::vector<int>> by_holder;  // indexed by y position
  /// Copies grouped per (owner, holder, edge kind), one packet each per stage.
  std::vector<std::vector<int>> groups;

  explicit CopyMap(std::span<const AgentProblem> problems) {
    by_owner.resize(problems.size());
    by_holder.resize(problems.size());
    std::map<std::tuple<int, int, int>, int> group_of;
    for (const auto& h : problems) {
      by_holder[h.id].resize(h.y_layout.size());
      for (int pos = 0; pos < static_cast<int>(h.y_layout.size()); ++pos) {
        const VarRef r = h.y_layout[pos];
        EdgeKind e = EdgeKind::Partner;
        if (r.index < var::first_trade) e = (r.index == var::v) ? EdgeKind::ParentToChild : EdgeKind::ChildToParent;
        const int id = static_cast<int>(copies.size());
        copies.push_back({r.owner, r.index, h.id, pos, e});
        by_owner[r.owner].push_back(id);
        by_holder[h.id][pos] = id;
        const auto key = std::make_tuple(r.owner, h.id, r.owner == h.id ? -1 : static_cast<int>(e));
        auto [it, fresh] = group_of.emplace(key, static_cast<int>(groups.size()));
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(id);
      }
    }
  }
};

struct AgentState {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // copies held, in y_layout order
  Eigen::VectorXd z;  // splitting warm start
};

/// Residuals of one iteration. gamma_p sums ||x_owner - y_holder|| and gamma_d
/// sums eta ||y_holder(k+1) - y_holder(k)|| over (owner, neighbouring holder)
/// groups; an agent's copy of its own block is not counted.
inline Residuals residuals(const CopyMap& map, std::span<const AgentState> states,
                           std::span<const Eigen::VectorXd> previous_y, double eta) {
  Residuals r;
  std::map<std::pair<int, int>, std::pair<double, double>> acc;
  for (const auto& c : map.copies) {
    if (c.owner == c.holder) continue;
    const double pd = states[c.owner].x(c.index) - states[c.holder].y(c.pos);
    const double dd = states[c.holder].y(c.pos) - previous_y[c.holder](c.pos);
    auto& a = acc[{c.owner, c.holder}];
    a.first += pd * pd;
    a.second += dd * dd;
  }
  for (const auto& [key, v] : acc) {
    r.primal += std::sqrt(v.first);
    r.dual += eta * std::sqrt(v.second);
  }
  return r;
}

struct RunReport {
  MarketOutcome outcome;
  int iterations = 0;
  bool converged = false;
  std::vector<TraceRow> trace;
  std::vector<DetectorLogRow> detector_log;
  std::vector<int> detection_counts;  // flagged packets per agent
  std::vector<double> mae_trace;      // mean absolute one-step error per iteration (NaN when idle)
  TheoremReport theorem;
  int subproblem_failures = 0;
  int detector_failures = 0;
  std::vector<Eigen::VectorXd> x;

  /// Fraction of post-warm-up detector decisions that flagged.
  double flag_rate() const {
    if (detector_log.empty()) return 0.0;
    std::size_t f = 0;
    for (const auto& r : detector_log) f += r.gamma;
    return static_cast<double>(f) / static_cast<double>(detector_log.size());
  }
};

class Simulation {
 public:
  Simulation(const NetworkCase& net, std::span<const CostParams> params, const EngineConfig& cfg,
             std::optional<AttackScenario> attack = std::nullopt, bool detector_on = false)
      : net_(net), cfg_(cfg), attack_(std::move(attack)), detector_on_(detector_on),
        problems_(assemble(net, params, cfg.utility)), map_(problems_) {
    cfg_.validate();
    if (attack_) attack_->validate();
    const std::size_t n = problems_.size();
    states_.resize(n);
    mu_.assign(map_.copies.size(), 0.0);
    view_.assign(map_.copies.size(), 0.0);
    const std::vector<Eigen::VectorXd> x0 = flat_start(net_, problems_);
    for (const auto& a : problems_) {
      Eigen::VectorXd count = Eigen::VectorXd::Zero(a.dim());
      for (int c : map_.by_owner[a.id]) count(map_.copies[c].index) += 1.0;
      solvers_.emplace_back(a, count, cfg_.eta);
      kernels_.push_back(precompute_y_kernel(a.coupling, cfg_.eta));
      states_[a.id].x = x0[a.id];
    }
    for (const auto& a : problems_) {
      auto& y = states_[a.id].y;
      y.resize(static_cast<Eigen::Index>(a.y_layout.size()));
      for (int pos = 0; pos < y.size(); ++pos) y(pos) = states_[a.y_layout[pos].owner].x(a.y_layout[pos].index);
    }
    for (std::size_t c = 0; c < map_.copies.size(); ++c)
      view_[c] = states_[map_.copies[c].holder].y(map_.copies[c].pos);
    if (detector_on_) {
      for (const auto& a : problems_) {
        for (Stage s : {Stage::X, Stage::Y}) {
          Monitor m;
          m.layout = build_channel_layout(a, s);
          m.model = DetectorModel(cfg_.hyper, m.layout.W);
          monitors_[static_cast<int>(s)].push_back(std::move(m));
        }
      }
    }
    report_.detection_counts.assign(n, 0);
    report_.theorem = theorem_report(problems_, cfg_);
  }

  /// Runs until both residuals meet their tolerances or k_max is reached.
  RunReport run() {
    while (k_ < cfg_.k_max)
      if (step()) break;
    return finish();
  }

  /// One synchronous iteration; true once converged.
  bool step() {
    ++k_;
    std::vector<Eigen::VectorXd> prev_y;
    for (const auto& s : states_) prev_y.push_back(s.y);

    x_stage();
    auto packets = share(Stage::X);
    corrupt_all(packets);
    double mae_sum = 0;
    int mae_n = 0;
    screen(packets, Stage::X, mae_sum, mae_n);
    y_stage(packets);
    auto back = share(Stage::Y);
    corrupt_all(back);
    screen(back, Stage::Y, mae_sum, mae_n);
    dual_stage(back);

    const Residuals r = residuals(map_, states_, prev_y, cfg_.eta);
    if (!std::isfinite(r.primal) || !std::isfinite(r.dual))
      throw NumericalError("residuals became non-finite at iteration " + std::to_string(k_));
    const double S = net_.s_base_kva;
    TraceRow row{k_, r.primal, r.dual, 0.0, S * states_[net_.root].x(var::p)};
    for (const auto& a : problems_)
      if (a.role == AgentRole::Buyer) row.omega += S * states_[a.id].x.tail(a.partners.size()).sum();
    report_.trace.push_back(row);
    report_.mae_trace.push_back(mae_n ? mae_sum / mae_n : std::numeric_limits<double>::quiet_NaN());
    converged_ = r.primal <= cfg_.varpi1 && r.dual <= cfg_.varpi2;
    return converged_;
  }

  RunReport finish() {
    report_.iterations = k_;
    report_.converged = converged_;
    report_.x.clear();
    for (const auto& s : states_) report_.x.push_back(s.x);
    report_.outcome = outcome(report_.x, problems_, net_);
    return report_;
  }

  /// Restarts from the given local vectors with consistent copies and zero duals.
  void set_initial(std::span<const Eigen::VectorXd> x) {
    if (x.size() != states_.size()) throw LayoutError("one initial vector per agent required");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].size() != problems_[i].dim()) throw LayoutError("initial vector does not match the layout");
      states_[i].x = x[i];
      states_[i].z.resize(0);
    }
    for (const auto& a : problems_)
      for (int pos = 0; pos < states_[a.id].y.size(); ++pos)
        states_[a.id].y(pos) = states_[a.y_layout[pos].owner].x(a.y_layout[pos].index);
    for (std::size_t c = 0; c < map_.copies.size(); ++c) {
      view_[c] = states_[map_.copies[c].holder].y(map_.copies[c].pos);
      mu_[c] = 0.0;
    }
  }

  const std::vector<AgentProblem>& problems() const { return problems_; }
  const std::vector<AgentState>& states() const { return states_; }
  const CopyMap& copy_map() const { return map_; }
  int iteration() const { return k_; }

  /// Packets of one stage built from the current state; public for inspection.
  std::vector<SharedPacket> share(Stage stage) const {
    std::vector<SharedPacket> out;
    for (const auto& g : map_.groups) {
      const auto& c0 = map_.copies[g.front()];
      if (c0.owner == c0.holder) continue;
      SharedPacket p;
      p.stage = stage;
      p.edge = c0.edge;
      p.iteration = k_;
      p.sender = stage == Stage::X ? c0.owner : c0.holder;
      p.receiver = stage == Stage::X ? c0.holder : c0.owner;
      for (int c : g) {
        const auto& cp = map_.copies[c];
        const VarRef ref{cp.owner, cp.index};
        if (stage == Stage::X) {
          p.payload.push_back({ref, false, states_[cp.owner].x(cp.index)});
          p.payload.push_back({ref, true, mu_[c]});
        } else {
          p.payload.push_back({ref, false, states_[cp.holder].y(cp.pos)});
        }
      }
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  struct Monitor {
    ChannelLayout layout;
    DetectorModel model;
    std::deque<Eigen::VectorXd> history;   // values used, received channels first
    std::deque<Eigen::VectorXd> received;  // last two packets as received
  };


  void x_stage() {
    for (const auto& a : problems_) {
      std::vector<CopyTerm> terms;
      for (int c : map_.by_owner[a.id]) {
        const auto& cp = map_.copies[c];
        const double y = cp.holder == a.id ? states_[a.id].y(cp.pos) : view_[c];
        terms.push_back({cp.index, y, mu_[c]});
      }
      auto& st = states_[a.id];
      const Eigen::VectorXd g = solvers_[a.id].linear_term(terms);
      try {
        const XSolveResult r = solvers_[a.id].solve(g, st.z.size() ? &st.z : nullptr, cfg_.inner);
        st.x = r.x;
        st.z = r.z;
      } catch (const NonConvergence& e) {
        ++report_.subproblem_failures;
        if (e.best.size() == st.x.size()) st.x = e.best;
      }
    }
  }

  const LineRecord& flow_line(const SharedPacket& p) const {
    return net_.line_to(p.payload.front().var.owner);
  }

  void corrupt_all(std::vector<SharedPacket>& packets) const {
    if (!attack_) return;
    for (auto& p : packets)
      if (p.edge == EdgeKind::ChildToParent && attack_->targets_edge(p.sender, p.receiver))
        p = corrupt(p, *attack_, k_, flow_line(p));
  }

  /// Detection and mitigation on the packets addressed to each agent.
  void screen(std::vector<SharedPacket>& packets, Stage stage, double& mae_sum, int& mae_n) {
    if (!detector_on_) return;
    if (stage == Stage::X && !cfg_.detect_x_stage) return;
    if (stage == Stage::Y && !cfg_.detect_y_stage) return;
    std::vector<std::vector<PacketField*>> slots(problems_.size());
    std::vector<std::vector<SharedPacket*>> inbox(problems_.size());
    for (auto& p : packets) inbox[p.receiver].push_back(&p);

    for (const auto& a : problems_) {
      Monitor& m = monitors_[static_cast<int>(stage)][a.id];
      const int nr = m.layout.n_received;
      const int nc = static_cast<int>(m.layout.channels.size());
      if (nc == 0) continue;
      std::vector<PacketField*> fields(nr, nullptr);
      for (int ch = 0; ch < nr; ++ch) {
        const Channel& c = m.layout.channels[ch];
        for (SharedPacket* p : inbox[a.id])
          if (p->sender == c.peer)
            for (auto& f : p->payload)
              if (!f.dual && f.var == c.var) fields[ch] = &f;
        if (!fields[ch]) throw Error("packet for a monitored channel is missing");
      }
      Eigen::VectorXd recv(nr);
      for (int ch = 0; ch < nr; ++ch) recv(ch) = fields[ch]->value;
      Eigen::VectorXd chosen = recv;

      if (static_cast<int>(m.history.size()) >= cfg_.window && nr > 0) {
        DetectorLogRow row{k_, a.id, stage, 0, 0.0, DataSource::Received};
        try {
          m.model = fit_update(std::move(m.model), build_window(m.history, cfg_.window));
          const Eigen::VectorXd pred = forecast(m.model).head(nr);
          row.pred_error = (recv - pred).norm();
          mae_sum += (recv - pred).cwiseAbs().mean();
          ++mae_n;
          row.gamma = detect(recv, pred, cfg_.phi);
          if (row.gamma) {
            const auto& h = m.received;
            const DetectionOutcome o = mitigate(pred, h[1], h[0], cfg_.lambda);
            chosen = o.chosen;
            row.source = o.source;
            ++report_.detection_counts[a.id];
          }
        } catch (const Error&) {
          ++report_.detector_failures;
          m.model.fitted = false;
        }
        report_.detector_log.push_back(row);
      }
      for (int ch = 0; ch < nr; ++ch) fields[ch]->value = chosen(ch);
      m.received.push_back(recv);
      if (m.received.size() > 2) m.received.pop_front();

      Eigen::VectorXd slice(nc);
      slice.head(nr) = chosen;
      for (int ch = nr; ch < nc; ++ch) slice(ch) = states_[a.id].x(m.layout.channels[ch].var.index);
      m.history.push_back(std::move(slice));
      if (static_cast<int>(m.history.size()) > cfg_.window) m.history.pop_front();
    }
  }

  void y_stage(const std::vector<SharedPacket>& packets) {
    std::vector<std::vector<const SharedPacket*>> inbox(problems_.size());
    for (const auto& p : packets) inbox[p.receiver].push_back(&p);
    for (const auto& h : problems_) {
      const Eigen::Index ny = static_cast<Eigen::Index>(h.y_layout.size());
      Eigen::VectorXd xin(ny), muin(ny);
      for (int pos = 0; pos < ny; ++pos) {
        const int c = map_.by_holder[h.id][pos];
        const auto& cp = map_.copies[c];
        if (cp.owner == h.id) {
          xin(pos) = states_[h.id].x(cp.index);
          muin(pos) = mu_[c];
          continue;
        }
        const VarRef ref{cp.owner, cp.index};
        bool found_v = false, found_m = false;
        for (const SharedPacket* p : inbox[h.id]) {
          if (p->sender != cp.owner) continue;
          for (const auto& f : p->payload) {
            if (!(f.var == ref)) continue;
            if (f.dual) {
              muin(pos) = f.value;
              found_m = true;
            } else {
              xin(pos) = f.value;
              found_v = true;
            }
          }
        }
        if (!found_v || !found_m) throw Error("x-stage packet missing for a held copy");
      }
      states_[h.id].y = solve_y(kernels_[h.id], xin, muin);
    }
  }

  void dual_stage(const std::vector<SharedPacket>& packets) {
    std::map<std::pair<int, std::pair<int, int>>, double> received;  // (holder, var) -> value
    for (const auto& p : packets)
      for (const auto& f : p.payload) received[{p.sender, {f.var.owner, f.var.index}}] = f.value;
    for (std::size_t c = 0; c < map_.copies.size(); ++c) {
      const auto& cp = map_.copies[c];
      double y;
      if (cp.holder == cp.owner) {
        y = states_[cp.owner].y(cp.pos);
      } else {
        y = received.at({cp.holder, {cp.owner, cp.index}});
      }
      view_[c] = y;
      mu_[c] += cfg_.eta * (states_[cp.owner].x(cp.index) - y);
    }
  }

  NetworkCase net_;
  EngineConfig cfg_;
  std::optional<AttackScenario> attack_;
  bool detector_on_;
  std::vector<AgentProblem> problems_;
  CopyMap map_;
  std::vector<XSolver> solvers_;
  std::vector<YUpdateKernel> kernels_;
  std::vector<AgentState> states_;
  std::vector<double> mu_;    // owner-held dual per copy
  std::vector<double> view_;  // owner's latest view of each copy
  std::vector<Monitor> monitors_[2];
  RunReport report_;
  int k_ = 0;
  bool converged_ = false;
};

/// Runs the distributed market to convergence or k_max.
inline RunReport run(const NetworkCase& net, std::span<const CostParams> params,
                     const std::optional<AttackScenario>& attack, bool detector_on, const EngineConfig& cfg) {
  Simulation sim(net, params, cfg, attack, detector_on);
  return sim.run();
}

}  // namespace byzgrid
