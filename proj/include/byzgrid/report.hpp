#pragma once

// Running a configured scenario and writing its artifacts:
// summary.json, trace.csv and detector.csv.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "byzgrid/admm_engine.hpp"
#include "byzgrid/config.hpp"
#include "byzgrid/market.hpp"
#include "byzgrid/netmodel.hpp"

namespace byzgrid {

struct Scenario {
  NetworkCase net;
  std::vector<CostParams> params;
};

/// Loads the case and the cost parameters named by the config.
inline Scenario load_scenario(const RunConfig& c) {
  Scenario s;
  s.net = load_case(c.case_path);
  if (c.params_file) {
    s.params = load_params_file(*c.params_file, s.net);
  } else {
    s.params = sample_params(c.seed, s.net, c.prices);
  }
  return s;
}

inline RunReport execute(const RunConfig& c) {
  const Scenario s = load_scenario(c);
  return run(s.net, s.params, c.attack, c.detector_enabled, c.engine);
}

inline nlohmann::ordered_json theorem_json(const TheoremReport& t) {
  nlohmann::ordered_json agents = nlohmann::ordered_json::array();
  for (const auto& a : t.agents)
    agents.push_back({{"agent", a.agent},
                      {"delta", a.delta},
                      {"q_inv_norm", a.q_inv_norm},
                      {"condition1", a.condition1},
                      {"condition2", a.condition2},
                      {"satisfied1", a.satisfied1},
                      {"satisfied2", a.satisfied2}});
  return {{"all_satisfied", t.all_satisfied()}, {"agents", agents}};
}

inline nlohmann::ordered_json summary_json(const RunConfig& c, const RunReport& r) {
  nlohmann::ordered_json trades = nlohmann::ordered_json::array();
  for (const auto& [pair, e] : r.outcome.per_pair_trades)
    trades.push_back({{"buyer", pair.first}, {"seller", pair.second}, {"energy", e}});
  nlohmann::ordered_json j;
  j["config"] = to_json(c);
  j["outcome"] = {{"total_traded", r.outcome.total_traded},
                  {"substation_injection", r.outcome.substation_injection},
                  {"objective", r.outcome.objective},
                  {"max_reciprocity_gap", r.outcome.max_reciprocity_gap},
                  {"per_pair_trades", trades}};
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  if (!r.trace.empty()) {
    j["final_residuals"] = {{"gamma_p", r.trace.back().gamma_p}, {"gamma_d", r.trace.back().gamma_d}};
  } else {
    j["final_residuals"] = nullptr;
  }
  j["detection_counts"] = r.detection_counts;
  j["flag_rate"] = r.flag_rate();
  j["subproblem_failures"] = r.subproblem_failures;
  j["detector_failures"] = r.detector_failures;
  j["theorem"] = theorem_json(r.theorem);
  return j;
}

namespace detail {
inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}
}  // namespace detail

inline void write_trace_csv(std::ostream& os, const RunReport& r) {
  os << "k,gamma_p,gamma_d,omega_k,p0_k\n";
  for (const auto& t : r.trace)
    os << t.k << ',' << detail::fmt(t.gamma_p) << ',' << detail::fmt(t.gamma_d) << ',' << detail::fmt(t.omega)
       << ',' << detail::fmt(t.p0) << '\n';
}

inline void write_detector_csv(std::ostream& os, const RunReport& r) {
  os << "k,agent,stage,gamma,pred_error,source\n";
  for (const auto& d : r.detector_log)
    os << d.k << ',' << d.agent << ',' << to_string(d.stage) << ',' << d.gamma << ',' << detail::fmt(d.pred_error)
       << ',' << to_string(d.source) << '\n';
}

/// Writes summary.json, trace.csv and detector.csv into `dir`.
inline void write_outputs(const std::filesystem::path& dir, const RunConfig& c, const RunReport& r) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("summary.json");
    f << summary_json(c, r).dump(2) << '\n';
  }
  {
    auto f = open("trace.csv");
    write_trace_csv(f, r);
  }
  {
    auto f = open("detector.csv");
    write_detector_csv(f, r);
  }
}

}  // namespace byzgrid
