#pragma once

// JSON run configuration. Every section is optional and falls back to the
// defaults below; unknown keys are rejected so typos never pass silently.
//
// {
//   "case": "cases/ieee15.case",       // relative to the config file
//   "params_file": null,               // optional per-agent cost override
//   "seed": 1, "eta": 1.0, "utility": "aggregate",
//   "omega_b": 10.0, "omega_s": 5.0,
//   "stopping": {"varpi1": 1e-4, "varpi2": 1e-4, "k_max": 500},
//   "inner": {"tol": 1e-8, "max_iter": 5000},
//   "detector": {"enabled": false, "p": 2, "d": 2, "q": 1, "H": 10, "R": 4,
//                "tau": 4, "xi": 1e-4, "L": 30, "phi": 0.1, "lambda": 1.0,
//                "physics": true, "error_update": "stationary",
//                "stages": ["x", "y"]},
//   "attack": null | {"kind": "static", "targets": [[6, 2]], "magnitude": 200,
//                     "lo": 0, "hi": 3, "period": 5, "seed": 1,
//                     "start_iter": 40, "stage": "x"},
//   "theorem": {"upsilon": 1.0},
//   "compare": {"omega_tolerance": 0.01},
//   "output_dir": "out"
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "byzgrid/admm_engine.hpp"
#include "byzgrid/attacks.hpp"
#include "byzgrid/errors.hpp"

namespace byzgrid {

struct RunConfig {
  std::string case_path;
  std::optional<std::string> params_file;
  std::uint64_t seed = 1;
  PriceSettings prices;
  bool detector_enabled = false;
  EngineConfig engine;
  std::optional<AttackScenario> attack;
  double compare_tolerance = 0.01;
  std::string output_dir = "out";
};

namespace detail {

using nlohmann::ordered_json;

inline void reject_unknown(const ordered_json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const ordered_json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("");
    } else {
      if (!it->is_string()) throw ConfigError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline Stage parse_stage(const std::string& s) {
  if (s == "x") return Stage::X;
  if (s == "y") return Stage::Y;
  throw ConfigError("stage must be \"x\" or \"y\", got \"" + s + "\"");
}

inline const char* kind_name(AttackKind k) { return k == AttackKind::StaticCorrelated ? "static" : "dynamic"; }

}  // namespace detail

/// Parses a configuration document. Relative case, parameter and output paths
/// are resolved against `base_dir`.
inline RunConfig parse_config(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir = ".") {
  using detail::read;
  detail::reject_unknown(j,
                         {"case", "params_file", "seed", "eta", "utility", "omega_b", "omega_s", "stopping", "inner",
                          "detector", "attack", "theorem", "compare", "output_dir"},
                         "config");
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = base_dir / path;
    return std::filesystem::weakly_canonical(path).string();
  };

  if (!j.contains("case") || !j["case"].is_string()) throw ConfigError("config.case must name a case file");
  c.case_path = resolve(j["case"].get<std::string>());
  if (j.contains("params_file") && !j["params_file"].is_null()) {
    std::string p;
    read(j, "params_file", p, "config");
    c.params_file = resolve(p);
  }
  read(j, "seed", c.seed, "config");
  read(j, "eta", c.engine.eta, "config");
  std::string utility = "aggregate";
  read(j, "utility", utility, "config");
  if (utility == "aggregate")
    c.engine.utility = UtilityForm::Aggregate;
  else if (utility == "per_pair")
    c.engine.utility = UtilityForm::PerPair;
  else
    throw ConfigError("utility must be \"aggregate\" or \"per_pair\"");
  read(j, "omega_b", c.prices.omega_b, "config");
  read(j, "omega_s", c.prices.omega_s, "config");
  if (!(c.prices.omega_b >= c.prices.omega_s) || !(c.prices.omega_s >= 0))
    throw ConfigError("prices must satisfy omega_b >= omega_s >= 0");

  if (j.contains("stopping")) {
    const auto& s = j["stopping"];
    detail::reject_unknown(s, {"varpi1", "varpi2", "k_max"}, "stopping");
    read(s, "varpi1", c.engine.varpi1, "stopping");
    read(s, "varpi2", c.engine.varpi2, "stopping");
    read(s, "k_max", c.engine.k_max, "stopping");
  }
  if (j.contains("inner")) {
    const auto& s = j["inner"];
    detail::reject_unknown(s, {"tol", "max_iter"}, "inner");
    read(s, "tol", c.engine.inner.tol, "inner");
    read(s, "max_iter", c.engine.inner.max_iter, "inner");
  }
  if (j.contains("detector")) {
    const auto& s = j["detector"];
    detail::reject_unknown(s,
                           {"enabled", "p", "d", "q", "H", "R", "tau", "xi", "L", "phi", "lambda", "physics",
                            "error_update", "stages"},
                           "detector");
    auto& h = c.engine.hyper;
    read(s, "enabled", c.detector_enabled, "detector");
    read(s, "p", h.p, "detector");
    read(s, "d", h.d, "detector");
    read(s, "q", h.q, "detector");
    read(s, "H", h.H, "detector");
    read(s, "R", h.R, "detector");
    read(s, "tau", h.tau, "detector");
    read(s, "xi", h.xi, "detector");
    read(s, "L", c.engine.window, "detector");
    read(s, "phi", c.engine.phi, "detector");
    read(s, "lambda", c.engine.lambda, "detector");
    read(s, "physics", h.physics, "detector");
    std::string eu = "stationary";
    read(s, "error_update", eu, "detector");
    if (eu == "stationary")
      h.error_update = ErrorUpdate::Stationary;
    else if (eu == "verbatim")
      h.error_update = ErrorUpdate::Verbatim;
    else
      throw ConfigError("detector.error_update must be \"stationary\" or \"verbatim\"");
    if (s.contains("stages")) {
      if (!s["stages"].is_array()) throw ConfigError("detector.stages must be an array");
      c.engine.detect_x_stage = c.engine.detect_y_stage = false;
      for (const auto& st : s["stages"]) {
        if (!st.is_string()) throw ConfigError("detector.stages entries must be strings");
        (detail::parse_stage(st.get<std::string>()) == Stage::X ? c.engine.detect_x_stage
                                                                : c.engine.detect_y_stage) = true;
      }
    }
  }
  if (j.contains("attack") && !j["attack"].is_null()) {
    const auto& s = j["attack"];
    detail::reject_unknown(s, {"kind", "targets", "magnitude", "lo", "hi", "period", "seed", "start_iter", "stage"},
                           "attack");
    AttackScenario a;
    std::string kind = "static";
    read(s, "kind", kind, "attack");
    if (kind == "static")
      a.kind = AttackKind::StaticCorrelated;
    else if (kind == "dynamic")
      a.kind = AttackKind::DynamicNoise;
    else
      throw ConfigError("attack.kind must be \"static\" or \"dynamic\"");
    if (!s.contains("targets") || !s["targets"].is_array()) throw ConfigError("attack.targets must be an array");
    for (const auto& t : s["targets"]) {
      if (!t.is_array() || t.size() != 2 || !t[0].is_number_integer() || !t[1].is_number_integer())
        throw ConfigError("attack.targets entries must be [sender, receiver] pairs");
      a.targets.emplace_back(t[0].get<int>(), t[1].get<int>());
    }
    read(s, "magnitude", a.magnitude, "attack");
    read(s, "lo", a.lo, "attack");
    read(s, "hi", a.hi, "attack");
    read(s, "period", a.period, "attack");
    read(s, "seed", a.seed, "attack");
    read(s, "start_iter", a.start_iter, "attack");
    std::string stage = "x";
    read(s, "stage", stage, "attack");
    a.stage = detail::parse_stage(stage);
    a.validate();
    c.attack = a;
  }
  if (j.contains("theorem")) {
    detail::reject_unknown(j["theorem"], {"upsilon"}, "theorem");
    read(j["theorem"], "upsilon", c.engine.upsilon, "theorem");
  }
  if (j.contains("compare")) {
    detail::reject_unknown(j["compare"], {"omega_tolerance"}, "compare");
    read(j["compare"], "omega_tolerance", c.compare_tolerance, "compare");
    if (!(c.compare_tolerance >= 0)) throw ConfigError("compare.omega_tolerance must be non-negative");
  }
  read(j, "output_dir", c.output_dir, "config");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  c.output_dir = resolve(c.output_dir);
  c.engine.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
  // A summary.json embeds its resolved config and can be run again as is.
  if (j.is_object() && j.contains("config") && j.contains("outcome")) j = nlohmann::ordered_json(j["config"]);
  const auto base = std::filesystem::absolute(path).parent_path();
  return parse_config(j, base);
}

/// Fully resolved configuration; parsing it again yields the same RunConfig.
/// The output directory is left out so a re-run can write elsewhere without
/// changing the summary.
inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  const auto& e = c.engine;
  const auto& h = e.hyper;
  j["case"] = c.case_path;
  j["params_file"] = c.params_file ? nlohmann::ordered_json(*c.params_file) : nlohmann::ordered_json(nullptr);
  j["seed"] = c.seed;
  j["eta"] = e.eta;
  j["utility"] = e.utility == UtilityForm::Aggregate ? "aggregate" : "per_pair";
  j["omega_b"] = c.prices.omega_b;
  j["omega_s"] = c.prices.omega_s;
  j["stopping"] = {{"varpi1", e.varpi1}, {"varpi2", e.varpi2}, {"k_max", e.k_max}};
  j["inner"] = {{"tol", e.inner.tol}, {"max_iter", e.inner.max_iter}};
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  if (e.detect_x_stage) stages.push_back("x");
  if (e.detect_y_stage) stages.push_back("y");
  j["detector"] = {{"enabled", c.detector_enabled},
                   {"p", h.p},
                   {"d", h.d},
                   {"q", h.q},
                   {"H", h.H},
                   {"R", h.R},
                   {"tau", h.tau},
                   {"xi", h.xi},
                   {"L", e.window},
                   {"phi", e.phi},
                   {"lambda", e.lambda},
                   {"physics", h.physics},
                   {"error_update", h.error_update == ErrorUpdate::Stationary ? "stationary" : "verbatim"},
                   {"stages", stages}};
  if (c.attack) {
    const auto& a = *c.attack;
    nlohmann::ordered_json targets = nlohmann::ordered_json::array();
    for (auto [s, r] : a.targets) targets.push_back({s, r});
    j["attack"] = {{"kind", detail::kind_name(a.kind)},
                   {"targets", targets},
                   {"magnitude", a.magnitude},
                   {"lo", a.lo},
                   {"hi", a.hi},
                   {"period", a.period},
                   {"seed", a.seed},
                   {"start_iter", a.start_iter},
                   {"stage", to_string(a.stage)}};
  } else {
    j["attack"] = nullptr;
  }
  j["theorem"] = {{"upsilon", e.upsilon}};
  j["compare"] = {{"omega_tolerance", c.compare_tolerance}};
  return j;
}

}  // namespace byzgrid
