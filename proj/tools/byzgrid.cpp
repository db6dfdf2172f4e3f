// byzgrid command line: run a scenario, compare three runs, or report the
// convergence-theorem conditions.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "byzgrid/byzgrid.hpp"

namespace {

using namespace byzgrid;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> k_max;
};

RunConfig resolve(const std::string& path, const Overrides& o) {
  RunConfig c = load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.k_max) c.engine.k_max = *o.k_max;
  c.engine.validate();
  return c;
}

void print_line(const std::string& label, const RunReport& r) {
  std::cout << std::left << std::setw(10) << label << std::right << std::fixed << std::setprecision(4)
            << std::setw(14) << r.outcome.total_traded << std::setw(14) << r.outcome.substation_injection
            << std::setw(12) << r.iterations << std::setw(11) << (r.converged ? "yes" : "no") << '\n';
}

int cmd_run(const std::string& path, const Overrides& o) {
  const RunConfig c = resolve(path, o);
  const RunReport r = execute(c);
  write_outputs(c.output_dir, c, r);
  std::cout << "iterations " << r.iterations << ", converged " << (r.converged ? "yes" : "no") << ", Omega "
            << r.outcome.total_traded << " kWh, p0 " << r.outcome.substation_injection << " kWh\n"
            << "outputs written to " << c.output_dir << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const Overrides& o) {
  static const char* labels[3] = {"normal", "attacked", "defended"};
  std::vector<RunConfig> cfgs;
  for (const auto& p : paths) cfgs.push_back(resolve(p, o));
  for (std::size_t i = 1; i < cfgs.size(); ++i)
    if (cfgs[i].case_path != cfgs[0].case_path || cfgs[i].seed != cfgs[0].seed)
      throw ConfigError("compared configs must share case and seed");
  std::vector<RunReport> reports;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    if (o.out) cfgs[i].output_dir = (std::filesystem::path(*o.out) / labels[i]).string();
    reports.push_back(execute(cfgs[i]));
    write_outputs(cfgs[i].output_dir, cfgs[i], reports.back());
  }
  std::cout << std::left << std::setw(10) << "run" << std::right << std::setw(14) << "Omega(kWh)" << std::setw(14)
            << "p0(kWh)" << std::setw(12) << "iterations" << std::setw(11) << "converged" << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) print_line(labels[i], reports[i]);
  const double tol = cfgs[0].compare_tolerance;
  auto close = [&](double a, double b) { return std::abs(a - b) <= tol * std::max(std::abs(b), 1e-12); };
  const bool omega_ok = close(reports[2].outcome.total_traded, reports[0].outcome.total_traded);
  const bool p0_ok = close(reports[2].outcome.substation_injection, reports[0].outcome.substation_injection);
  std::cout << std::defaultfloat << "defended Omega matches normal within " << tol * 100 << "%: "
            << (omega_ok ? "yes" : "no") << '\n'
            << "defended p0 matches normal within " << tol * 100 << "%: " << (p0_ok ? "yes" : "no") << '\n';
  return 0;
}

int cmd_theorem(const std::string& path, const Overrides& o) {
  const RunConfig c = resolve(path, o);
  const Scenario s = load_scenario(c);
  const auto problems = assemble(s.net, s.params, c.engine.utility);
  const TheoremReport t = theorem_report(problems, c.engine);
  std::cout << "eta " << c.engine.eta << ", lambda " << c.engine.lambda << ", upsilon " << c.engine.upsilon << '\n';
  std::cout << std::setw(6) << "agent" << std::setw(14) << "delta" << std::setw(14) << "|Q^-1|" << std::setw(14)
            << "cond1" << std::setw(14) << "cond2" << std::setw(11) << "satisfied" << '\n';
  for (const auto& a : t.agents)
    std::cout << std::setw(6) << a.agent << std::setw(14) << a.delta << std::setw(14) << a.q_inv_norm << std::setw(14)
              << a.condition1 << std::setw(14) << a.condition2 << std::setw(11)
              << (a.satisfied1 && a.satisfied2 ? "yes" : "no") << '\n';
  std::cout << "all satisfied: " << (t.all_satisfied() ? "yes" : "no") << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Byzantine-resilient distributed energy market simulator"};
  app.require_subcommand(1);
  Overrides o;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "override the parameter seed");
    sub->add_option("--out", o.out, "override the output directory");
    sub->add_option("--k-max", o.k_max, "override the iteration cap");
  };

  std::string config;
  std::vector<std::string> triple;
  auto* run = app.add_subcommand("run", "run one scenario and write its outputs");
  run->add_option("config", config, "run configuration (JSON)")->required();
  add_overrides(run);
  auto* compare = app.add_subcommand("compare", "run normal, attacked and defended scenarios side by side");
  compare->add_option("configs", triple, "three run configurations")->required()->expected(3);
  add_overrides(compare);
  auto* theorem = app.add_subcommand("theorem", "report the per-agent convergence conditions");
  theorem->add_option("config", config, "run configuration (JSON)")->required();
  add_overrides(theorem);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(config, o);
    if (*compare) return cmd_compare(triple, o);
    return cmd_theorem(config, o);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const NonConvergence& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
