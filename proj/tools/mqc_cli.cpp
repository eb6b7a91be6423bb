// Command-line front end: mqc_cli <simulate|equilibrium|casimir|convergence> --config FILE [--out DIR]
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mqc/scenario.hpp"

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::string model;
  bool quiet = false;
};

int dispatch(const std::string& command, const Options& opt) {
  mqc::ScenarioConfig cfg = mqc::load_config(opt.config);
  if (!opt.model.empty()) {
    try {
      cfg.model = mqc::model_kind_from_string(opt.model);
    } catch (const mqc::Error& e) {
      throw mqc::ConfigError(std::string("--model: ") + e.what());
    }
  }
  if (command == "simulate") {
    const mqc::SimulateOutcome o = mqc::run_simulate(cfg, opt.out);
    if (!opt.quiet) {
      std::cout << "model " << mqc::to_string(cfg.model) << ", dt " << o.stepper.dt << ", " << o.run.steps_taken
                << "/" << o.stepper.steps << " steps, max CFL " << o.run.max_cfl << "\n";
      for (const auto& w : o.run.warnings) std::cout << "warning: " << w << "\n";
      for (const auto& f : o.files) std::cout << "wrote " << f.string() << "\n";
    }
    if (o.run.aborted) std::cerr << "numerical abort: " << o.run.abort_reason << "\n";
    return o.exit_code;
  }
  if (command == "equilibrium") {
    const mqc::EquilibriumOutcome o = mqc::run_equilibrium(cfg, opt.out);
    if (!opt.quiet) std::cout << o.metrics.dump(2) << "\n";
    return 0;
  }
  if (command == "casimir") {
    const nlohmann::json r = mqc::run_casimir_check(cfg, opt.out);
    if (!opt.quiet) std::cout << r.dump(2) << "\n";
    return 0;
  }
  const mqc::ConvergenceTable t = mqc::run_convergence(cfg, cfg.convergence.factors, opt.out);
  if (!opt.quiet) mqc::write_convergence_csv(std::cout, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed quantum-classical phase-space dynamics lab"};
  app.require_subcommand(1);
  Options opt;
  for (const char* name : {"simulate", "equilibrium", "casimir", "convergence"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "scenario configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--model", opt.model, "override the configured model");
    sub->add_flag("--quiet", opt.quiet, "suppress the summary on stdout");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (const char* threads = std::getenv("MQC_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) mqc::set_thread_limit(n);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return dispatch(command, opt);
  } catch (const mqc::NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
