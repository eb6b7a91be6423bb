#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mqc/equilibria.hpp"
#include "mqc/io.hpp"

namespace mqc {

/// Malformed or incomplete scenario configuration; the message names the key path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DensityProfile {
  enum class Kind { gaussian, von_mises, uniform };
  Kind kind = Kind::gaussian;
  double qc = 0.0, pc = 0.0;
  double sigma_q = 0.5, sigma_p = 0.5;  // gaussian widths
  double kappa_q = 2.0, kappa_p = 2.0;  // von Mises concentrations
};

/// Initial conditional state vector.
///   constant: (cos theta, e^{i phase} sin theta, 0, ...)
///   eigen:    eigenvector field of H on branch `branch`
///   twisted:  (cos th(p), e^{i l wq q} sin th(p), 0, ...), th(p) = theta + amp sin(k wp p),
///             with wq, wp the fundamental wavenumbers of the domain
struct StateProfile {
  enum class Kind { constant, eigen, twisted };
  Kind kind = Kind::constant;
  double theta = 0.39269908169872414;  // pi / 8
  double phase = 0.0;
  int branch = 0;
  double amp = 0.3;
  int k = 1, l = 1;
};

struct InitialSpec {
  std::string representation = "conditional";  // conditional, density, uhlmann, mean_field
  DensityProfile density;
  StateProfile state;
  /// Optional mixture weights; column a of W is sqrt(w_a) times the a-th vector of
  /// an orthonormal completion of psi.
  std::vector<double> weights;
  std::optional<std::filesystem::path> file;  // snapshot overriding the built-in profiles
};

struct TimeSpec {
  std::optional<double> dt;
  double cfl = 0.2;
  std::optional<int> steps;
  std::optional<double> t_final;
  int sample_every = 1;
};

struct LoopSpec {
  double qc = 0.0, pc = 0.0, radius = 0.5;
  int points = 256;
};

struct ProbeSpec {
  int count = 20;
  std::uint64_t seed = 42;
  int kmax = 2;
  double twist = 0.5;
};

struct DiagnosticsSpec {
  double renyi_alpha = 2.0;
  std::optional<LoopSpec> loop;
  ProbeSpec probes;
};

struct EquilibriumSpec {
  Representation representation = Representation::conditional;
  std::optional<double> energy, mu;
  int branch = 0;
  double t_check = 6.283185307179586;
  int probes = 50;
};

struct ConvergenceSpec {
  std::vector<int> factors = {1, 2, 4};  // refinement factors relative to the configured run
  std::string mode = "space";            // space, time, both
};

struct ScenarioConfig {
  PhaseGrid grid;
  int n = 2, m = 2;
  ModelKind model = ModelKind::ehrenfest_conditional;
  HamiltonianSpec hamiltonian;
  TimeSpec time;
  double trace_regularization = 1e-12;
  InitialSpec initial;
  DiagnosticsSpec diagnostics;
  std::optional<EquilibriumSpec> equilibrium;
  ConvergenceSpec convergence;
  std::filesystem::path base_dir;  // relative file references resolve here
};

ScenarioConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ScenarioConfig load_config(const std::filesystem::path& path);

PhaseFunction parse_phase_function(const nlohmann::json& node, const std::string& path);
SmallMatrix parse_matrix(const nlohmann::json& node, int n, const std::string& path);
HamiltonianSpec parse_hamiltonian(const nlohmann::json& node, int n, const std::filesystem::path& base_dir,
                                  const std::string& path = "hamiltonian");

/// Upper bound of the averaged speed: max over nodes of the spectral norms of dH/dq, dH/dp.
double max_speed_bound(const HamiltonianFields& H);
/// Resolves dt (explicit or from the CFL target) and the step count.
StepperConfig stepper_config(const ScenarioConfig& cfg, const HamiltonianFields& H);

ConditionalSplit initial_conditional(const ScenarioConfig& cfg, const HamiltonianFields& H);
/// Initial state converted to the representation evolved by cfg.model.
ModelState initial_state(const ScenarioConfig& cfg, const HamiltonianFields& H);
/// Converts between representations (conditional -> density, uhlmann, mean_field, ...).
ModelState convert_state(const ModelState& s, ModelKind target, int ancilla);

struct SimulateOutcome {
  RunResult run;
  StepperConfig stepper;
  int exit_code = 0;
  std::vector<std::filesystem::path> files;
};

/// Writes diagnostics.csv, initial.snap, final.snap and run.json to out_dir
/// (if non-empty). On numerical abort the last finite state goes to abort.snap
/// and exit_code is 2.
SimulateOutcome run_simulate(const ScenarioConfig& cfg, const std::filesystem::path& out_dir = {});

struct EquilibriumOutcome {
  EquilibriumResult result;
  StationarityReport stationarity;
  MaximalityReport maximality;
  nlohmann::json metrics;
};

/// Writes equilibrium.snap and metrics.json.
EquilibriumOutcome run_equilibrium(const ScenarioConfig& cfg, const std::filesystem::path& out_dir = {});

/// Bracket and Casimir probes on a random mixed state plus the bracket-dynamics
/// consistency of mass, second q-moment and C1 on the configured initial state.
/// Writes casimir.json.
nlohmann::json run_casimir_check(const ScenarioConfig& cfg, const std::filesystem::path& out_dir = {});

struct ConvergenceRow {
  std::string quantity;
  std::string measure;  // "drift" (|X(T) - X(0)|) or "self" (difference to the next level)
  std::vector<double> spacing;
  std::vector<double> errors;
  double order = 0.0;  // -slope of log error against log spacing
  double r2 = 0.0;
};

struct ConvergenceTable {
  std::string mode;
  std::vector<ConvergenceRow> rows;
};

/// Runs the scenario once per refinement factor r and fits observed orders.
/// space: grid refined by r at the dt of the finest level; time: dt / r on the
/// configured grid; both: grid and dt refined together. Writes convergence.csv.
ConvergenceTable run_convergence(const ScenarioConfig& cfg, const std::vector<int>& factors,
                                 const std::filesystem::path& out_dir = {});
void write_convergence_csv(std::ostream& os, const ConvergenceTable& table);

/// Least-squares slope and R^2 of log(y) against log(x); points with y <= 0 are skipped.
std::pair<double, double> fit_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace mqc
