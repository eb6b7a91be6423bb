#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mqc/hamiltonians.hpp"
#include "mqc/hybrid_state.hpp"

namespace mqc {

enum class ModelKind { mean_field, ehrenfest_density, ehrenfest_conditional, ehrenfest_uhlmann, beyond_ehrenfest };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Factorized state P = D rho of the mean-field model.
struct MeanFieldState {
  ScalarField D;
  SmallMatrix rho;

  const PhaseGrid& grid() const { return D.grid(); }
  MeanFieldState& axpy(double a, const MeanFieldState& x) {
    D.axpy(a, x.D);
    rho += a * x.rho;
    return *this;
  }
};

using ModelState = std::variant<MeanFieldState, HybridDensity, ConditionalSplit, UhlmannSplit>;

/// True when the state alternative is the one the model evolves.
bool state_matches(ModelKind kind, const ModelState& state);

struct StepperConfig {
  double dt = 0.01;
  int steps = 0;
  int sample_every = 1;
  /// eps_tr = trace_regularization * max(Tr P) in velocity denominators.
  double trace_regularization = 1e-12;
  bool renormalize = false;
  bool keep_samples = false;
};

/// Side information reported by a right-hand-side evaluation.
struct RhsInfo {
  double max_speed = 0.0;
  double antiherm_residual = 0.0;  // max |T - T^dagger| / max |T| before symmetrization
};

/// Pointwise averaged Hamiltonian velocity <X_H> = Re Tr(F^dagger X_H F) of a
/// normalized state vector or wave operator field F.
VectorField2 ehrenfest_velocity(const ComplexField& F, const HamiltonianFields& H);

/// Averaged velocity Tr(P X_H) / (Tr P + eps_tr) of a hybrid density.
VectorField2 density_velocity(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization);

MeanFieldState mean_field_rhs(const MeanFieldState& s, const HamiltonianFields& H, RhsInfo* info = nullptr);

HybridDensity ehrenfest_rhs(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization = 1e-12,
                            RhsInfo* info = nullptr);

ConditionalSplit conditional_rhs(const ConditionalSplit& s, const HamiltonianFields& H, RhsInfo* info = nullptr);

UhlmannSplit uhlmann_rhs(const UhlmannSplit& s, const HamiltonianFields& H, RhsInfo* info = nullptr);

/// Auxiliary fields of the beyond-Ehrenfest model.
struct BeyondTerms {
  MatrixField sigma_q, sigma_p;  // Sigma = (i hbar / 2D) [P, X_P]
  VectorField2 velocity;         // <X_H> + D^-1 Tr(X_H . grad Sigma - Sigma . grad X_H)
  MatrixField effective_H;       // H + (i hbar / D)[grad P - P grad ln sqrt(D), X_H]
};

BeyondTerms beyond_terms(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization = 1e-12);

HybridDensity beyond_ehrenfest_rhs(const HybridDensity& P, const HamiltonianFields& H,
                                   double trace_regularization = 1e-12, RhsInfo* info = nullptr);

/// Energy Tr int (P H + Sigma . X_H) of the beyond-Ehrenfest model. Sigma is built
/// from X_P, so it is paired with X_H symplectically: Sigma . X_H = Sigma_q X_H^p -
/// Sigma_p X_H^q. This is the pairing the model's flow conserves.
double beyond_energy(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization = 1e-12);

/// Evaluates the right-hand side of `kind` on a matching state.
ModelState model_rhs(ModelKind kind, const ModelState& state, const HamiltonianFields& H,
                     double trace_regularization = 1e-12, RhsInfo* info = nullptr);

void axpy(ModelState& y, double a, const ModelState& x);
bool all_finite(const ModelState& s);

/// One classic RK4 step for any state type providing axpy(double, const State&).
template <class State, class Rhs>
State rk4_step(const State& y, double dt, Rhs&& rhs) {
  const State k1 = rhs(y);
  State y2 = y;
  y2.axpy(0.5 * dt, k1);
  const State k2 = rhs(y2);
  State y3 = y;
  y3.axpy(0.5 * dt, k2);
  const State k3 = rhs(y3);
  State y4 = y;
  y4.axpy(dt, k3);
  const State k4 = rhs(y4);
  State out = y;
  out.axpy(dt / 6.0, k1);
  out.axpy(dt / 3.0, k2);
  out.axpy(dt / 3.0, k3);
  out.axpy(dt / 6.0, k4);
  return out;
}

/// One row of the fixed diagnostics table; absent values stay empty.
struct DiagnosticRow {
  double t = 0.0;
  std::optional<double> mass, energy, C1, C2, S_pure, S_uhlmann, renyi, purity, lambda_min, lambda_max, poincare,
      antiherm;
};

struct DiagnosticSeries {
  std::vector<DiagnosticRow> rows;
};

struct RunHooks {
  /// Computes the diagnostics row for a sampled state.
  std::function<DiagnosticRow(double t, const ModelState&)> diagnostics;
  /// Called at every sample (including t = 0).
  std::function<void(double t, const ModelState&)> on_sample;
};

struct RunResult {
  ModelState state;
  DiagnosticSeries series;
  std::vector<ModelState> samples;
  std::vector<double> sample_times;
  bool aborted = false;
  std::string abort_reason;
  int steps_taken = 0;
  double max_cfl = 0.0;
  double max_antiherm = 0.0;
  std::vector<std::string> warnings;
};

/// Fixed-step RK4 integration with CFL guard (abort at 0.5, warn above 0.35),
/// NaN/Inf detection (abort, last finite state kept) and sampled diagnostics.
RunResult rk4_run(ModelKind kind, ModelState state, const HamiltonianFields& H, const StepperConfig& cfg,
                  const RunHooks& hooks = {});

}  // namespace mqc
