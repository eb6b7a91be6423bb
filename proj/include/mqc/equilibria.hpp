#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mqc/dynamics.hpp"
#include "mqc/invariants.hpp"

namespace mqc {

enum class Representation { mean_field, conditional, uhlmann };

std::string to_string(Representation r);
Representation representation_from_string(const std::string& name);

struct MaxEntProblem {
  Representation representation = Representation::conditional;
  HamiltonianSpec hamiltonian;
  PhaseGrid grid;
  std::optional<double> energy;  // target E
  std::optional<double> mu;      // inverse temperature
  int branch = 0;                // eigenvalue index (ascending) for the conditional representation
  int ancilla = 0;               // Uhlmann ancilla dimension m (0: m = n)
};

struct EquilibriumResult {
  Representation representation = Representation::conditional;
  ModelState state;
  double mu = 0.0;
  double Z = 0.0;       // partition value Z_C
  double energy = 0.0;  // energy of the returned state
  int branch = 0;
  double lambda_deviation = 0.0;  // max |Lambda - 1| on the support
  std::vector<std::string> notes;
};

/// Gibbs states of the conditional representation for zeta-composed (including
/// the q-independent nanowire) and pure-dephasing (including uncoupled) Hamiltonians.
EquilibriumResult gibbs_conditional(const MaxEntProblem& problem);
/// P = exp(-mu H) / Tr int exp(-mu H) for zeta-composed and uncoupled Hamiltonians.
EquilibriumResult gibbs_uhlmann(const MaxEntProblem& problem);
/// Factorized Gibbs pair rho ~ exp(-mu H_Q), D ~ exp(-mu H_C) for uncoupled Hamiltonians.
EquilibriumResult gibbs_meanfield(const MaxEntProblem& problem);
/// Dispatches on problem.representation; solves for mu when only E is given.
EquilibriumResult solve_equilibrium(const MaxEntProblem& problem);

struct MuSolution {
  double mu = 0.0;
  double energy = 0.0;
  int iterations = 0;
};

inline constexpr double kMuMin = 1e-6;
inline constexpr double kMuMax = 1e6;

/// Bisection in log mu on [kMuMin, kMuMax] for a decreasing energy curve E(mu).
/// e_zero is E at mu = 0 (the upper end of the attainable range); targets between
/// E(kMuMin) and e_zero return kMuMin. Throws RangeError outside the range.
MuSolution solve_mu(const std::function<double(double)>& energy_of_mu, double target, double e_zero,
                    double rel_tol = 1e-10);
MuSolution solve_mu(const MaxEntProblem& problem);

struct StationarityReport {
  double marina_residual = 0.0;  // D-weighted RMS of the first condition, relative
  double gibbs_residual = 0.0;   // D-weighted RMS of ln(D/Lambda) + <mu H> + lambda_2
  double lambda2 = 0.0;
  double d_change = 0.0;         // relative L1 change of D over t_check
  double state_change = 0.0;     // D-weighted L1 change of psi psi^dagger / W W^dagger / rho
  double entropy_change = 0.0;
  double t_check = 0.0;
  bool aborted = false;
};

/// Certifies an equilibrium: static residuals of the variational conditions
/// plus a dynamical run of the matching model over `steps` steps of size dt.
StationarityReport stationarity_residual(const EquilibriumResult& eq, const HamiltonianFields& H, double dt,
                                         int steps);

struct MeanFieldResidual {
  double quantum = 0.0;    // |ln rho + mu int D H + lambda_1| (Frobenius)
  double classical = 0.0;  // D-weighted RMS of ln D + mu Tr(rho H) + lambda_2
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

MeanFieldResidual meanfield_maxent_residual(const ScalarField& D, const SmallMatrix& rho, const HamiltonianFields& H,
                                            double mu);

struct MaximalityReport {
  double entropy = 0.0;
  double max_perturbed = 0.0;
  int probes = 0;
  int violations = 0;  // perturbed states with larger entropy
  double max_constraint_error = 0.0;
};

/// Compares the equilibrium entropy against random smooth density perturbations
/// projected back onto the normalization and energy constraints.
MaximalityReport maximality_probe(const EquilibriumResult& eq, const HamiltonianFields& H, int probes = 50,
                                  double amplitude = 0.05, std::uint64_t seed = 7);

/// Entropy matching the representation: S_pure, S_uhlmann or the mean-field entropy.
double equilibrium_entropy(const ModelState& s);

}  // namespace mqc
