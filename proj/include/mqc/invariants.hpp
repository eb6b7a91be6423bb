#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mqc/dynamics.hpp"

namespace mqc {

/// Real function of one variable applied to eigenvalues (for Phi) or to the
/// ratio Lambda / D (for Sigma).
struct SpectralFunction {
  enum class Kind { neg_x_log_x, log, power, quadratic, table };
  Kind kind = Kind::neg_x_log_x;
  double alpha = 2.0;
  /// Piecewise-linear table (x ascending), clamped at both ends.
  std::vector<std::pair<double, double>> table;

  double operator()(double x) const;

  static SpectralFunction neg_x_log_x() { return {Kind::neg_x_log_x}; }
  static SpectralFunction log() { return {Kind::log}; }
  static SpectralFunction power(double a) { return {Kind::power, a}; }
  static SpectralFunction quadratic() { return {Kind::quadratic}; }
  /// Accepts "neg_x_log_x", "log", "quadratic", "power:<alpha>".
  static SpectralFunction from_name(const std::string& name);
};

/// Gamma(A, x) of the general Casimir family.
struct GammaFunction {
  enum class Kind {
    phi,      // Tr phi(A)
    sigma,    // sigma(x)
    renyi,    // x^(1-alpha) Tr A^alpha
    entropy,  // -Tr A ln A + ln x
  };
  Kind kind = Kind::entropy;
  SpectralFunction fn;
  double alpha = 2.0;

  double operator()(const SmallMatrix& A, double x) const;
};

// ------------------------------------------------------------------ functionals of P

/// Tr int P Phi(P / Tr P), Phi = sum of fn over eigenvalues. Vacuum nodes contribute 0.
double casimir_c1(const HybridDensity& P, const SpectralFunction& phi);

struct SplitValue {
  double value = 0.0;
  bool lambda_positive = true;  // false: Lambda <= 0 somewhere on the support
};

/// int D Sigma(Lambda / D) with Lambda from berry_data(psi).
SplitValue casimir_c2(const ConditionalSplit& s, const SpectralFunction& sigma);
/// -int D ln(D / Lambda).
SplitValue shannon_pure(const ConditionalSplit& s);

/// -Tr rho ln rho - int D ln D.
double entropy_meanfield(const ScalarField& D, const SmallMatrix& rho);
/// (ln Tr rho^alpha + ln int D^alpha) / (1 - alpha).
double renyi_meanfield(const ScalarField& D, const SmallMatrix& rho, double alpha);

/// -Tr int P ln(P / Lambda), Lambda from the wave operator.
SplitValue entropy_uhlmann(const UhlmannSplit& s);
/// (1 - alpha)^-1 ln int Lambda Tr (P / Lambda)^alpha.
SplitValue renyi_mqc(const UhlmannSplit& s, double alpha);
/// int D Gamma(W W^dagger, Lambda / D).
SplitValue casimir_general(const UhlmannSplit& s, const GammaFunction& gamma);

/// Tr int P H.
double energy(const HybridDensity& P, const HamiltonianFields& H);
double mass(const HybridDensity& P);

// ------------------------------------------------------------ functional derivatives

/// Functional of a hybrid density, either local (an integrand evaluated node
/// by node) or global.
class Functional {
 public:
  enum class Kind { mass, energy, c1, second_moment_q, purity, probe };

  static Functional mass();
  static Functional energy(std::shared_ptr<const HamiltonianFields> H);
  static Functional c1(const SpectralFunction& phi);
  /// int q^2 Tr P.
  static Functional second_moment_q();
  /// Tr (int P)^2.
  static Functional purity();
  /// int Tr(A P) + (1/2) (Tr(B P))^2 with Hermitian fields A, B.
  static Functional probe(std::shared_ptr<const MatrixField> A, std::shared_ptr<const MatrixField> B);

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  bool local() const { return kind_ != Kind::purity; }

  double operator()(const HybridDensity& P) const;
  /// Integrand at node k (local kinds only).
  double integrand(const PhaseGrid& g, std::size_t k, const SmallMatrix& Pk) const;

 private:
  Kind kind_ = Kind::mass;
  std::string name_;
  SpectralFunction phi_;
  std::shared_ptr<const HamiltonianFields> H_;
  std::shared_ptr<const MatrixField> A_, B_;
};

struct DerivativeReport {
  double richardson_gap = 0.0;  // max |D(h) - D(h/2)| relative to max |result|
};

/// delta F / delta P by central differences in the coefficients of an
/// orthonormal Hermitian basis, step rel_step * scale, Richardson-extrapolated.
MatrixField functional_derivative(const Functional& f, const HybridDensity& P, double rel_step = 1e-6,
                                  DerivativeReport* report = nullptr);

/// Closed forms used as oracles and in the fast paths.
MatrixField derivative_mass(const HybridDensity& P);
MatrixField derivative_energy(const HamiltonianFields& H);

struct BracketValue {
  double value = 0.0;
  double scale = 0.0;  // integral of the absolute pointwise integrand
  /// Integral of the Cauchy-Schwarz bound of the integrand,
  /// |P|^2/TrP (|d_qF||d_pG| + |d_pF||d_qG|) + (2/hbar)|P||F_0||G_0| with F_0, G_0 traceless parts.
  double bound = 0.0;
};

/// {{f,g}} = int (TrP)^-1 [Tr(P d_q F) Tr(P d_p G) - Tr(P d_p F) Tr(P d_q G)]
///           - Re Tr(P (i/hbar)[F, G]).
BracketValue hybrid_bracket(const MatrixField& F, const MatrixField& G, const HybridDensity& P,
                            double trace_regularization = 1e-12);
BracketValue hybrid_bracket(const Functional& f, const Functional& g, const HybridDensity& P);

struct ConsistencyReport {
  double bracket = 0.0;   // {{f, h}}
  double chain = 0.0;     // int Re Tr(F dP/dt) along ehrenfest_rhs
  double scale = 0.0;
  double residual = 0.0;  // |bracket - chain| / scale
};

ConsistencyReport bracket_consistency(const Functional& f, const HybridDensity& P, const HamiltonianFields& H);

/// Flow generated on (D, W) by a hybrid-density functional f with F = delta f / delta P:
///   dD/dt = -div(D <X_F>),  dW/dt = -<X_F>.grad W - (i/hbar) F W.
UhlmannSplit split_flow(const UhlmannSplit& s, const MatrixField& F);

struct CasimirProbe {
  double rate = 0.0;   // dC/dt along the flow of f, i.e. {{C, f}}
  double scale = 0.0;  // integral of the absolute pointwise rate
  /// Integral of the chain-rule bound |dc/dD||dD/dt| + |dc/dLambda||dLambda/dt| + |grad_W c||dW/dt|
  /// of the pointwise integrand c(D, Lambda, W).
  double bound = 0.0;
};

/// dC/dt of a split Casimir along split_flow(., F), by Richardson-extrapolated
/// central differences of the pointwise integrand.
CasimirProbe casimir_rate(const UhlmannSplit& s, const MatrixField& F, const GammaFunction& gamma);
CasimirProbe casimir_rate(const ConditionalSplit& s, const MatrixField& F, const SpectralFunction& sigma);

/// Smooth Hermitian n x n field: sum of random Hermitian amplitudes times
/// plane waves with |k| <= kmax.
MatrixField random_hermitian_field(const PhaseGrid& g, int n, int kmax, std::uint64_t seed, double amplitude = 1.0);

/// Smooth PSD density D U diag(lam) U^dagger with D a positive band-limited bump,
/// U = exp(i K) for a random Hermitian field K, lam a strictly positive spectrum.
UhlmannSplit random_mixed_split(const PhaseGrid& g, int n, std::uint64_t seed, double twist = 0.5,
                                double spread = 0.6);

// ----------------------------------------------------------------- Poincare loop

/// Closed loop of K points. Coordinates are kept unwrapped; they are wrapped
/// only when fields are interpolated.
struct LoopTracer {
  std::vector<double> q, p;

  std::size_t size() const { return q.size(); }
  static LoopTracer circle(double qc, double pc, double radius, int K);
  LoopTracer& axpy(double a, const LoopTracer& x);
};

/// Loop integral of (p |psi|^2 - hbar Im psi^dagger d_q psi) dq - hbar Im(psi^dagger d_p psi) dp,
/// with x'(s) from a 4th-order periodic difference in the loop parameter.
double poincare_integral(const ConditionalSplit& s, const LoopTracer& loop);

struct LoopRun {
  std::vector<double> times;
  std::vector<double> values;
  ConditionalSplit state;
  LoopTracer loop;
  bool aborted = false;
  std::string abort_reason;
  int steps_taken = 0;
  double max_cfl = 0.0;
  std::vector<std::string> warnings;
};

/// Co-integrates the conditional state and the loop points (advected by the
/// interpolated velocity) with RK4, sampling the loop integral. The CFL guard
/// matches rk4_run.
/// `on_sample(t, state, value)` is called at every sample, including t = 0.
LoopRun poincare_run(const ConditionalSplit& s, const LoopTracer& loop, const HamiltonianFields& H,
                     const StepperConfig& cfg,
                     const std::function<void(double, const ConditionalSplit&, double)>& on_sample = {});

/// L2 norm of (Lambda_{k+1} - Lambda_{k-1}) / (t_{k+1} - t_{k-1}) + div(Lambda_k X_k)
/// for every interior sample k.
std::vector<double> lambda_transport_residual(const std::vector<ConditionalSplit>& samples,
                                              const std::vector<double>& times, const HamiltonianFields& H);

// ---------------------------------------------------------------- diagnostics rows

struct DiagnosticOptions {
  double renyi_alpha = 2.0;
};

/// Standard diagnostics row for a model state. Quantities undefined for the
/// representation stay empty: S_pure needs a conditional split; S_uhlmann is the
/// Uhlmann entropy of a split (for mean-field states, the mean-field entropy it
/// reduces to); renyi_alpha follows the same family.
DiagnosticRow standard_diagnostics(ModelKind kind, double t, const ModelState& s, const HamiltonianFields& H,
                                   const DiagnosticOptions& opt = {});

}  // namespace mqc
