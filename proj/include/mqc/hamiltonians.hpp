#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mqc/grid.hpp"

namespace mqc {

/// One term of a classical phase-space function.
struct PhaseTerm {
  enum class Kind { constant, monomial, cosine };
  Kind kind = Kind::constant;
  double coef = 0.0;
  // monomial: coef (q - cq)^pow_q (p - cp)^pow_p
  int pow_q = 0, pow_p = 0;
  double center_q = 0.0, center_p = 0.0;
  // cosine: coef cos(kq q + kp p + phase)
  double kq = 0.0, kp = 0.0, phase = 0.0;
};

/// Scalar function of (q,p) built from constants, monomials and plane-wave
/// cosines, with analytic first and second derivatives.
class PhaseFunction {
 public:
  PhaseFunction() = default;
  explicit PhaseFunction(std::vector<PhaseTerm> terms) : terms_(std::move(terms)) {}

  static PhaseFunction constant(double c);
  /// cq (q-q_c)^2/2 + cp (p-p_c)^2/2
  static PhaseFunction harmonic(double cq, double cp, double qc = 0.0, double pc = 0.0);
  /// cq L^2 (1 - cos(q/L)) + cp L^2 (1 - cos(p/L)): periodic surrogate of harmonic().
  static PhaseFunction trig_harmonic(double cq, double cp, double length = 1.0);
  static PhaseFunction linear(double aq, double ap);
  /// amp sin(k q)
  static PhaseFunction sine_q(double amp, double k = 1.0);
  /// s (sin^2 q + sin^2 p)
  static PhaseFunction sin_sq_sum(double s);

  double value(double q, double p) const;
  std::array<double, 2> gradient(double q, double p) const;
  /// (f_qq, f_qp, f_pp)
  std::array<double, 3> hessian(double q, double p) const;

  /// True when every term is a constant or a cosine whose wavenumbers fit the grid.
  bool periodic_on(const PhaseGrid& g) const;
  bool empty() const { return terms_.empty(); }
  const std::vector<PhaseTerm>& terms() const { return terms_; }

  PhaseFunction& operator+=(const PhaseFunction& other);
  PhaseFunction scaled(double s) const;

 private:
  std::vector<PhaseTerm> terms_;
};

enum class HamiltonianKind { uncoupled, nanowire, pure_dephasing, zeta_composed, tabulated };

std::string to_string(HamiltonianKind kind);
HamiltonianKind hamiltonian_kind_from_string(const std::string& name);

struct NanowireParams {
  double mass = 1.0;
  double eta = 0.5;
  double B = 0.3;
  double confinement = 0.0;  // kappa in V(q) = kappa q^2/2 (or its trig surrogate)
  bool trig = true;          // p -> L sin(p/L), p^2/2 -> L^2 (1 - cos(p/L))
  double length = 1.0;
};

/// Catalog entry for a hybrid Hamiltonian H(q,p).
///
/// Every analytic kind is stored as a sum of f_k(q,p) M_k; zeta-composed kinds
/// as a matrix polynomial in zeta(q,p); tabulated kinds as a sampled field.
class HamiltonianSpec {
 public:
  static HamiltonianSpec uncoupled(const PhaseFunction& HC, const SmallMatrix& HQ);
  static HamiltonianSpec nanowire(const NanowireParams& params);
  static HamiltonianSpec pure_dephasing(const PhaseFunction& H0, const PhaseFunction& HI, const SmallMatrix& A);
  /// H = sum_k zeta^k coeffs[k]
  static HamiltonianSpec zeta_composed(const PhaseFunction& zeta, const std::vector<SmallMatrix>& coeffs);
  static HamiltonianSpec tabulated(const MatrixField& H);

  HamiltonianKind kind() const { return kind_; }
  int dim() const { return dim_; }

  SmallMatrix value(double q, double p) const;
  /// (dH/dq, dH/dp)
  std::array<SmallMatrix, 2> gradient(double q, double p) const;

  bool periodic_on(const PhaseGrid& g) const;

  // Structural data used by the equilibrium constructions.
  const PhaseFunction& H0() const { return H0_; }
  const PhaseFunction& HI() const { return HI_; }
  const SmallMatrix& dephasing_operator() const { return A_; }
  const PhaseFunction& zeta() const { return zeta_; }
  const std::vector<SmallMatrix>& zeta_coefficients() const { return zeta_coeffs_; }
  /// H(zeta) for zeta-composed kinds.
  SmallMatrix value_at_zeta(double z) const;
  const std::optional<NanowireParams>& nanowire_params() const { return nanowire_; }
  /// For the uncoupled kind: classical part and quantum part.
  const PhaseFunction& classical_part() const { return HC_; }
  const SmallMatrix& quantum_part() const { return HQ_; }

 private:
  HamiltonianKind kind_ = HamiltonianKind::uncoupled;
  int dim_ = 1;
  std::vector<std::pair<PhaseFunction, SmallMatrix>> terms_;
  PhaseFunction zeta_;
  std::vector<SmallMatrix> zeta_coeffs_;
  PhaseFunction H0_, HI_, HC_;
  SmallMatrix A_, HQ_;
  std::optional<MatrixField> table_;
  std::optional<NanowireParams> nanowire_;
};

/// H sampled on a grid with its phase-space gradient; X_H = (dH/dp, -dH/dq).
struct HamiltonianFields {
  MatrixField H;
  MatrixField dq;
  MatrixField dp;
  bool periodic = true;

  int dim() const { return H.rows(); }
  const PhaseGrid& grid() const { return H.grid(); }
};

HamiltonianFields build(const HamiltonianSpec& spec, const PhaseGrid& grid);

struct EigenFields {
  std::vector<ScalarField> energies;  // branch n, ascending at the seed node
  std::vector<StateField> states;
  std::vector<std::array<int, 2>> crossings;  // nodes with a gap below 1e-10
  std::vector<double> min_neighbor_overlap;   // per branch
};

/// Pointwise eigendecomposition with a smooth gauge: branches are continued
/// from a non-degenerate seed node by maximal overlap with the visited
/// neighbour, phases aligned to that neighbour.
EigenFields eigenfields(const MatrixField& H);

}  // namespace mqc
