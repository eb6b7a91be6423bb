#pragma once

#include <cstddef>

#include "mqc/grid.hpp"

namespace mqc {

/// Operator-valued phase-space density P(q,p): Hermitian PSD n x n per node.
struct HybridDensity {
  MatrixField P;

  int dim() const { return P.rows(); }
  const PhaseGrid& grid() const { return P.grid(); }

  HybridDensity& axpy(double a, const HybridDensity& x) {
    P.axpy(a, x.P);
    return *this;
  }
};

/// P = D psi psi^dagger with |psi| = 1 wherever D is above the vacuum threshold.
struct ConditionalSplit {
  ScalarField D;
  StateField psi;

  int dim() const { return psi.rows(); }
  const PhaseGrid& grid() const { return D.grid(); }

  ConditionalSplit& axpy(double a, const ConditionalSplit& x) {
    D.axpy(a, x.D);
    psi.axpy(a, x.psi);
    return *this;
  }
};

/// P = D W W^dagger with W an n x m conditional wave operator of unit Frobenius norm.
struct UhlmannSplit {
  ScalarField D;
  WaveOpField W;

  int dim() const { return W.rows(); }
  int ancilla() const { return W.cols(); }
  const PhaseGrid& grid() const { return D.grid(); }

  UhlmannSplit& axpy(double a, const UhlmannSplit& x) {
    D.axpy(a, x.D);
    W.axpy(a, x.W);
    return *this;
  }
};

struct BerryData {
  VectorField2 connection;   // A_B = Re <field, -i hbar grad field>
  ScalarField curvature;     // hbar Im Tr{field^dagger, field}
  ScalarField Lambda;        // 1 + curvature
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  bool lambda_positive() const { return lambda_min > 0.0; }
};

/// Vacuum threshold eps_D = 1e-12 max(D).
double vacuum_threshold(const ScalarField& D);

ScalarField classical_density(const HybridDensity& P);
SmallMatrix quantum_marginal(const HybridDensity& P);
double purity(const SmallMatrix& rho);

HybridDensity compose(const ConditionalSplit& s);
HybridDensity compose(const UhlmannSplit& s);

/// Throws InvalidInput unless every node is Hermitian with min eigenvalue >= -1e-10.
void validate(const HybridDensity& P);

struct FactorReport {
  std::size_t continued_points = 0;  // vacuum nodes filled from a neighbour
  double min_eigenvalue = 0.0;
};

/// Pointwise Uhlmann factorization P = D W W^dagger with a deterministic gauge:
/// eigenvalues descending, first non-negligible component of each eigenvector
/// real-positive, zero columns padded up to m. Vacuum nodes copy W from the
/// nearest non-vacuum node along the grid lines through them.
UhlmannSplit uhlmann_factor(const HybridDensity& P, int m, FactorReport* report = nullptr);

/// Berry connection, curvature and Liouville volume of a state field (n x 1)
/// or wave-operator field (n x m).
BerryData berry_data(const ComplexField& field);

/// Wave operator [psi, 0, ..., 0] with m columns.
UhlmannSplit pad_to_uhlmann(const ConditionalSplit& s, int m);

/// Normalizes psi (or W) pointwise and rescales D to unit mass.
void renormalize(ConditionalSplit& s);
void renormalize(UhlmannSplit& s);

/// Integral of |P - Tr(P) rho| where rho is the quantum marginal.
double factorization_distance(const HybridDensity& P);

}  // namespace mqc
