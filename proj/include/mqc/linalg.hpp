#pragma once

#include <cmath>

#include "mqc/core.hpp"

namespace mqc {

/// Eigenvalues below this are treated as zero in logarithms and powers.
inline constexpr double kEigenClamp = 1e-14;

struct HermitianEigen {
  RealVector values;     // ascending
  SmallMatrix vectors;   // columns are eigenvectors
};

bool is_hermitian(const SmallMatrix& m, double rel_tol = 1e-12);

/// Eigendecomposition of a Hermitian matrix; throws InvalidInput if M is not Hermitian.
HermitianEigen hermitian_eigen(const SmallMatrix& m, bool check = true);

/// U diag(fn(lambda)) U^dagger.
template <class Fn>
SmallMatrix matrix_function(const SmallMatrix& m, Fn&& fn) {
  const HermitianEigen e = hermitian_eigen(m);
  RealVector mapped(e.values.size());
  for (Eigen::Index k = 0; k < e.values.size(); ++k) mapped[k] = fn(e.values[k]);
  return e.vectors * mapped.cast<cplx>().asDiagonal() * e.vectors.adjoint();
}

/// Tr fn(M) = sum_k fn(lambda_k).
template <class Fn>
double trace_function(const SmallMatrix& m, Fn&& fn) {
  const HermitianEigen e = hermitian_eigen(m);
  double s = 0.0;
  for (Eigen::Index k = 0; k < e.values.size(); ++k) s += fn(e.values[k]);
  return s;
}

/// -x ln x with 0 ln 0 = 0 and clamping below kEigenClamp.
inline double neg_x_log_x(double x) { return x < kEigenClamp ? 0.0 : -x * std::log(x); }
inline double clamped_log(double x) { return std::log(x < kEigenClamp ? kEigenClamp : x); }
inline double clamped_pow(double x, double alpha) { return x < kEigenClamp ? 0.0 : std::pow(x, alpha); }

/// Von Neumann entropy -Tr(rho ln rho).
double von_neumann_entropy(const SmallMatrix& rho);
/// Tr rho^alpha.
double trace_power(const SmallMatrix& rho, double alpha);

inline SmallMatrix commutator(const SmallMatrix& a, const SmallMatrix& b) { return a * b - b * a; }
inline SmallMatrix hermitian_part(const SmallMatrix& a) { return 0.5 * (a + a.adjoint()); }

SmallMatrix pauli_x();
SmallMatrix pauli_y();
SmallMatrix pauli_z();
SmallMatrix identity(int n);

}  // namespace mqc
