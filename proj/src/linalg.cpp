#include "mqc/linalg.hpp"

#include <Eigen/Eigenvalues>

namespace mqc {

bool is_hermitian(const SmallMatrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = m.norm();
  return (m - m.adjoint()).norm() <= rel_tol * (scale > 0.0 ? scale : 1.0);
}

HermitianEigen hermitian_eigen(const SmallMatrix& m, bool check) {
  if (check && !is_hermitian(m)) throw InvalidInput("matrix is not Hermitian");
  Eigen::SelfAdjointEigenSolver<SmallMatrix> solver(m);
  if (solver.info() != Eigen::Success) throw InvalidInput("Hermitian eigendecomposition failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

double von_neumann_entropy(const SmallMatrix& rho) { return trace_function(rho, neg_x_log_x); }

double trace_power(const SmallMatrix& rho, double alpha) {
  return trace_function(rho, [alpha](double x) { return clamped_pow(x, alpha); });
}

SmallMatrix pauli_x() {
  SmallMatrix s(2, 2);
  s << 0.0, 1.0, 1.0, 0.0;
  return s;
}

SmallMatrix pauli_y() {
  SmallMatrix s(2, 2);
  s << 0.0, cplx(0.0, -1.0), cplx(0.0, 1.0), 0.0;
  return s;
}

SmallMatrix pauli_z() {
  SmallMatrix s(2, 2);
  s << 1.0, 0.0, 0.0, -1.0;
  return s;
}

SmallMatrix identity(int n) { return SmallMatrix::Identity(n, n); }

}  // namespace mqc
