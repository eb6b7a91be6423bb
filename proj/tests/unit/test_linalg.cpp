#include "doctest.h"
#include "helpers.hpp"

using namespace mqc;

TEST_CASE("matrix functions of small Hermitian matrices") {
  const SmallMatrix zero = SmallMatrix::Zero(2, 2);
  CHECK((matrix_function(zero, [](double x) { return std::exp(x); }) - identity(2)).norm() < 1e-15);

  SmallMatrix half = identity(2) * 0.5;
  CHECK(von_neumann_entropy(half) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  SmallMatrix r(2, 2);
  r << 0.7, 0.1, 0.1, 0.3;
  // eigenvalues of [[a,b],[b,c]]: (a+c)/2 +- sqrt(((a-c)/2)^2 + b^2)
  const double root = std::sqrt(0.2 * 0.2 + 0.1 * 0.1);
  const double l1 = 0.5 + root, l2 = 0.5 - root;
  const double oracle = -l1 * std::log(l1) - l2 * std::log(l2);
  CHECK(von_neumann_entropy(r) == doctest::Approx(oracle).epsilon(1e-13));
}

TEST_CASE("identity map reproduces the input") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + t % 5;
    const SmallMatrix m = testing::random_hermitian(rng, n);
    CHECK((matrix_function(m, [](double x) { return x; }) - m).norm() <= 1e-12 * m.norm());
  }
}

TEST_CASE("eigendecomposition is ascending and rejects non-Hermitian input") {
  std::mt19937_64 rng(4);
  const SmallMatrix m = testing::random_hermitian(rng, 4);
  const HermitianEigen e = hermitian_eigen(m);
  for (int k = 1; k < 4; ++k) CHECK(e.values[k] >= e.values[k - 1]);
  SmallMatrix bad = m;
  bad(0, 1) += cplx(0.5, 0.0);
  CHECK_THROWS_AS(hermitian_eigen(bad), InvalidInput);
}

TEST_CASE("clamped entropy of a rank-deficient state is finite") {
  SmallMatrix pure = SmallMatrix::Zero(3, 3);
  pure(1, 1) = 1.0;
  CHECK(von_neumann_entropy(pure) == 0.0);
  CHECK(trace_power(pure, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("pauli algebra") {
  const cplx i(0.0, 1.0);
  CHECK((commutator(pauli_x(), pauli_y()) - 2.0 * i * pauli_z()).norm() < 1e-15);
  CHECK((pauli_x() * pauli_x() - identity(2)).norm() < 1e-15);
}
