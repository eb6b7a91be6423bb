#include "doctest.h"
#include "helpers.hpp"
#include "mqc/hamiltonians.hpp"

using namespace mqc;

namespace {

double max_block_error(const MatrixField& a, const std::function<SmallMatrix(double, double)>& fn) {
  const PhaseGrid& g = a.grid();
  double e = 0.0;
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j)
      e = std::max(e, (SmallMatrix(a.block(g.index(i, j))) - fn(g.q(i), g.p(j))).norm());
  return e;
}

std::vector<HamiltonianSpec> periodic_catalog() {
  NanowireParams nw;
  nw.confinement = 0.3;
  std::vector<HamiltonianSpec> out;
  out.push_back(HamiltonianSpec::uncoupled(PhaseFunction::trig_harmonic(1.0, 1.0), pauli_x()));
  out.push_back(HamiltonianSpec::nanowire(NanowireParams{}));
  out.push_back(HamiltonianSpec::nanowire(nw));
  out.push_back(HamiltonianSpec::pure_dephasing(PhaseFunction::trig_harmonic(1.0, 1.0), PhaseFunction::sine_q(0.2),
                                                pauli_z()));
  out.push_back(HamiltonianSpec::zeta_composed(PhaseFunction::sin_sq_sum(0.5), {identity(2), pauli_z(), pauli_x()}));
  return out;
}

}  // namespace

TEST_CASE("uncoupled harmonic vector field") {
  const PhaseGrid g = testing::torus(16);
  const HamiltonianFields H = build(HamiltonianSpec::uncoupled(PhaseFunction::harmonic(1.0, 1.0), pauli_x()), g);
  // X_H = (dH/dp, -dH/dq) = (p, -q) 1
  CHECK(max_block_error(H.dp, [](double, double p) { return SmallMatrix(p * identity(2)); }) < 1e-14);
  CHECK(max_block_error(H.dq, [](double q, double) { return SmallMatrix(q * identity(2)); }) < 1e-14);
  CHECK(!H.periodic);
}

TEST_CASE("pure dephasing gradient term by term") {
  const double eps = 0.3;
  const PhaseGrid g = testing::torus(16);
  const HamiltonianFields H = build(
      HamiltonianSpec::pure_dephasing(PhaseFunction::harmonic(1.0, 1.0), PhaseFunction::linear(eps, 0.0), pauli_z()),
      g);
  CHECK(max_block_error(H.dq, [&](double q, double) { return SmallMatrix(q * identity(2) + eps * pauli_z()); }) <
        1e-14);
}

TEST_CASE("eigenfields of simple fields") {
  const PhaseGrid g = testing::torus(24);
  SUBCASE("zeta sigma_z") {
    PhaseFunction zeta = PhaseFunction::sin_sq_sum(0.5);
    zeta += PhaseFunction::constant(1.0);
    const HamiltonianFields H = build(HamiltonianSpec::zeta_composed(zeta, {SmallMatrix::Zero(2, 2), pauli_z()}), g);
    const EigenFields e = eigenfields(H.H);
    CHECK(e.crossings.empty());
    for (int i = 0; i < g.nq(); ++i)
      for (int j = 0; j < g.np(); ++j) {
        const double z = zeta.value(g.q(i), g.p(j));
        CHECK(e.energies[0](i, j) == doctest::Approx(-z).epsilon(1e-13));
        CHECK(e.energies[1](i, j) == doctest::Approx(z).epsilon(1e-13));
        CHECK(std::abs(e.states[0](i, j, 1)) == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(std::abs(e.states[1](i, j, 0)) == doctest::Approx(1.0).epsilon(1e-13));
      }
  }
  SUBCASE("B sigma_x") {
    const double B = 0.3;
    const HamiltonianFields H = build(HamiltonianSpec::uncoupled(PhaseFunction::constant(0.0), B * pauli_x()), g);
    const EigenFields e = eigenfields(H.H);
    const double r = std::sqrt(0.5);
    for (std::size_t k = 0; k < g.points(); ++k) {
      CHECK(e.energies[0][k] == doctest::Approx(-B).epsilon(1e-13));
      CHECK(e.energies[1][k] == doctest::Approx(B).epsilon(1e-13));
      const cplx* lo = e.states[0].at(k);
      const cplx* hi = e.states[1].at(k);
      CHECK(std::abs(r * lo[0] - r * lo[1]) == doctest::Approx(1.0).epsilon(1e-13));
      CHECK(std::abs(r * hi[0] + r * hi[1]) == doctest::Approx(1.0).epsilon(1e-13));
    }
  }
  SUBCASE("nanowire energies at fixed p") {
    NanowireParams nw;
    nw.trig = false;
    nw.mass = 1.3;
    const HamiltonianFields H = build(HamiltonianSpec::nanowire(nw), g);
    const EigenFields e = eigenfields(H.H);
    for (int j = 0; j < g.np(); ++j) {
      const double p = g.p(j);
      const double mid = p * p / (2 * nw.mass), half = std::sqrt(nw.eta * nw.eta * p * p + nw.B * nw.B);
      // branch labels follow overlap continuation, which may swap across the non-periodic seam
      const double a = e.energies[0](3, j), b = e.energies[1](3, j);
      CHECK(std::min(a, b) == doctest::Approx(mid - half).epsilon(1e-12));
      CHECK(std::max(a, b) == doctest::Approx(mid + half).epsilon(1e-12));
    }
  }
  SUBCASE("a vanishing gap is reported") {
    const HamiltonianFields H =
        build(HamiltonianSpec::zeta_composed(PhaseFunction::sine_q(1.0), {SmallMatrix::Zero(2, 2), pauli_z()}), g);
    CHECK(!eigenfields(H.H).crossings.empty());
  }
}

TEST_CASE("property: every kind is Hermitian with gradients matching finite differences") {
  for (const HamiltonianSpec& spec : periodic_catalog()) {
    CAPTURE(to_string(spec.kind()));
    double prev = 0.0;
    for (int n : {32, 64}) {
      const HamiltonianFields H = build(spec, testing::torus(n));
      CHECK(H.periodic);
      double herm = 0.0;
      for (std::size_t k = 0; k < H.H.points(); ++k) herm = std::max(herm, (H.H.block(k) - H.H.block(k).adjoint()).norm());
      CHECK(herm <= 1e-12);
      double e = 0.0, scale = 0.0;
      const MatrixField fq = partial_q(H.H), fp = partial_p(H.H);
      for (std::size_t k = 0; k < H.H.points(); ++k) {
        e = std::max({e, (fq.block(k) - H.dq.block(k)).norm(), (fp.block(k) - H.dp.block(k)).norm()});
        scale = std::max({scale, H.dq.block(k).norm(), H.dp.block(k).norm()});
      }
      if (n == 64) {
        CHECK(e <= 5e-4 * scale);
        if (prev > 1e-13) CHECK(std::log2(prev / e) >= 3.5);
      }
      prev = e;
    }
  }
}

TEST_CASE("property: eigenfields reconstruct H away from crossings") {
  for (const HamiltonianSpec& spec : periodic_catalog()) {
    CAPTURE(to_string(spec.kind()));
    const HamiltonianFields H = build(spec, testing::torus(32));
    const EigenFields e = eigenfields(H.H);
    double err = 0.0;
    for (std::size_t k = 0; k < H.H.points(); ++k) {
      SmallMatrix rec = SmallMatrix::Zero(spec.dim(), spec.dim());
      for (int b = 0; b < spec.dim(); ++b) {
        const Eigen::Map<const Eigen::VectorXcd> v(e.states[b].at(k), spec.dim());
        rec += e.energies[b][k] * v * v.adjoint();
      }
      err = std::max(err, (rec - SmallMatrix(H.H.block(k))).norm());
    }
    CHECK(err < 1e-10);
  }
}

TEST_CASE("tabulated Hamiltonians round-trip the sampled field") {
  const PhaseGrid g = testing::torus(32);
  const HamiltonianFields ref = build(periodic_catalog()[3], g);
  const HamiltonianFields tab = build(HamiltonianSpec::tabulated(ref.H), g);
  double e = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) e = std::max(e, (tab.H.block(k) - ref.H.block(k)).norm());
  CHECK(e < 1e-14);
  MatrixField bad = ref.H;
  bad.block(3)(0, 1) += 1.0;
  CHECK_THROWS_AS(HamiltonianSpec::tabulated(bad), InvalidInput);
}
