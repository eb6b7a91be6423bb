#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mqc/equilibria.hpp"

using namespace mqc;
using testing::kPi;

namespace {

PhaseGrid box(double half, int n) { return PhaseGrid(-half, half, -half, half, n, n); }

MaxEntProblem dephasing_problem(const PhaseGrid& g, double eps, int branch, double mu) {
  MaxEntProblem p;
  p.representation = Representation::conditional;
  p.hamiltonian =
      HamiltonianSpec::pure_dephasing(PhaseFunction::harmonic(1.0, 1.0), PhaseFunction::linear(eps, 0.0), pauli_z());
  p.grid = g;
  p.mu = mu;
  p.branch = branch;
  return p;
}

HamiltonianSpec zeta_sigma_z(double s) {
  return HamiltonianSpec::zeta_composed(PhaseFunction::sin_sq_sum(s), {SmallMatrix::Zero(2, 2), pauli_z()});
}

double sq(double x) { return x * x; }

}  // namespace

TEST_CASE("dephasing Gibbs states") {
  SUBCASE("no coupling: Z approaches 2 pi / mu as the surrogate flattens") {
    const double mu = 2.0;
    double prev_gap = 1.0;
    for (double L : {1.0, 2.0, 4.0}) {
      const PhaseGrid g = box(kPi * L, 64);
      MaxEntProblem p;
      p.hamiltonian = HamiltonianSpec::pure_dephasing(PhaseFunction::trig_harmonic(1.0, 1.0, L),
                                                      PhaseFunction::constant(0.0), pauli_z());
      p.grid = g;
      p.mu = mu;
      const EquilibriumResult r = gibbs_conditional(p);
      // one-dimensional factor: int exp(-mu L^2 (1 - cos(q/L))) dq = 2 pi L e^{-x} I_0(x), x = mu L^2
      const double x = mu * L * L;
      const double oracle = sq(2 * kPi * L * std::exp(-x) * std::cyl_bessel_i(0.0, x));
      CHECK(r.Z == doctest::Approx(oracle).epsilon(1e-10));
      const double gap = std::abs(r.Z * mu / (2 * kPi) - 1.0);
      CHECK(gap < prev_gap);
      prev_gap = gap;
      const auto& s = std::get<ConditionalSplit>(r.state);
      CHECK(integrate(s.D) == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK(prev_gap < 0.05);
  }
  SUBCASE("linear coupling shifts the Gaussian") {
    const double eps = 0.4, mu = 2.0;
    const PhaseGrid g = box(8.0, 96);
    const EquilibriumResult r = gibbs_conditional(dephasing_problem(g, eps, 1, mu));
    // completing the square: H0 + eps q = ((q + eps)^2 + p^2) / 2 - eps^2 / 2
    CHECK(r.Z == doctest::Approx(2 * kPi / mu * std::exp(mu * eps * eps / 2)).epsilon(1e-10));
    const auto& s = std::get<ConditionalSplit>(r.state);
    const ScalarField expect = sample(g, [&](double q, double p) {
      return std::exp(-mu * (sq(q + eps) + p * p) / 2) * mu / (2 * kPi);
    });
    CHECK(testing::sup_err(s.D, expect) < 1e-10);
    CHECK(r.lambda_deviation < 1e-12);
    CHECK(r.energy == doctest::Approx(1.0 / mu - eps * eps / 2).epsilon(1e-10));
  }
  SUBCASE("seam-touching profile is rejected") {
    CHECK_THROWS_AS(gibbs_conditional(dephasing_problem(box(2.0, 32), 0.1, 0, 0.5)), RangeError);
  }
}

TEST_CASE("zeta-composed conditional Gibbs state") {
  const PhaseGrid g = testing::torus(48);
  const double s = 0.5, mu = 1.5;
  MaxEntProblem p;
  p.hamiltonian = zeta_sigma_z(s);
  p.grid = g;
  p.mu = mu;
  p.branch = 1;  // E_+ = zeta
  const EquilibriumResult r = gibbs_conditional(p);
  CHECK(r.lambda_deviation < 1e-8);
  const auto& st = std::get<ConditionalSplit>(r.state);
  const ScalarField w = sample(g, [&](double q, double pp) {
    return std::exp(-mu * s * (sq(std::sin(q)) + sq(std::sin(pp))));
  });
  const double z = integrate(w);
  ScalarField expect = w;
  expect *= 1.0 / z;
  CHECK(testing::sup_err(st.D, expect) < 1e-12 * max_abs(expect));
  CHECK(r.Z == doctest::Approx(z).epsilon(1e-12));
}

TEST_CASE("Uhlmann Gibbs states") {
  const PhaseGrid g = testing::torus(32);
  SUBCASE("scalar Hamiltonian") {
    const PhaseFunction H0 = PhaseFunction::trig_harmonic(1.0, 1.0);
    MaxEntProblem p;
    p.representation = Representation::uhlmann;
    p.hamiltonian = HamiltonianSpec::uncoupled(H0, SmallMatrix::Zero(2, 2));
    p.grid = g;
    p.mu = 1.2;
    const EquilibriumResult r = gibbs_uhlmann(p);
    const auto& u = std::get<UhlmannSplit>(r.state);
    ScalarField w = sample(g, [&](double q, double pp) { return std::exp(-1.2 * H0.value(q, pp)); });
    w *= 1.0 / integrate(w);
    CHECK(testing::sup_err(u.D, w) < 1e-13);
    double e = 0.0;
    for (std::size_t k = 0; k < g.points(); ++k) {
      const auto W = u.W.block(k);
      e = std::max(e, (SmallMatrix(W * W.adjoint()) - 0.5 * identity(2)).norm());
    }
    CHECK(e < 1e-12);
  }
  SUBCASE("zeta sigma_z") {
    const double s = 0.5, mu = 1.5;
    MaxEntProblem p;
    p.representation = Representation::uhlmann;
    p.hamiltonian = zeta_sigma_z(s);
    p.grid = g;
    p.mu = mu;
    const EquilibriumResult r = gibbs_uhlmann(p);
    const auto& u = std::get<UhlmannSplit>(r.state);
    double e = 0.0;
    for (int i = 0; i < g.nq(); ++i)
      for (int j = 0; j < g.np(); ++j) {
        const double z = s * (sq(std::sin(g.q(i))) + sq(std::sin(g.p(j))));
        SmallMatrix expect = SmallMatrix::Zero(2, 2);
        expect(0, 0) = std::exp(-mu * z) / (2 * std::cosh(mu * z));
        expect(1, 1) = std::exp(mu * z) / (2 * std::cosh(mu * z));
        const auto W = u.W.block(g.index(i, j));
        e = std::max(e, (SmallMatrix(W * W.adjoint()) - expect).norm());
      }
    CHECK(e < 1e-12);
    CHECK(r.lambda_deviation < 1e-8);
  }
  SUBCASE("infinite temperature") {
    MaxEntProblem p;
    p.representation = Representation::uhlmann;
    p.hamiltonian = zeta_sigma_z(0.5);
    p.grid = g;
    p.mu = 0.0;
    const EquilibriumResult r = gibbs_uhlmann(p);
    const auto& u = std::get<UhlmannSplit>(r.state);
    ScalarField uniform(g, 1, 1, 1.0 / g.area());
    CHECK(testing::sup_err(u.D, uniform) < 1e-15);
    const HamiltonianFields H = build(p.hamiltonian, g);
    const StationarityReport rep = stationarity_residual(r, H, 0.05, 20);
    CHECK(rep.d_change < 1e-14);
    // W only rotates by exp(-i H t); RK4 keeps W W^dagger = I/n up to its non-unitarity
    CHECK(rep.state_change < 1e-9);
  }
  SUBCASE("ancilla smaller than n is rejected") {
    MaxEntProblem p;
    p.representation = Representation::uhlmann;
    p.hamiltonian = zeta_sigma_z(0.5);
    p.grid = g;
    p.mu = 1.0;
    p.ancilla = 1;
    CHECK_THROWS_AS(gibbs_uhlmann(p), InvalidInput);
  }
}

TEST_CASE("inverse temperature from a target energy") {
  SUBCASE("equipartition") {
    MaxEntProblem p;
    p.hamiltonian = HamiltonianSpec::uncoupled(PhaseFunction::harmonic(1.0, 1.0), SmallMatrix::Zero(1, 1));
    p.grid = box(12.0, 128);
    p.energy = 0.5;
    const MuSolution sol = solve_mu(p);
    CHECK(sol.mu == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(std::abs(sol.mu * 0.5 - 1.0) < 1e-3);
    p.energy = -0.1;
    CHECK_THROWS_AS(solve_mu(p), RangeError);
  }
  SUBCASE("mean of the branch energies gives mu near zero") {
    MaxEntProblem p;
    p.representation = Representation::uhlmann;
    p.hamiltonian = zeta_sigma_z(0.5);
    p.grid = testing::torus(32);
    p.energy = 0.0;
    CHECK(solve_mu(p).mu <= kMuMin);
  }
  SUBCASE("shifted Gaussian moments") {
    const double eps = 0.4;
    for (double target : {0.3, 0.6, 1.2}) {
      MaxEntProblem p = dephasing_problem(box(12.0, 128), eps, 0, 1.0);
      p.mu.reset();
      p.energy = target;
      // E(mu) = 1/mu - eps^2/2 on either branch
      CHECK(solve_mu(p).mu == doctest::Approx(1.0 / (target + eps * eps / 2)).epsilon(1e-6));
    }
  }
  SUBCASE("both or neither multiplier") {
    MaxEntProblem p = dephasing_problem(box(8.0, 32), 0.1, 0, 1.0);
    p.energy = 1.0;
    CHECK_THROWS_AS(solve_equilibrium(p), InvalidInput);
  }
}

TEST_CASE("stationarity certificates") {
  const PhaseGrid g = testing::torus(32);
  MaxEntProblem p;
  p.hamiltonian = HamiltonianSpec::pure_dephasing(PhaseFunction::trig_harmonic(1.0, 1.0), PhaseFunction::sine_q(0.2),
                                                  pauli_z());
  p.grid = g;
  p.mu = 2.0;
  p.branch = 1;
  const EquilibriumResult r = gibbs_conditional(p);
  const HamiltonianFields H = build(p.hamiltonian, g);
  const StationarityReport rep = stationarity_residual(r, H, 0.02, 50);
  CHECK(rep.marina_residual < 1e-12);
  CHECK(rep.gibbs_residual < 1e-12);
  CHECK(!rep.aborted);

  // the dynamical residual is discretization error and decays at fourth order
  MaxEntProblem pf = p;
  pf.grid = testing::torus(64);
  const EquilibriumResult rf = gibbs_conditional(pf);
  const StationarityReport repf = stationarity_residual(rf, build(pf.hamiltonian, pf.grid), 0.02, 50);
  CHECK(std::log2(rep.d_change / repf.d_change) > 3.5);

  EquilibriumResult bad = r;
  auto& s = std::get<ConditionalSplit>(bad.state);
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) s.D(i, j) *= 1.0 + 0.1 * std::sin(g.q(i));
  const StationarityReport neg = stationarity_residual(bad, H, 0.02, 50);
  CHECK(neg.gibbs_residual > 1e-2);
  CHECK(neg.gibbs_residual > 1e6 * rep.gibbs_residual);
  CHECK(neg.d_change > 10 * rep.d_change);
}

TEST_CASE("mean-field maximum-entropy residuals") {
  const PhaseGrid g = testing::torus(32);
  SUBCASE("uncoupled Gibbs pair") {
    MaxEntProblem p;
    p.representation = Representation::mean_field;
    p.hamiltonian = HamiltonianSpec::uncoupled(PhaseFunction::trig_harmonic(1.0, 1.0), 0.3 * pauli_x());
    p.grid = g;
    p.mu = 1.3;
    const EquilibriumResult r = gibbs_meanfield(p);
    const auto& m = std::get<MeanFieldState>(r.state);
    const MeanFieldResidual res = meanfield_maxent_residual(m.D, m.rho, build(p.hamiltonian, g), 1.3);
    CHECK(res.quantum < 1e-8);
    CHECK(res.classical < 1e-8);
  }
  SUBCASE("infinite temperature") {
    const HamiltonianFields H = build(HamiltonianSpec::nanowire(NanowireParams{}), g);
    const MeanFieldResidual res =
        meanfield_maxent_residual(ScalarField(g, 1, 1, 1.0 / g.area()), 0.5 * identity(2), H, 0.0);
    CHECK(res.quantum < 1e-12);
    CHECK(res.classical < 1e-12);
  }
  SUBCASE("coupled nanowire with a naive factorized ansatz") {
    const double mu = 1.0;
    const HamiltonianFields H = build(HamiltonianSpec::nanowire(NanowireParams{}), g);
    // marginals of the hybrid Gibbs operator exp(-mu H)
    ScalarField D(g);
    SmallMatrix rho = SmallMatrix::Zero(2, 2);
    for (std::size_t k = 0; k < g.points(); ++k) {
      const SmallMatrix e = matrix_function(H.H.block(k), [&](double x) { return std::exp(-mu * x); });
      D[k] = e.trace().real();
      rho += e;
    }
    D *= 1.0 / integrate(D);
    rho /= rho.trace().real();
    const MeanFieldResidual res = meanfield_maxent_residual(D, rho, H, mu);
    CHECK(std::max(res.quantum, res.classical) > 1e-3);
  }
}

TEST_CASE("unsupported Hamiltonians") {
  const PhaseGrid g = testing::torus(16);
  NanowireParams nw;
  nw.confinement = 0.3;
  MaxEntProblem p;
  p.hamiltonian = HamiltonianSpec::nanowire(nw);
  p.grid = g;
  p.mu = 1.0;
  CHECK_THROWS_AS(gibbs_conditional(p), UnsupportedError);
  CHECK_THROWS_AS(gibbs_uhlmann(p), UnsupportedError);
  CHECK_THROWS_AS(gibbs_meanfield(p), UnsupportedError);
  p.hamiltonian = HamiltonianSpec::tabulated(build(HamiltonianSpec::nanowire(nw), g).H);
  CHECK_THROWS_AS(gibbs_conditional(p), UnsupportedError);
}

TEST_CASE("property: returned equilibria are normalized, have Lambda = 1 and hit the target energy") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const PhaseGrid g = testing::torus(32);
  for (int t = 0; t < 12; ++t) {
    MaxEntProblem p;
    p.grid = g;
    p.branch = t % 2;
    const double amp = 0.1 + 0.4 * U(rng);
    if (t % 3 == 0)
      p.hamiltonian = zeta_sigma_z(amp);
    else if (t % 3 == 1)
      p.hamiltonian = HamiltonianSpec::pure_dephasing(PhaseFunction::trig_harmonic(1.0, 1.0),
                                                      PhaseFunction::sine_q(amp), pauli_z());
    else
      p.hamiltonian = HamiltonianSpec::nanowire(NanowireParams{});
    p.representation = (t % 3 != 1 && t % 4 == 3) ? Representation::uhlmann : Representation::conditional;
    // pick a target strictly inside the attainable range from a trial temperature
    MaxEntProblem trial = p;
    trial.mu = 0.3 + 2.0 * U(rng);
    const double target = solve_equilibrium(trial).energy;
    p.energy = target;
    const EquilibriumResult r = solve_equilibrium(p);
    CAPTURE(t);
    CHECK(r.lambda_deviation < 1e-8);
    CHECK(r.energy == doctest::Approx(target).epsilon(1e-8));
    CHECK(r.mu == doctest::Approx(*trial.mu).epsilon(1e-6));
    const double mass = std::visit([](const auto& s) -> double {
      if constexpr (requires { s.D; }) return integrate(s.D);
      return 0.0;
    }, r.state);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("property: the equilibrium beats constrained perturbations") {
  MaxEntProblem p;
  p.hamiltonian = HamiltonianSpec::pure_dephasing(PhaseFunction::trig_harmonic(1.0, 1.0), PhaseFunction::sine_q(0.2),
                                                  pauli_z());
  p.grid = testing::torus(32);
  p.mu = 2.0;
  p.branch = 1;
  const EquilibriumResult r = gibbs_conditional(p);
  const MaximalityReport m = maximality_probe(r, build(p.hamiltonian, p.grid), 50);
  CHECK(m.probes == 50);
  CHECK(m.violations == 0);
  CHECK(m.max_perturbed < m.entropy);
  CHECK(m.max_constraint_error < 1e-12);
}
