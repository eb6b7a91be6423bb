#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "mqc/grid.hpp"
#include "mqc/hybrid_state.hpp"
#include "mqc/linalg.hpp"

namespace testing {

inline constexpr double kPi = std::numbers::pi;

inline mqc::PhaseGrid torus(int n, double hbar = 1.0) { return mqc::PhaseGrid(-kPi, kPi, -kPi, kPi, n, n, hbar); }

inline double sup_err(const mqc::ScalarField& a, const mqc::ScalarField& b) {
  double e = 0.0;
  for (std::size_t k = 0; k < a.points(); ++k) e = std::max(e, std::abs(a[k] - b[k]));
  return e;
}

/// Random Hermitian n x n matrix with entries of size ~scale.
inline mqc::SmallMatrix random_hermitian(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  mqc::SmallMatrix m(n, n);
  for (int i = 0; i < n; ++i) {
    m(i, i) = N(rng);
    for (int j = i + 1; j < n; ++j) {
      m(i, j) = {N(rng), N(rng)};
      m(j, i) = std::conj(m(i, j));
    }
  }
  return m;
}

/// Random density matrix with full rank.
inline mqc::SmallMatrix random_density(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> N(0.0, 1.0);
  mqc::SmallMatrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = {N(rng), N(rng)};
  mqc::SmallMatrix r = a * a.adjoint() + 0.05 * mqc::identity(n);
  return r / r.trace().real();
}

inline mqc::ScalarField gaussian(const mqc::PhaseGrid& g, double qc, double pc, double s) {
  return mqc::sample(g, [&](double q, double p) {
    return std::exp(-((q - qc) * (q - qc) + (p - pc) * (p - pc)) / (2 * s * s)) / (2 * kPi * s * s);
  });
}

/// Smooth band-limited real field from random Fourier amplitudes with |k| <= kmax.
inline mqc::ScalarField band_limited(const mqc::PhaseGrid& g, std::uint64_t seed, int kmax = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 2 * kPi);
  struct Mode { int a, b; double amp, ph; };
  std::vector<Mode> modes;
  for (int a = -kmax; a <= kmax; ++a)
    for (int b = -kmax; b <= kmax; ++b) modes.push_back({a, b, N(rng) / (1.0 + a * a + b * b), U(rng)});
  const double wq = 2 * kPi / g.length_q(), wp = 2 * kPi / g.length_p();
  return mqc::sample(g, [&](double q, double p) {
    double s = 0.0;
    for (const auto& m : modes) s += m.amp * std::cos(m.a * wq * q + m.b * wp * p + m.ph);
    return s;
  });
}

}  // namespace testing

namespace testing {

/// Periodic bump exp(kappa (cos(q - qc) + cos(p - pc))) normalized to unit mass.
inline mqc::ScalarField von_mises(const mqc::PhaseGrid& g, double qc, double pc, double kappa) {
  mqc::ScalarField D = mqc::sample(g, [&](double q, double p) {
    return std::exp(kappa * (std::cos(q - qc) + std::cos(p - pc) - 2.0));
  });
  D *= 1.0 / mqc::integrate(D);
  return D;
}

/// Unit-norm two-level field (cos a, e^{ib} sin a) with smooth random a, b.
inline mqc::StateField smooth_state(const mqc::PhaseGrid& g, std::uint64_t seed, double amp = 0.5) {
  const mqc::ScalarField a = band_limited(g, seed, 1), b = band_limited(g, seed + 1, 1);
  mqc::StateField psi(g, 2, 1);
  for (std::size_t k = 0; k < g.points(); ++k) {
    psi.at(k)[0] = std::cos(amp * a[k] + 0.4);
    psi.at(k)[1] = std::polar(std::sin(amp * a[k] + 0.4), b[k]);
  }
  return psi;
}

inline mqc::ConditionalSplit smooth_split(const mqc::PhaseGrid& g, std::uint64_t seed, double amp = 0.5) {
  return {von_mises(g, 0.3, -0.2, 2.0), smooth_state(g, seed, amp)};
}

inline double field_distance(const mqc::MatrixField& a, const mqc::MatrixField& b) {
  double e = 0.0;
  for (std::size_t k = 0; k < a.points(); ++k) e = std::max(e, (a.block(k) - b.block(k)).norm());
  return e;
}

inline double field_norm(const mqc::MatrixField& a) {
  double e = 0.0;
  for (std::size_t k = 0; k < a.points(); ++k) e = std::max(e, a.block(k).norm());
  return e;
}

}  // namespace testing
