#include "mqc/hybrid_state.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mqc/linalg.hpp"

namespace mqc {

double vacuum_threshold(const ScalarField& D) { return 1e-12 * max_abs(D); }

ScalarField classical_density(const HybridDensity& P) {
  ScalarField D(P.grid());
  for (std::size_t k = 0; k < D.points(); ++k) D[k] = P.P.block(k).trace().real();
  return D;
}

SmallMatrix quantum_marginal(const HybridDensity& P) { return integrate_blocks(P.P); }

double purity(const SmallMatrix& rho) { return (rho * rho).trace().real(); }

HybridDensity compose(const ConditionalSplit& s) {
  if (!(s.D.grid() == s.psi.grid())) throw GridMismatch("compose: D and psi on different grids");
  const int n = s.dim();
  HybridDensity out{MatrixField(s.grid(), n, n)};
  for (std::size_t k = 0; k < s.D.points(); ++k) {
    const cplx* v = s.psi.at(k);
    cplx* o = out.P.at(k);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) o[a * n + b] = s.D[k] * v[a] * std::conj(v[b]);
  }
  return out;
}

HybridDensity compose(const UhlmannSplit& s) {
  if (!(s.D.grid() == s.W.grid())) throw GridMismatch("compose: D and W on different grids");
  const int n = s.dim();
  HybridDensity out{MatrixField(s.grid(), n, n)};
  for (std::size_t k = 0; k < s.D.points(); ++k) {
    const auto w = s.W.block(k);
    out.P.block(k) = s.D[k] * (w * w.adjoint());
  }
  return out;
}

void validate(const HybridDensity& P) {
  for (std::size_t k = 0; k < P.P.points(); ++k) {
    const SmallMatrix m = P.P.block(k);
    if (!is_hermitian(m)) throw InvalidInput("hybrid density is not Hermitian at node " + std::to_string(k));
    const auto e = hermitian_eigen(m, false);
    if (e.values[0] < -1e-10)
      throw InvalidInput("hybrid density has negative eigenvalue " + std::to_string(e.values[0]) + " at node " +
                         std::to_string(k));
  }
}

namespace {

void fix_gauge(SmallVector& v) {
  const double scale = v.cwiseAbs().maxCoeff();
  for (Eigen::Index a = 0; a < v.size(); ++a) {
    const double mag = std::abs(v[a]);
    if (mag > 1e-10 * scale) {
      v *= std::conj(v[a]) / mag;
      v[a] = mag;
      return;
    }
  }
}

}  // namespace

UhlmannSplit uhlmann_factor(const HybridDensity& P, int m, FactorReport* report) {
  const int n = P.dim();
  if (m < n) throw InvalidInput("uhlmann_factor requires ancilla dimension m >= n");
  if (m > kMaxDim) throw InvalidInput("ancilla dimension exceeds supported maximum");
  const PhaseGrid& g = P.grid();
  UhlmannSplit out{ScalarField(g), WaveOpField(g, n, m)};
  for (std::size_t k = 0; k < g.points(); ++k) out.D[k] = P.P.block(k).trace().real();
  const double eps = vacuum_threshold(out.D);

  double min_eig = std::numeric_limits<double>::infinity();
  std::vector<char> vacuum(g.points(), 0);
  for (std::size_t k = 0; k < g.points(); ++k) {
    SmallMatrix mk = P.P.block(k);
    if (!is_hermitian(mk)) throw InvalidInput("uhlmann_factor: non-Hermitian node " + std::to_string(k));
    mk = hermitian_part(mk);
    const auto e = hermitian_eigen(mk, false);
    min_eig = std::min(min_eig, e.values[0]);
    if (e.values[0] < -1e-10)
      throw InvalidInput("uhlmann_factor: negative eigenvalue " + std::to_string(e.values[0]) + " at node " +
                         std::to_string(k));
    const double D = out.D[k];
    if (!(D > eps)) {
      vacuum[k] = 1;
      continue;
    }
    auto w = out.W.block(k);
    w.setZero();
    for (int c = 0; c < n; ++c) {
      const int src = n - 1 - c;  // descending order
      const double lam = std::max(e.values[src], 0.0);
      SmallVector v = e.vectors.col(src);
      fix_gauge(v);
      w.col(c) = v * std::sqrt(lam / D);
    }
  }

  std::size_t continued = 0;
  for (int i = 0; i < g.nq(); ++i) {
    for (int j = 0; j < g.np(); ++j) {
      const std::size_t k = g.index(i, j);
      if (!vacuum[k]) continue;
      ++continued;
      std::size_t best = k;
      const int reach = std::max(g.nq(), g.np());
      for (int d = 1; d < reach && best == k; ++d) {
        const int cand[4][2] = {{i - d, j}, {i + d, j}, {i, j - d}, {i, j + d}};
        for (const auto& c : cand) {
          if ((c[0] != i && d >= g.nq()) || (c[1] != j && d >= g.np())) continue;
          const std::size_t kc = g.index(c[0], c[1]);
          if (!vacuum[kc]) {
            best = kc;
            break;
          }
        }
      }
      auto w = out.W.block(k);
      if (best != k) {
        w = out.W.block(best);
      } else {
        w.setZero();
        w(0, 0) = 1.0;
      }
    }
  }
  if (report) {
    report->continued_points = continued;
    report->min_eigenvalue = min_eig;
  }
  return out;
}

BerryData berry_data(const ComplexField& field) {
  const PhaseGrid& g = field.grid();
  const double hbar = g.hbar();
  const auto fq = partial_q(field);
  const auto fp = partial_p(field);
  BerryData out{{ScalarField(g), ScalarField(g)}, ScalarField(g), ScalarField(g)};
  const int nc = field.components();
  double lmin = std::numeric_limits<double>::infinity(), lmax = -lmin;
  for (std::size_t k = 0; k < g.points(); ++k) {
    const cplx* f = field.at(k);
    const cplx* a = fq.at(k);
    const cplx* b = fp.at(k);
    cplx wq = 0.0, wp = 0.0, cross = 0.0;
    for (int c = 0; c < nc; ++c) {
      wq += std::conj(f[c]) * a[c];
      wp += std::conj(f[c]) * b[c];
      cross += std::conj(a[c]) * b[c];
    }
    out.connection.q[k] = hbar * wq.imag();
    out.connection.p[k] = hbar * wp.imag();
    out.curvature[k] = 2.0 * hbar * cross.imag();
    out.Lambda[k] = 1.0 + out.curvature[k];
    lmin = std::min(lmin, out.Lambda[k]);
    lmax = std::max(lmax, out.Lambda[k]);
  }
  out.lambda_min = lmin;
  out.lambda_max = lmax;
  return out;
}

UhlmannSplit pad_to_uhlmann(const ConditionalSplit& s, int m) {
  const int n = s.dim();
  if (m < 1 || m > kMaxDim) throw InvalidInput("invalid ancilla dimension");
  UhlmannSplit out{s.D, WaveOpField(s.grid(), n, m)};
  for (std::size_t k = 0; k < s.D.points(); ++k)
    for (int a = 0; a < n; ++a) out.W.at(k)[a * m] = s.psi.at(k)[a];
  return out;
}

namespace {

template <class Split, class Wave>
void renormalize_impl(Split& s, Wave& w) {
  const int nc = w.components();
  for (std::size_t k = 0; k < w.points(); ++k) {
    cplx* v = w.at(k);
    double nrm = 0.0;
    for (int c = 0; c < nc; ++c) nrm += std::norm(v[c]);
    nrm = std::sqrt(nrm);
    if (nrm > 0.0)
      for (int c = 0; c < nc; ++c) v[c] /= nrm;
  }
  const double mass = integrate(s.D);
  if (mass > 0.0) s.D *= 1.0 / mass;
}

}  // namespace

void renormalize(ConditionalSplit& s) { renormalize_impl(s, s.psi); }
void renormalize(UhlmannSplit& s) { renormalize_impl(s, s.W); }

double factorization_distance(const HybridDensity& P) {
  const SmallMatrix rho = quantum_marginal(P);
  double acc = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) {
    const SmallMatrix m = P.P.block(k);
    acc += (m - m.trace().real() * rho).norm();
  }
  return acc * P.grid().cell_area();
}

}  // namespace mqc
