#include "mqc/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mqc/linalg.hpp"

namespace mqc {

// ------------------------------------------------------------ scalar functions

double SpectralFunction::operator()(double x) const {
  switch (kind) {
    case Kind::neg_x_log_x:
      return mqc::neg_x_log_x(x);
    case Kind::log:
      return clamped_log(x);
    case Kind::power:
      return clamped_pow(x, alpha);
    case Kind::quadratic:
      return x * x;
    case Kind::table: {
      if (table.empty()) throw InvalidInput("empty function table");
      if (x <= table.front().first) return table.front().second;
      if (x >= table.back().first) return table.back().second;
      const auto hi = std::lower_bound(table.begin(), table.end(), x,
                                       [](const std::pair<double, double>& e, double v) { return e.first < v; });
      const auto lo = hi - 1;
      const double t = (x - lo->first) / (hi->first - lo->first);
      return (1.0 - t) * lo->second + t * hi->second;
    }
  }
  return 0.0;
}

SpectralFunction SpectralFunction::from_name(const std::string& name) {
  if (name == "neg_x_log_x" || name == "neg_x_log_x_trace") return neg_x_log_x();
  if (name == "log") return log();
  if (name == "quadratic") return quadratic();
  if (name.rfind("power:", 0) == 0) {
    try {
      return power(std::stod(name.substr(6)));
    } catch (const std::exception&) {
      throw InvalidInput("bad power exponent in '" + name + "'");
    }
  }
  throw InvalidInput("unknown spectral function '" + name + "'");
}

namespace {

double spectral_trace(const SmallMatrix& A, const SpectralFunction& fn) {
  const auto e = hermitian_eigen(hermitian_part(A), false);
  double s = 0.0;
  for (Eigen::Index k = 0; k < e.values.size(); ++k) s += fn(e.values[k]);
  return s;
}

double max_value(const ScalarField& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, v);
  return m;
}

}  // namespace

double GammaFunction::operator()(const SmallMatrix& A, double x) const {
  switch (kind) {
    case Kind::phi:
      return spectral_trace(A, fn);
    case Kind::sigma:
      return fn(x);
    case Kind::renyi:
      return std::pow(std::max(x, kEigenClamp), 1.0 - alpha) *
             spectral_trace(A, SpectralFunction::power(alpha));
    case Kind::entropy:
      return spectral_trace(A, SpectralFunction::neg_x_log_x()) + clamped_log(x);
  }
  return 0.0;
}

// ------------------------------------------------------------------ functionals

double casimir_c1(const HybridDensity& P, const SpectralFunction& phi) {
  const ScalarField D = classical_density(P);
  const double eps = 1e-12 * max_value(D);
  double acc = 0.0;
  for (std::size_t k = 0; k < D.points(); ++k) {
    if (!(D[k] > eps)) continue;
    acc += D[k] * spectral_trace(P.P.block(k) / D[k], phi);
  }
  return acc * P.grid().cell_area();
}

namespace {

// Shared loop of the split functionals: integrand(D, W, Lambda) over the support.
template <class Fn>
SplitValue split_integral(const ScalarField& D, const ComplexField& W, Fn&& integrand) {
  const BerryData b = berry_data(W);
  const double eps = vacuum_threshold(D);
  SplitValue out;
  double acc = 0.0;
  for (std::size_t k = 0; k < D.points(); ++k) {
    if (!(D[k] > eps)) continue;
    if (!(b.Lambda[k] > 0.0)) out.lambda_positive = false;
    acc += integrand(D[k], W.block(k), b.Lambda[k]);
  }
  out.value = acc * D.grid().cell_area();
  return out;
}

}  // namespace

SplitValue casimir_c2(const ConditionalSplit& s, const SpectralFunction& sigma) {
  return split_integral(s.D, s.psi, [&](double D, const auto&, double L) { return D * sigma(L / D); });
}

SplitValue shannon_pure(const ConditionalSplit& s) { return casimir_c2(s, SpectralFunction::log()); }

double entropy_meanfield(const ScalarField& D, const SmallMatrix& rho) {
  double acc = 0.0;
  for (double v : D.values()) acc += neg_x_log_x(v);
  return von_neumann_entropy(rho) + acc * D.grid().cell_area();
}

double renyi_meanfield(const ScalarField& D, const SmallMatrix& rho, double alpha) {
  if (alpha == 1.0) throw InvalidInput("Renyi order alpha must differ from 1");
  double acc = 0.0;
  for (double v : D.values()) acc += clamped_pow(v, alpha);
  return (std::log(trace_power(rho, alpha)) + std::log(acc * D.grid().cell_area())) / (1.0 - alpha);
}

SplitValue entropy_uhlmann(const UhlmannSplit& s) {
  return split_integral(s.D, s.W, [](double D, const auto& w, double L) {
    const auto e = hermitian_eigen(D * (w * w.adjoint()), false);
    const double Lc = std::max(L, kEigenClamp);
    double v = 0.0;
    for (Eigen::Index k = 0; k < e.values.size(); ++k) {
      const double lam = e.values[k];
      if (lam > kEigenClamp) v -= lam * std::log(lam / Lc);
    }
    return v;
  });
}

SplitValue renyi_mqc(const UhlmannSplit& s, double alpha) {
  if (alpha == 1.0) throw InvalidInput("Renyi order alpha must differ from 1");
  SplitValue out = split_integral(s.D, s.W, [alpha](double D, const auto& w, double L) {
    const auto e = hermitian_eigen(D * (w * w.adjoint()), false);
    const double Lc = std::max(L, kEigenClamp);
    double v = 0.0;
    for (Eigen::Index k = 0; k < e.values.size(); ++k) v += clamped_pow(e.values[k] / Lc, alpha);
    return Lc * v;
  });
  out.value = std::log(out.value) / (1.0 - alpha);
  return out;
}

SplitValue casimir_general(const UhlmannSplit& s, const GammaFunction& gamma) {
  return split_integral(s.D, s.W,
                        [&](double D, const auto& w, double L) { return D * gamma(w * w.adjoint(), L / D); });
}

double energy(const HybridDensity& P, const HamiltonianFields& H) {
  double acc = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) acc += (P.P.block(k) * H.H.block(k)).trace().real();
  return acc * P.grid().cell_area();
}

double mass(const HybridDensity& P) { return integrate(classical_density(P)); }

// ------------------------------------------------------- functional derivatives

Functional Functional::mass() {
  Functional f;
  f.kind_ = Kind::mass;
  f.name_ = "mass";
  return f;
}

Functional Functional::energy(std::shared_ptr<const HamiltonianFields> H) {
  if (!H) throw InvalidInput("energy functional needs a Hamiltonian");
  Functional f;
  f.kind_ = Kind::energy;
  f.name_ = "energy";
  f.H_ = std::move(H);
  return f;
}

Functional Functional::c1(const SpectralFunction& phi) {
  Functional f;
  f.kind_ = Kind::c1;
  f.name_ = "C1";
  f.phi_ = phi;
  return f;
}

Functional Functional::second_moment_q() {
  Functional f;
  f.kind_ = Kind::second_moment_q;
  f.name_ = "second_moment_q";
  return f;
}

Functional Functional::purity() {
  Functional f;
  f.kind_ = Kind::purity;
  f.name_ = "purity";
  return f;
}

Functional Functional::probe(std::shared_ptr<const MatrixField> A, std::shared_ptr<const MatrixField> B) {
  if (!A || !B) throw InvalidInput("probe functional needs two fields");
  Functional f;
  f.kind_ = Kind::probe;
  f.name_ = "probe";
  f.A_ = std::move(A);
  f.B_ = std::move(B);
  return f;
}

double Functional::integrand(const PhaseGrid& g, std::size_t k, const SmallMatrix& Pk) const {
  switch (kind_) {
    case Kind::mass:
      return Pk.trace().real();
    case Kind::energy:
      return (Pk * H_->H.block(k)).trace().real();
    case Kind::c1: {
      const double D = Pk.trace().real();
      if (!(D > 0.0)) return 0.0;
      return D * spectral_trace(Pk / D, phi_);
    }
    case Kind::second_moment_q: {
      const double q = g.q(g.row_of(k));
      return q * q * Pk.trace().real();
    }
    case Kind::probe: {
      const double b = (B_->block(k) * Pk).trace().real();
      return (A_->block(k) * Pk).trace().real() + 0.5 * b * b;
    }
    case Kind::purity:
      break;
  }
  throw InvalidInput("functional '" + name_ + "' has no local integrand");
}

double Functional::operator()(const HybridDensity& P) const {
  if (kind_ == Kind::c1) {
    // Same vacuum convention as casimir_c1.
    return casimir_c1(P, phi_);
  }
  if (!local()) return mqc::purity(quantum_marginal(P));
  double acc = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) acc += integrand(P.grid(), k, P.P.block(k));
  return acc * P.grid().cell_area();
}

namespace {

std::vector<SmallMatrix> hermitian_basis(int n) {
  std::vector<SmallMatrix> basis;
  const double r = 1.0 / std::sqrt(2.0);
  for (int a = 0; a < n; ++a) {
    SmallMatrix e = SmallMatrix::Zero(n, n);
    e(a, a) = 1.0;
    basis.push_back(e);
  }
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      SmallMatrix e = SmallMatrix::Zero(n, n);
      e(a, b) = r;
      e(b, a) = r;
      basis.push_back(e);
      e(a, b) = cplx(0.0, r);
      e(b, a) = cplx(0.0, -r);
      basis.push_back(e);
    }
  return basis;
}

}  // namespace

MatrixField functional_derivative(const Functional& f, const HybridDensity& P, double rel_step,
                                  DerivativeReport* report) {
  if (f.kind() == Functional::Kind::mass) return derivative_mass(P);
  const PhaseGrid& g = P.grid();
  const int n = P.dim();
  const auto basis = hermitian_basis(n);
  double maxnorm = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) maxnorm = std::max(maxnorm, P.P.block(k).norm());
  if (!(maxnorm > 0.0)) maxnorm = 1.0;

  // Global kinds: only purity, whose variation at node k is a rank-one update of rho.
  SmallMatrix rho;
  if (!f.local()) rho = quantum_marginal(P);
  const double dA = g.cell_area();
  auto value_at = [&](std::size_t k, const SmallMatrix& pk) -> double {
    if (f.local()) return f.integrand(g, k, pk);
    const SmallMatrix r = rho + dA * (pk - P.P.block(k));
    return mqc::purity(r) / dA;
  };

  MatrixField out(g, n, n);
  double worst_gap = 0.0, worst_val = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) {
    const SmallMatrix pk = P.P.block(k);
    const double nk = pk.norm();
    const double h = rel_step * (nk > 1e-6 * maxnorm ? nk : 1e-6 * maxnorm);
    SmallMatrix acc = SmallMatrix::Zero(n, n);
    for (const auto& e : basis) {
      const double d1 = (value_at(k, pk + h * e) - value_at(k, pk - h * e)) / (2.0 * h);
      const double d2 = (value_at(k, pk + 0.5 * h * e) - value_at(k, pk - 0.5 * h * e)) / h;
      const double rich = (4.0 * d2 - d1) / 3.0;
      worst_gap = std::max(worst_gap, std::abs(d2 - d1));
      worst_val = std::max(worst_val, std::abs(rich));
      acc += rich * e;
    }
    out.block(k) = acc;
  }
  if (report) report->richardson_gap = worst_val > 0.0 ? worst_gap / worst_val : 0.0;
  return out;
}

MatrixField derivative_mass(const HybridDensity& P) {
  const int n = P.dim();
  MatrixField out(P.grid(), n, n);
  for (std::size_t k = 0; k < out.points(); ++k) out.block(k).setIdentity();
  return out;
}

MatrixField derivative_energy(const HamiltonianFields& H) { return H.H; }

BracketValue hybrid_bracket(const MatrixField& F, const MatrixField& G, const HybridDensity& P,
                            double trace_regularization) {
  F.require_same(P.P);
  G.require_same(P.P);
  const PhaseGrid& g = P.grid();
  const ScalarField D = classical_density(P);
  const double maxD = max_value(D);
  const double eps = trace_regularization * maxD;
  const double vac = 1e-12 * maxD;
  const auto Fq = partial_q(F), Fp = partial_p(F), Gq = partial_q(G), Gp = partial_p(G);
  const cplx i_hbar(0.0, 1.0 / g.hbar());
  const int n = P.dim();
  BracketValue out;
  for (std::size_t k = 0; k < g.points(); ++k) {
    const auto p = P.P.block(k);
    double v = 0.0;
    const double pn = p.norm();
    if (D[k] > vac) {
      const double a = (p * Fq.block(k)).trace().real(), b = (p * Gp.block(k)).trace().real();
      const double c = (p * Fp.block(k)).trace().real(), d = (p * Gq.block(k)).trace().real();
      v = (a * b - c * d) / (D[k] + eps);
      out.bound += pn * pn / (D[k] + eps) *
                   (Fq.block(k).norm() * Gp.block(k).norm() + Fp.block(k).norm() * Gq.block(k).norm());
    }
    const SmallMatrix f = F.block(k), gg = G.block(k);
    v -= (p * (i_hbar * commutator(f, gg))).trace().real();
    out.value += v;
    out.scale += std::abs(v);
    const SmallMatrix f0 = f - (f.trace() / double(n)) * SmallMatrix::Identity(n, n);
    const SmallMatrix g0 = gg - (gg.trace() / double(n)) * SmallMatrix::Identity(n, n);
    out.bound += 2.0 / g.hbar() * pn * f0.norm() * g0.norm();
  }
  out.value *= g.cell_area();
  out.scale *= g.cell_area();
  out.bound *= g.cell_area();
  return out;
}

BracketValue hybrid_bracket(const Functional& f, const Functional& g, const HybridDensity& P) {
  return hybrid_bracket(functional_derivative(f, P), functional_derivative(g, P), P);
}

ConsistencyReport bracket_consistency(const Functional& f, const HybridDensity& P, const HamiltonianFields& H) {
  const MatrixField F = functional_derivative(f, P);
  const BracketValue b = hybrid_bracket(F, derivative_energy(H), P);
  const HybridDensity T = ehrenfest_rhs(P, H);
  double chain = 0.0, chain_scale = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) {
    const double v = (F.block(k) * T.P.block(k)).trace().real();
    chain += v;
    chain_scale += std::abs(v);
  }
  ConsistencyReport r;
  r.bracket = b.value;
  r.chain = chain * P.grid().cell_area();
  r.scale = std::max(b.scale, chain_scale * P.grid().cell_area());
  r.residual = r.scale > 0.0 ? std::abs(r.bracket - r.chain) / r.scale : std::abs(r.bracket - r.chain);
  return r;
}

UhlmannSplit split_flow(const UhlmannSplit& s, const MatrixField& F) {
  HamiltonianFields HF{F, partial_q(F), partial_p(F), true};
  return uhlmann_rhs(s, HF);
}

namespace {

// Pointwise Casimir integrand D Gamma(W W^dagger, Lambda / D) on the support of the base state.
ScalarField general_integrand(const UhlmannSplit& s, const GammaFunction& gamma, const std::vector<char>& support) {
  const BerryData b = berry_data(s.W);
  ScalarField out(s.grid());
  for (std::size_t k = 0; k < out.points(); ++k) {
    if (!support[k]) continue;
    const auto w = s.W.block(k);
    out[k] = s.D[k] * gamma(w * w.adjoint(), b.Lambda[k] / s.D[k]);
  }
  return out;
}

}  // namespace

CasimirProbe casimir_rate(const UhlmannSplit& s, const MatrixField& F, const GammaFunction& gamma) {
  const UhlmannSplit T = split_flow(s, F);
  const double eps_D = vacuum_threshold(s.D);
  std::vector<char> support(s.D.points());
  double maxD = 0.0, rateD = 0.0, rateW = 0.0;
  for (std::size_t k = 0; k < s.D.points(); ++k) {
    support[k] = s.D[k] > eps_D;
    maxD = std::max(maxD, s.D[k]);
    rateD = std::max(rateD, std::abs(T.D[k]));
    rateW = std::max(rateW, T.W.block(k).norm());
  }
  const double tau = std::max(rateD / maxD, rateW);
  if (!(tau > 0.0)) return {};
  const double h = 1e-3 / tau;

  auto shifted = [&](double a) {
    UhlmannSplit x = s;
    x.axpy(a, T);
    return std::make_pair(general_integrand(x, gamma, support), berry_data(x.W).Lambda);
  };
  const auto p1 = shifted(h), m1 = shifted(-h), p2 = shifted(0.5 * h), m2 = shifted(-0.5 * h);
  auto richardson = [h](double a1, double b1, double a2, double b2) {
    return (4.0 * (a2 - b2) / h - (a1 - b1) / (2.0 * h)) / 3.0;
  };
  const ScalarField L = berry_data(s.W).Lambda;
  const int nc = s.W.components();
  CasimirProbe out;
  for (std::size_t k = 0; k < s.D.points(); ++k) {
    const double r = richardson(p1.first[k], m1.first[k], p2.first[k], m2.first[k]);
    out.rate += r;
    out.scale += std::abs(r);
    if (!support[k]) continue;

    // Chain-rule bound through the local arguments (D, Lambda, W) of the integrand.
    const double rate_L = richardson(p1.second[k], m1.second[k], p2.second[k], m2.second[k]);
    const SmallMatrix w = s.W.block(k);
    auto c = [&](double D, double Lk, const SmallMatrix& wk) { return D * gamma(wk * wk.adjoint(), Lk / D); };
    const double hD = 1e-6 * s.D[k], hL = 1e-6 * std::max(std::abs(L[k]), 1.0), hW = 1e-6 * std::max(w.norm(), 1e-3);
    const double dD = (c(s.D[k] + hD, L[k], w) - c(s.D[k] - hD, L[k], w)) / (2.0 * hD);
    const double dL = (c(s.D[k], L[k] + hL, w) - c(s.D[k], L[k] - hL, w)) / (2.0 * hL);
    double gw2 = 0.0;
    for (int e = 0; e < nc; ++e) {
      for (const cplx dir : {cplx(1.0, 0.0), cplx(0.0, 1.0)}) {
        SmallMatrix wp = w, wm = w;
        const int r0 = e / s.W.cols(), c0 = e % s.W.cols();
        wp(r0, c0) += hW * dir;
        wm(r0, c0) -= hW * dir;
        const double gdir = (c(s.D[k], L[k], wp) - c(s.D[k], L[k], wm)) / (2.0 * hW);
        gw2 += gdir * gdir;
      }
    }
    out.bound += std::abs(dD * T.D[k]) + std::abs(dL * rate_L) + std::sqrt(gw2) * T.W.block(k).norm();
  }
  out.rate *= s.grid().cell_area();
  out.scale *= s.grid().cell_area();
  out.bound *= s.grid().cell_area();
  return out;
}

CasimirProbe casimir_rate(const ConditionalSplit& s, const MatrixField& F, const SpectralFunction& sigma) {
  GammaFunction gamma{GammaFunction::Kind::sigma, sigma};
  return casimir_rate(pad_to_uhlmann(s, 1), F, gamma);
}

// ---------------------------------------------------------------- random fields

MatrixField random_hermitian_field(const PhaseGrid& g, int n, int kmax, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double wq = 2.0 * std::numbers::pi / g.length_q(), wp = 2.0 * std::numbers::pi / g.length_p();
  MatrixField out(g, n, n);
  for (int kq = -kmax; kq <= kmax; ++kq) {
    for (int kp = 0; kp <= kmax; ++kp) {
      if (kp == 0 && kq < 0) continue;
      SmallMatrix c(n, n);
      for (int a = 0; a < n; ++a) {
        c(a, a) = u(rng);
        for (int b = a + 1; b < n; ++b) {
          c(a, b) = cplx(u(rng), u(rng));
          c(b, a) = std::conj(c(a, b));
        }
      }
      const double ph = phase(rng);
      const double weight = amplitude / (1.0 + kq * kq + kp * kp);
      for (int i = 0; i < g.nq(); ++i)
        for (int j = 0; j < g.np(); ++j)
          out.block(g.index(i, j)) += (weight * std::cos(kq * wq * g.q(i) + kp * wp * g.p(j) + ph)) * c;
    }
  }
  return out;
}

UhlmannSplit random_mixed_split(const PhaseGrid& g, int n, std::uint64_t seed, double twist, double spread) {
  const MatrixField K = random_hermitian_field(g, n, 2, seed, twist);
  const MatrixField S = random_hermitian_field(g, n + 1, 2, seed + 1, spread);
  UhlmannSplit out{ScalarField(g), WaveOpField(g, n, n)};
  for (std::size_t k = 0; k < g.points(); ++k) {
    const auto s = S.block(k);
    out.D[k] = std::exp(s(n, n).real());
    const auto e = hermitian_eigen(K.block(k), false);
    RealVector ph = e.values;
    SmallMatrix U = e.vectors * ph.unaryExpr([](double x) { return std::exp(cplx(0.0, x)); }).asDiagonal() *
                    e.vectors.adjoint();
    RealVector lam(n);
    for (int a = 0; a < n; ++a) lam[a] = std::exp(s(a, a).real());
    lam /= lam.sum();
    out.W.block(k) = U * lam.cwiseSqrt().cast<cplx>().asDiagonal();
  }
  out.D *= 1.0 / integrate(out.D);
  return out;
}

// ---------------------------------------------------------------- Poincare loop

LoopTracer LoopTracer::circle(double qc, double pc, double radius, int K) {
  if (K < 5) throw InvalidInput("loop needs at least 5 points");
  LoopTracer l;
  l.q.resize(K);
  l.p.resize(K);
  for (int k = 0; k < K; ++k) {
    const double th = 2.0 * std::numbers::pi * k / K;
    l.q[k] = qc + radius * std::cos(th);
    l.p[k] = pc + radius * std::sin(th);
  }
  return l;
}

LoopTracer& LoopTracer::axpy(double a, const LoopTracer& x) {
  for (std::size_t k = 0; k < q.size(); ++k) {
    q[k] += a * x.q[k];
    p[k] += a * x.p[k];
  }
  return *this;
}

double poincare_integral(const ConditionalSplit& s, const LoopTracer& loop) {
  const double hbar = s.grid().hbar();
  const auto psi_q = partial_q(s.psi), psi_p = partial_p(s.psi);
  const int K = static_cast<int>(loop.size());
  auto at = [K](const std::vector<double>& x, int k) { return x[((k % K) + K) % K]; };
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    const double q = loop.q[k], p = loop.p[k];
    const auto v = interpolate(s.psi, q, p);
    const auto vq = interpolate(psi_q, q, p);
    const auto vp = interpolate(psi_p, q, p);
    const double n2 = v.squaredNorm();
    const double Aq = p * n2 - hbar * (v.adjoint() * vq)(0, 0).imag();
    const double Ap = -hbar * (v.adjoint() * vp)(0, 0).imag();
    const double dq = (at(loop.q, k - 2) - 8.0 * at(loop.q, k - 1) + 8.0 * at(loop.q, k + 1) - at(loop.q, k + 2)) / 12.0;
    const double dp = (at(loop.p, k - 2) - 8.0 * at(loop.p, k - 1) + 8.0 * at(loop.p, k + 1) - at(loop.p, k + 2)) / 12.0;
    acc += Aq * dq + Ap * dp;
  }
  return acc;
}

namespace {

struct LoopState {
  ConditionalSplit s;
  LoopTracer loop;
  LoopState& axpy(double a, const LoopState& x) {
    s.axpy(a, x.s);
    loop.axpy(a, x.loop);
    return *this;
  }
};

}  // namespace

LoopRun poincare_run(const ConditionalSplit& s, const LoopTracer& loop, const HamiltonianFields& H,
                     const StepperConfig& cfg,
                     const std::function<void(double, const ConditionalSplit&, double)>& on_sample) {
  const int every = std::max(1, cfg.sample_every);
  LoopState y{s, loop};
  LoopRun run;
  run.times.push_back(0.0);
  run.values.push_back(poincare_integral(s, loop));
  if (on_sample) on_sample(0.0, s, run.values.back());
  const double hmin = std::min(H.grid().dq(), H.grid().dp());
  double step_speed = 0.0;
  auto rhs = [&](const LoopState& x) {
    RhsInfo info;
    LoopState out{conditional_rhs(x.s, H, &info), x.loop};
    step_speed = std::max(step_speed, info.max_speed);
    const VectorField2 v = ehrenfest_velocity(x.s.psi, H);
    for (std::size_t k = 0; k < x.loop.size(); ++k) {
      out.loop.q[k] = interpolate(v.q, x.loop.q[k], x.loop.p[k])(0, 0);
      out.loop.p[k] = interpolate(v.p, x.loop.q[k], x.loop.p[k])(0, 0);
    }
    return out;
  };
  for (int step = 1; step <= cfg.steps; ++step) {
    step_speed = 0.0;
    LoopState next = rk4_step(y, cfg.dt, rhs);
    const double cfl = cfg.dt * step_speed / hmin;
    run.max_cfl = std::max(run.max_cfl, cfl);
    if (cfl >= 0.5) {
      run.aborted = true;
      run.abort_reason = "CFL guard exceeded: " + std::to_string(cfl) + " at step " + std::to_string(step);
      break;
    }
    if (cfl > 0.35 && run.warnings.empty()) run.warnings.push_back("CFL number " + std::to_string(cfl) + " above 0.35");
    if (!all_finite(ModelState(next.s))) {
      run.aborted = true;
      run.abort_reason = "non-finite state at step " + std::to_string(step);
      break;
    }
    y = std::move(next);
    run.steps_taken = step;
    if (step % every == 0 || step == cfg.steps) {
      run.times.push_back(step * cfg.dt);
      run.values.push_back(poincare_integral(y.s, y.loop));
      if (on_sample) on_sample(run.times.back(), y.s, run.values.back());
    }
  }
  run.state = std::move(y.s);
  run.loop = std::move(y.loop);
  return run;
}

std::vector<double> lambda_transport_residual(const std::vector<ConditionalSplit>& samples,
                                              const std::vector<double>& times, const HamiltonianFields& H) {
  if (samples.size() != times.size()) throw InvalidInput("samples and times differ in length");
  std::vector<double> out;
  if (samples.size() < 3) return out;
  std::vector<ScalarField> L;
  L.reserve(samples.size());
  for (const auto& s : samples) L.push_back(berry_data(s.psi).Lambda);
  for (std::size_t k = 1; k + 1 < samples.size(); ++k) {
    const VectorField2 v = ehrenfest_velocity(samples[k].psi, H);
    ScalarField r = divergence(L[k], v.q, v.p);
    const double inv = 1.0 / (times[k + 1] - times[k - 1]);
    r.axpy(inv, L[k + 1]);
    r.axpy(-inv, L[k - 1]);
    double acc = 0.0;
    for (double x : r.values()) acc += x * x;
    out.push_back(std::sqrt(acc * r.grid().cell_area()));
  }
  return out;
}

// ---------------------------------------------------------------- diagnostics

DiagnosticRow standard_diagnostics(ModelKind kind, double t, const ModelState& state, const HamiltonianFields& H,
                                   const DiagnosticOptions& opt) {
  DiagnosticRow row;
  row.t = t;
  const auto c1fn = SpectralFunction::neg_x_log_x();
  auto fill_split = [&](const UhlmannSplit& u, const HybridDensity& P) {
    row.mass = integrate(u.D);
    row.energy = energy(P, H);
    row.C1 = casimir_c1(P, c1fn);
    row.C2 = casimir_general(u, GammaFunction{GammaFunction::Kind::sigma, SpectralFunction::log()}).value;
    row.S_uhlmann = entropy_uhlmann(u).value;
    row.renyi = renyi_mqc(u, opt.renyi_alpha).value;
    row.purity = purity(quantum_marginal(P));
    const BerryData b = berry_data(u.W);
    row.lambda_min = b.lambda_min;
    row.lambda_max = b.lambda_max;
  };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, MeanFieldState>) {
          row.mass = integrate(s.D);
          double e = 0.0;
          for (std::size_t k = 0; k < s.D.points(); ++k) e += s.D[k] * (s.rho * H.H.block(k)).trace().real();
          row.energy = e * s.grid().cell_area();
          const double tr = s.rho.trace().real();
          row.C1 = integrate(s.D) * tr * spectral_trace(s.rho / tr, c1fn);
          row.S_uhlmann = entropy_meanfield(s.D, s.rho);
          row.renyi = renyi_meanfield(s.D, s.rho, opt.renyi_alpha);
          row.purity = purity(s.rho);
        } else if constexpr (std::is_same_v<S, HybridDensity>) {
          row.mass = mass(s);
          row.energy = kind == ModelKind::beyond_ehrenfest ? beyond_energy(s, H) : energy(s, H);
          row.C1 = casimir_c1(s, c1fn);
          row.purity = purity(quantum_marginal(s));
        } else if constexpr (std::is_same_v<S, ConditionalSplit>) {
          fill_split(pad_to_uhlmann(s, 1), compose(s));
          row.S_pure = shannon_pure(s).value;
        } else {
          fill_split(s, compose(s));
        }
      },
      state);
  return row;
}

}  // namespace mqc
