#include "mqc/equilibria.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mqc/linalg.hpp"

namespace mqc {

std::string to_string(Representation r) {
  switch (r) {
    case Representation::mean_field:
      return "mean_field";
    case Representation::conditional:
      return "conditional";
    case Representation::uhlmann:
      return "uhlmann";
  }
  return "?";
}

Representation representation_from_string(const std::string& name) {
  if (name == "mean_field" || name == "meanfield") return Representation::mean_field;
  if (name == "conditional") return Representation::conditional;
  if (name == "uhlmann") return Representation::uhlmann;
  throw InvalidInput("unknown representation '" + name + "'");
}

namespace {

constexpr double kSeamMassTolerance = 1e-10;
constexpr double kMinBranchOverlap = 0.9;

bool zeta_like(const HamiltonianSpec& spec) {
  if (spec.kind() == HamiltonianKind::zeta_composed) return true;
  return spec.kind() == HamiltonianKind::nanowire && spec.nanowire_params() &&
         spec.nanowire_params()->confinement == 0.0;
}

bool dephasing_like(const HamiltonianSpec& spec) {
  return spec.kind() == HamiltonianKind::pure_dephasing || spec.kind() == HamiltonianKind::uncoupled;
}

/// Operator whose constant eigenvectors diagonalize a dephasing Hamiltonian.
SmallMatrix dephasing_operator(const HamiltonianSpec& spec) {
  return spec.kind() == HamiltonianKind::uncoupled ? spec.quantum_part() : spec.dephasing_operator();
}

double min_value(const ScalarField& f) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : f.values()) m = std::min(m, v);
  return m;
}

/// Mass fraction in the two outermost node rows/columns.
double seam_mass_fraction(const ScalarField& D) {
  const PhaseGrid& g = D.grid();
  double band = 0.0, total = 0.0;
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) {
      const double v = std::abs(D(i, j));
      total += v;
      if (i < 2 || i >= g.nq() - 2 || j < 2 || j >= g.np() - 2) band += v;
    }
  return total > 0.0 ? band / total : 0.0;
}

void check_normalizable(const ScalarField& D, bool periodic) {
  if (periodic) return;
  const double frac = seam_mass_fraction(D);
  if (frac > kSeamMassTolerance) {
    std::ostringstream os;
    os << "non-normalizable Gibbs profile: mass fraction " << frac << " within two nodes of the domain seam exceeds "
       << kSeamMassTolerance;
    throw RangeError(os.str());
  }
}

void require_mu_or_energy(const MaxEntProblem& p) {
  if (p.mu.has_value() == p.energy.has_value())
    throw InvalidInput("equilibrium problem needs exactly one of 'E' and 'mu'");
  if (p.mu && !(*p.mu >= 0.0)) throw InvalidInput("equilibrium: mu must be non-negative");
}

/// Weighted spectrum sum_k w_k exp(-mu e_k); energies are the Gibbs averages.
struct GibbsSpectrum {
  std::vector<double> weight, level;
  double e_min = std::numeric_limits<double>::infinity();

  void add(double w, double e) {
    if (w <= 0.0) return;
    weight.push_back(w);
    level.push_back(e);
    e_min = std::min(e_min, e);
  }
  double mean(double mu) const {
    double z = 0.0, ze = 0.0;
    for (std::size_t k = 0; k < weight.size(); ++k) {
      const double b = weight[k] * std::exp(-mu * (level[k] - e_min));
      z += b;
      ze += b * level[k];
    }
    return ze / z;
  }
};

/// Conditional branch profile h = <psi, H psi> and psi.
struct BranchField {
  StateField psi;
  ScalarField h;
  std::vector<std::string> notes;
};

BranchField conditional_branch(const MaxEntProblem& problem, const HamiltonianFields& H) {
  const PhaseGrid& g = problem.grid;
  const int n = H.dim();
  if (problem.branch < 0 || problem.branch >= n)
    throw InvalidInput("equilibrium branch " + std::to_string(problem.branch) + " outside [0, " +
                       std::to_string(n) + ")");
  BranchField out;
  const HamiltonianSpec& spec = problem.hamiltonian;
  if (dephasing_like(spec)) {
    const HermitianEigen e = hermitian_eigen(dephasing_operator(spec));
    SmallVector v = e.vectors.col(problem.branch);
    for (Eigen::Index a = 0; a < v.size(); ++a)
      if (std::abs(v[a]) > 1e-10) {
        v *= std::conj(v[a]) / std::abs(v[a]);
        break;
      }
    out.psi = StateField(g, n, 1);
    out.h = ScalarField(g);
    for (std::size_t k = 0; k < g.points(); ++k) {
      auto dst = out.psi.at(k);
      for (int a = 0; a < n; ++a) dst[a] = v[a];
      const SmallMatrix hk = H.H.block(k);
      out.h[k] = (v.adjoint() * hk * v)(0, 0).real();
    }
    std::ostringstream os;
    os << "dephasing branch a_n = " << e.values[problem.branch];
    out.notes.push_back(os.str());
    return out;
  }
  if (zeta_like(spec)) {
    EigenFields ef = eigenfields(H.H);
    const double ov = ef.min_neighbor_overlap[problem.branch];
    if (ov < kMinBranchOverlap) {
      std::ostringstream os;
      os << "eigenvalue crossing: branch " << problem.branch << " is not continuable (min neighbour overlap " << ov
         << ", " << ef.crossings.size() << " degenerate nodes)";
      throw RangeError(os.str());
    }
    if (!ef.crossings.empty())
      out.notes.push_back(std::to_string(ef.crossings.size()) +
                          " degenerate nodes crossed with a continuous eigenvector field");
    out.psi = std::move(ef.states[problem.branch]);
    out.h = std::move(ef.energies[problem.branch]);
    return out;
  }
  throw UnsupportedError("conditional maximum-entropy equilibria are available only for zeta-composed and "
                         "pure-dephasing Hamiltonians, not '" + to_string(spec.kind()) + "'");
}

double lambda_deviation_on_support(const ScalarField& Lambda, const ScalarField& D) {
  const double eps = vacuum_threshold(D);
  double dev = 0.0;
  for (std::size_t k = 0; k < D.points(); ++k)
    if (D[k] > eps) dev = std::max(dev, std::abs(Lambda[k] - 1.0));
  return dev;
}

GibbsSpectrum conditional_spectrum(const ScalarField& Lambda, const ScalarField& h) {
  GibbsSpectrum s;
  const double dA = h.grid().cell_area();
  for (std::size_t k = 0; k < h.points(); ++k) s.add(Lambda[k] * dA, h[k]);
  return s;
}

void check_uhlmann_kind(const HamiltonianSpec& spec) {
  if (!zeta_like(spec) && spec.kind() != HamiltonianKind::uncoupled)
    throw UnsupportedError("Uhlmann maximum-entropy equilibria are available only for zeta-composed and "
                           "uncoupled Hamiltonians, not '" + to_string(spec.kind()) + "'");
}

GibbsSpectrum uhlmann_spectrum(const HamiltonianFields& H) {
  GibbsSpectrum s;
  const double dA = H.grid().cell_area();
  for (std::size_t k = 0; k < H.H.points(); ++k) {
    const HermitianEigen e = hermitian_eigen(H.H.block(k));
    for (Eigen::Index a = 0; a < e.values.size(); ++a) s.add(dA, e.values[a]);
  }
  return s;
}

void check_meanfield_kind(const HamiltonianSpec& spec) {
  if (spec.kind() != HamiltonianKind::uncoupled)
    throw UnsupportedError("mean-field maximum-entropy equilibria are available only for uncoupled Hamiltonians, "
                           "not '" + to_string(spec.kind()) + "'");
}

struct MeanFieldSpectra {
  GibbsSpectrum classical, quantum;
};

MeanFieldSpectra meanfield_spectra(const HamiltonianSpec& spec, const PhaseGrid& g) {
  MeanFieldSpectra s;
  const PhaseFunction& HC = spec.classical_part();
  const double dA = g.cell_area();
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) s.classical.add(dA, HC.empty() ? 0.0 : HC.value(g.q(i), g.p(j)));
  const HermitianEigen e = hermitian_eigen(spec.quantum_part());
  for (Eigen::Index a = 0; a < e.values.size(); ++a) s.quantum.add(1.0, e.values[a]);
  return s;
}

double resolve_mu(const MaxEntProblem& problem) {
  require_mu_or_energy(problem);
  return problem.mu ? *problem.mu : solve_mu(problem).mu;
}

/// exp(-mu (x - shift)) applied to a Hermitian matrix.
SmallMatrix gibbs_matrix(const SmallMatrix& h, double mu, double shift) {
  return matrix_function(h, [&](double x) { return std::exp(-mu * (x - shift)); });
}

}  // namespace

// ---------------------------------------------------------------- constructions

EquilibriumResult gibbs_conditional(const MaxEntProblem& problem) {
  require_mu_or_energy(problem);
  const HamiltonianFields H = build(problem.hamiltonian, problem.grid);
  BranchField br = conditional_branch(problem, H);
  const BerryData berry = berry_data(br.psi);
  const double mu = resolve_mu(problem);

  const PhaseGrid& g = problem.grid;
  const double shift = min_value(br.h);
  ScalarField D(g);
  for (std::size_t k = 0; k < g.points(); ++k) D[k] = berry.Lambda[k] * std::exp(-mu * (br.h[k] - shift));
  const double z_shifted = integrate(D);
  if (!(z_shifted > 0.0) || !std::isfinite(z_shifted))
    throw NumericalAbort("conditional Gibbs profile has non-positive or non-finite weight");
  D *= 1.0 / z_shifted;
  check_normalizable(D, H.periodic);

  EquilibriumResult res;
  res.representation = Representation::conditional;
  res.mu = mu;
  res.Z = z_shifted * std::exp(-mu * shift);
  res.branch = problem.branch;
  res.lambda_deviation = lambda_deviation_on_support(berry.Lambda, D);
  double e = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) e += D[k] * br.h[k];
  res.energy = e * g.cell_area();
  res.notes = std::move(br.notes);
  res.state = ConditionalSplit{std::move(D), std::move(br.psi)};
  return res;
}

EquilibriumResult gibbs_uhlmann(const MaxEntProblem& problem) {
  require_mu_or_energy(problem);
  check_uhlmann_kind(problem.hamiltonian);
  const HamiltonianFields H = build(problem.hamiltonian, problem.grid);
  const int n = H.dim();
  const int m = problem.ancilla == 0 ? n : problem.ancilla;
  if (m < n) throw InvalidInput("Uhlmann equilibrium needs ancilla dimension m >= n");
  const double mu = resolve_mu(problem);

  const PhaseGrid& g = problem.grid;
  const double shift = uhlmann_spectrum(H).e_min;
  HybridDensity P{MatrixField(g, n, n)};
  for (std::size_t k = 0; k < g.points(); ++k) P.P.block(k) = gibbs_matrix(H.H.block(k), mu, shift);
  const double z_shifted = mass(P);
  if (!(z_shifted > 0.0) || !std::isfinite(z_shifted))
    throw NumericalAbort("Uhlmann Gibbs density has non-positive or non-finite weight");
  P.P *= 1.0 / z_shifted;
  check_normalizable(classical_density(P), H.periodic);

  EquilibriumResult res;
  res.representation = Representation::uhlmann;
  res.mu = mu;
  res.Z = z_shifted * std::exp(-mu * shift);
  res.branch = problem.branch;
  res.energy = energy(P, H);
  UhlmannSplit split = uhlmann_factor(P, m);
  res.lambda_deviation = lambda_deviation_on_support(berry_data(split.W).Lambda, split.D);
  res.state = std::move(split);
  return res;
}

EquilibriumResult gibbs_meanfield(const MaxEntProblem& problem) {
  require_mu_or_energy(problem);
  const HamiltonianSpec& spec = problem.hamiltonian;
  check_meanfield_kind(spec);
  const double mu = resolve_mu(problem);
  const PhaseGrid& g = problem.grid;
  const HamiltonianFields H = build(spec, g);

  const PhaseFunction& HC = spec.classical_part();
  ScalarField hc(g);
  if (!HC.empty())
    for (int i = 0; i < g.nq(); ++i)
      for (int j = 0; j < g.np(); ++j) hc(i, j) = HC.value(g.q(i), g.p(j));
  const double shift = min_value(hc);
  ScalarField D(g);
  for (std::size_t k = 0; k < g.points(); ++k) D[k] = std::exp(-mu * (hc[k] - shift));
  const double zc = integrate(D);
  D *= 1.0 / zc;
  check_normalizable(D, H.periodic);

  const HermitianEigen eq = hermitian_eigen(spec.quantum_part());
  const double qshift = eq.values[0];
  SmallMatrix rho = gibbs_matrix(spec.quantum_part(), mu, qshift);
  const double zq = rho.trace().real();
  rho /= zq;

  EquilibriumResult res;
  res.representation = Representation::mean_field;
  res.mu = mu;
  res.Z = zc * std::exp(-mu * shift) * zq * std::exp(-mu * qshift);
  res.branch = problem.branch;
  double ec = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) ec += D[k] * hc[k];
  res.energy = ec * g.cell_area() + (rho * spec.quantum_part()).trace().real();
  res.state = MeanFieldState{std::move(D), std::move(rho)};
  return res;
}

EquilibriumResult solve_equilibrium(const MaxEntProblem& problem) {
  switch (problem.representation) {
    case Representation::mean_field:
      return gibbs_meanfield(problem);
    case Representation::conditional:
      return gibbs_conditional(problem);
    case Representation::uhlmann:
      return gibbs_uhlmann(problem);
  }
  throw InvalidInput("unknown representation");
}

// ------------------------------------------------------------------ mu inversion

MuSolution solve_mu(const std::function<double(double)>& energy_of_mu, double target, double e_zero,
                    double rel_tol) {
  const double e_lo_mu = energy_of_mu(kMuMin);
  const double e_hi_mu = energy_of_mu(kMuMax);
  const double slack = 1e-12 * std::max({std::abs(e_zero), std::abs(e_hi_mu), 1e-300});
  if (!(target <= e_zero + slack) || !(target >= e_hi_mu - slack)) {
    std::ostringstream os;
    os.precision(12);
    os << "target energy " << target << " outside the attainable range [" << e_hi_mu << ", " << e_zero
       << "] for mu in [0, " << kMuMax << "]";
    throw RangeError(os.str());
  }
  MuSolution sol;
  if (target >= e_lo_mu) {
    sol.mu = kMuMin;
    sol.energy = e_lo_mu;
    return sol;
  }
  double lo = std::log(kMuMin), hi = std::log(kMuMax);
  while (hi - lo > rel_tol && sol.iterations < 200) {
    const double mid = 0.5 * (lo + hi);
    if (energy_of_mu(std::exp(mid)) > target)
      lo = mid;
    else
      hi = mid;
    ++sol.iterations;
  }
  sol.mu = std::exp(0.5 * (lo + hi));
  sol.energy = energy_of_mu(sol.mu);
  return sol;
}

MuSolution solve_mu(const MaxEntProblem& problem) {
  if (!problem.energy) throw InvalidInput("solve_mu needs a target energy");
  const double target = *problem.energy;
  switch (problem.representation) {
    case Representation::conditional: {
      const HamiltonianFields H = build(problem.hamiltonian, problem.grid);
      const BranchField br = conditional_branch(problem, H);
      const GibbsSpectrum s = conditional_spectrum(berry_data(br.psi).Lambda, br.h);
      return solve_mu([&](double mu) { return s.mean(mu); }, target, s.mean(0.0));
    }
    case Representation::uhlmann: {
      check_uhlmann_kind(problem.hamiltonian);
      const GibbsSpectrum s = uhlmann_spectrum(build(problem.hamiltonian, problem.grid));
      return solve_mu([&](double mu) { return s.mean(mu); }, target, s.mean(0.0));
    }
    case Representation::mean_field: {
      check_meanfield_kind(problem.hamiltonian);
      const MeanFieldSpectra s = meanfield_spectra(problem.hamiltonian, problem.grid);
      auto e = [&](double mu) { return s.classical.mean(mu) + s.quantum.mean(mu); };
      return solve_mu(e, target, e(0.0));
    }
  }
  throw InvalidInput("unknown representation");
}

// ------------------------------------------------------------- certification

namespace {

/// Residual of the first variational condition for a field F (psi or W) with
/// generator X (H or mu H + ln W W^dagger):
///   a = Lambda X F + i hbar {<F, X F>, F},  b = Lambda F,
/// minimized over a real multiplier field c (pointwise least squares).
double first_condition_residual(const ScalarField& D, const ComplexField& F, const MatrixField& X) {
  const PhaseGrid& g = D.grid();
  const int n = F.rows(), m = F.cols();
  const BerryData berry = berry_data(F);
  ScalarField gen(g);
  ComplexField XF(g, n, m);
  for (std::size_t k = 0; k < g.points(); ++k) {
    const auto f = F.block(k);
    const SmallMatrix xk = X.block(k);
    const SmallMatrix xf = xk * f;
    XF.block(k) = xf;
    gen[k] = (f.adjoint() * xf).trace().real();
  }
  const ScalarField gq = partial_q(gen), gp = partial_p(gen);
  const ComplexField Fq = partial_q(F), Fp = partial_p(F);
  const double hbar = g.hbar();
  const cplx ih(0.0, hbar);
  double num = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) {
    const double L = berry.Lambda[k];
    const SmallMatrix drive = L * XF.block(k);
    const SmallMatrix br = gq[k] * Fp.block(k) - gp[k] * Fq.block(k);
    const SmallMatrix a = drive + ih * br;
    const SmallMatrix b = L * F.block(k);
    const double bb = b.squaredNorm();
    const double c = bb > 0.0 ? -(b.adjoint() * a).trace().real() / bb : 0.0;
    num += D[k] * (a + c * b).squaredNorm();
    s1 += D[k] * drive.squaredNorm();
    s2 += D[k] * (hbar * br).squaredNorm();
  }
  const double scale = std::sqrt(s1) + std::sqrt(s2);
  return scale > 0.0 ? std::sqrt(num) / scale : std::sqrt(num * g.cell_area());
}

struct WeightedFit {
  double residual = 0.0;
  double multiplier = 0.0;
};

/// D-weighted RMS of g + lambda with lambda the weighted least-squares constant.
WeightedFit weighted_constant_fit(const ScalarField& D, const ScalarField& gfun) {
  double w = 0.0, wg = 0.0;
  for (std::size_t k = 0; k < D.points(); ++k) {
    w += D[k];
    wg += D[k] * gfun[k];
  }
  WeightedFit fit;
  fit.multiplier = -wg / w;
  double r = 0.0;
  for (std::size_t k = 0; k < D.points(); ++k) r += D[k] * std::pow(gfun[k] + fit.multiplier, 2);
  fit.residual = std::sqrt(r / w);
  return fit;
}

double relative_l1_change(const ScalarField& a, const ScalarField& b) {
  ScalarField d = b;
  d -= a;
  return l1_norm(d) / l1_norm(a);
}

/// D-weighted L1 change of the per-node projector F F^dagger.
double projector_change(const ScalarField& D0, const ComplexField& F0, const ComplexField& F1) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < D0.points(); ++k) {
    const SmallMatrix a = F0.block(k) * F0.block(k).adjoint();
    const SmallMatrix b = F1.block(k) * F1.block(k).adjoint();
    num += D0[k] * (b - a).norm();
    den += D0[k] * a.norm();
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Expected energy field weighted against D: <psi,H psi>, Tr(W W^dagger H), or Tr(rho H).
ScalarField energy_density(const ModelState& s, const HamiltonianFields& H) {
  const PhaseGrid& g = H.grid();
  ScalarField h(g);
  std::visit(
      [&](const auto& st) {
        using T = std::decay_t<decltype(st)>;
        for (std::size_t k = 0; k < g.points(); ++k) {
          const SmallMatrix hk = H.H.block(k);
          if constexpr (std::is_same_v<T, MeanFieldState>) {
            h[k] = (st.rho * hk).trace().real();
          } else if constexpr (std::is_same_v<T, ConditionalSplit>) {
            const auto f = st.psi.block(k);
            h[k] = (f.adjoint() * hk * f).trace().real();
          } else if constexpr (std::is_same_v<T, UhlmannSplit>) {
            const auto f = st.W.block(k);
            h[k] = (f.adjoint() * hk * f).trace().real();
          } else {
            const SmallMatrix pk = st.P.block(k);
            const double tr = pk.trace().real();
            h[k] = tr > 0.0 ? (pk * hk).trace().real() / tr : 0.0;
          }
        }
      },
      s);
  return h;
}

const ScalarField& density_of(const ModelState& s) {
  if (const auto* c = std::get_if<ConditionalSplit>(&s)) return c->D;
  if (const auto* u = std::get_if<UhlmannSplit>(&s)) return u->D;
  if (const auto* m = std::get_if<MeanFieldState>(&s)) return m->D;
  throw InvalidInput("equilibrium state must be a split or mean-field state");
}

ScalarField& density_of(ModelState& s) { return const_cast<ScalarField&>(density_of(std::as_const(s))); }

ScalarField liouville_volume(const ModelState& s) {
  if (const auto* c = std::get_if<ConditionalSplit>(&s)) return berry_data(c->psi).Lambda;
  if (const auto* u = std::get_if<UhlmannSplit>(&s)) return berry_data(u->W).Lambda;
  return ScalarField(density_of(s).grid(), 1, 1, 1.0);
}

}  // namespace

double equilibrium_entropy(const ModelState& s) {
  if (const auto* c = std::get_if<ConditionalSplit>(&s)) return shannon_pure(*c).value;
  if (const auto* u = std::get_if<UhlmannSplit>(&s)) return entropy_uhlmann(*u).value;
  if (const auto* m = std::get_if<MeanFieldState>(&s)) return entropy_meanfield(m->D, m->rho);
  const auto& P = std::get<HybridDensity>(s);
  return entropy_uhlmann(uhlmann_factor(P, P.dim())).value;
}

MeanFieldResidual meanfield_maxent_residual(const ScalarField& D, const SmallMatrix& rho, const HamiltonianFields& H,
                                            double mu) {
  const PhaseGrid& g = D.grid();
  const int n = H.dim();
  if (rho.rows() != n) throw InvalidInput("meanfield_maxent_residual: rho dimension mismatch");
  MeanFieldResidual r;
  // quantum: ln rho + mu int D H + lambda_1 = 0 (the constant 1 is absorbed in lambda_1)
  SmallMatrix avg = SmallMatrix::Zero(n, n);
  for (std::size_t k = 0; k < g.points(); ++k) avg += D[k] * H.H.block(k);
  avg *= g.cell_area();
  const SmallMatrix lr = matrix_function(hermitian_part(rho), [](double x) { return clamped_log(x); });
  const SmallMatrix G = lr + mu * avg;
  r.lambda1 = -G.trace().real() / n;
  r.quantum = (G + r.lambda1 * identity(n)).norm();
  // classical: ln D + mu Tr(rho H) + lambda_2 = 0, weighted by D
  ScalarField gfun(g);
  for (std::size_t k = 0; k < g.points(); ++k)
    gfun[k] = clamped_log(D[k]) + mu * (rho * H.H.block(k)).trace().real();
  const WeightedFit fit = weighted_constant_fit(D, gfun);
  r.lambda2 = fit.multiplier;
  r.classical = fit.residual;
  return r;
}

StationarityReport stationarity_residual(const EquilibriumResult& eq, const HamiltonianFields& H, double dt,
                                         int steps) {
  StationarityReport rep;
  const PhaseGrid& g = H.grid();
  const ModelState& s0 = eq.state;
  const double mu = eq.mu;

  ModelKind model = ModelKind::mean_field;
  if (const auto* c = std::get_if<ConditionalSplit>(&s0)) {
    model = ModelKind::ehrenfest_conditional;
    rep.marina_residual = first_condition_residual(c->D, c->psi, H.H);
  } else if (const auto* u = std::get_if<UhlmannSplit>(&s0)) {
    model = ModelKind::ehrenfest_uhlmann;
    MatrixField X(g, H.dim(), H.dim());
    for (std::size_t k = 0; k < g.points(); ++k) {
      const auto w = u->W.block(k);
      const SmallMatrix ww = w * w.adjoint();
      X.block(k) = mu * H.H.block(k) + matrix_function(hermitian_part(ww), [](double x) { return clamped_log(x); });
    }
    rep.marina_residual = first_condition_residual(u->D, u->W, X);
  } else if (const auto* m = std::get_if<MeanFieldState>(&s0)) {
    rep.marina_residual = meanfield_maxent_residual(m->D, m->rho, H, mu).quantum;
  } else {
    throw InvalidInput("stationarity_residual: unsupported state representation");
  }

  // second condition: ln(D / Lambda) + mu <H> + lambda_2 = 0
  const ScalarField& D0 = density_of(s0);
  const ScalarField L = liouville_volume(s0);
  const ScalarField h = energy_density(s0, H);
  ScalarField gfun(g);
  for (std::size_t k = 0; k < g.points(); ++k) gfun[k] = clamped_log(D0[k] / L[k]) + mu * h[k];
  const WeightedFit fit = weighted_constant_fit(D0, gfun);
  rep.gibbs_residual = fit.residual;
  rep.lambda2 = fit.multiplier;

  StepperConfig cfg;
  cfg.dt = dt;
  cfg.steps = steps;
  cfg.sample_every = std::max(steps, 1);
  const RunResult run = rk4_run(model, s0, H, cfg);
  rep.aborted = run.aborted;
  rep.t_check = run.steps_taken * dt;
  const ModelState& s1 = run.state;
  rep.d_change = relative_l1_change(D0, density_of(s1));
  if (const auto* c = std::get_if<ConditionalSplit>(&s0)) {
    rep.state_change = projector_change(D0, c->psi, std::get<ConditionalSplit>(s1).psi);
  } else if (const auto* u = std::get_if<UhlmannSplit>(&s0)) {
    rep.state_change = projector_change(D0, u->W, std::get<UhlmannSplit>(s1).W);
  } else {
    const auto& m0 = std::get<MeanFieldState>(s0);
    const auto& m1 = std::get<MeanFieldState>(s1);
    rep.state_change = (m1.rho - m0.rho).norm() / m0.rho.norm();
  }
  rep.entropy_change = equilibrium_entropy(s1) - equilibrium_entropy(s0);
  return rep;
}

MaximalityReport maximality_probe(const EquilibriumResult& eq, const HamiltonianFields& H, int probes,
                                  double amplitude, std::uint64_t seed) {
  MaximalityReport rep;
  const ScalarField& D = density_of(eq.state);
  const PhaseGrid& g = D.grid();
  const ScalarField h = energy_density(eq.state, H);
  rep.entropy = equilibrium_entropy(eq.state);
  rep.max_perturbed = -std::numeric_limits<double>::infinity();
  const double m0 = integrate(D);
  ScalarField Dh(g);
  for (std::size_t k = 0; k < g.points(); ++k) Dh[k] = D[k] * h[k];
  const double e0 = integrate(Dh);
  double e_scale = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) e_scale += D[k] * std::abs(h[k]);
  e_scale = std::max(e_scale * g.cell_area(), 1e-300);

  for (int t = 0; t < probes; ++t) {
    const MatrixField gf = random_hermitian_field(g, 1, 2, seed + 31 * static_cast<std::uint64_t>(t));
    ScalarField r(g);
    double rmax = 0.0;
    for (std::size_t k = 0; k < g.points(); ++k) {
      r[k] = gf[k].real();
      rmax = std::max(rmax, std::abs(r[k]));
    }
    if (rmax > 0.0) r *= 1.0 / rmax;
    // project r onto {int D r = 0, int D h r = 0}: r -> r - a - b h
    double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
    for (std::size_t k = 0; k < g.points(); ++k) {
      s0 += D[k];
      s1 += D[k] * h[k];
      s2 += D[k] * h[k] * h[k];
      t0 += D[k] * r[k];
      t1 += D[k] * h[k] * r[k];
    }
    const double det = s0 * s2 - s1 * s1;
    double a, b;
    if (std::abs(det) > 1e-14 * s0 * s2) {
      a = (t0 * s2 - t1 * s1) / det;
      b = (s0 * t1 - s1 * t0) / det;
    } else {
      a = t0 / s0;
      b = 0.0;
    }
    ModelState pert = eq.state;
    ScalarField& Dp = density_of(pert);
    bool positive = true;
    for (std::size_t k = 0; k < g.points(); ++k) {
      Dp[k] = D[k] * (1.0 + amplitude * (r[k] - a - b * h[k]));
      positive = positive && Dp[k] >= 0.0;
    }
    if (!positive) continue;
    ScalarField Dph(g);
    for (std::size_t k = 0; k < g.points(); ++k) Dph[k] = Dp[k] * h[k];
    const double dm = std::abs(integrate(Dp) - m0) / m0;
    const double de = std::abs(integrate(Dph) - e0) / e_scale;
    rep.max_constraint_error = std::max({rep.max_constraint_error, dm, de});
    const double S = equilibrium_entropy(pert);
    rep.max_perturbed = std::max(rep.max_perturbed, S);
    if (S > rep.entropy) ++rep.violations;
    ++rep.probes;
  }
  return rep;
}

}  // namespace mqc
