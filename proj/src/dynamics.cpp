#include "mqc/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "mqc/linalg.hpp"

namespace mqc {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mean_field:
      return "mean_field";
    case ModelKind::ehrenfest_density:
      return "ehrenfest_density";
    case ModelKind::ehrenfest_conditional:
      return "ehrenfest_conditional";
    case ModelKind::ehrenfest_uhlmann:
      return "ehrenfest_uhlmann";
    case ModelKind::beyond_ehrenfest:
      return "beyond_ehrenfest";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  for (auto k : {ModelKind::mean_field, ModelKind::ehrenfest_density, ModelKind::ehrenfest_conditional,
                 ModelKind::ehrenfest_uhlmann, ModelKind::beyond_ehrenfest})
    if (to_string(k) == name) return k;
  throw InvalidInput("unknown model '" + name + "'");
}

bool state_matches(ModelKind kind, const ModelState& state) {
  switch (kind) {
    case ModelKind::mean_field:
      return std::holds_alternative<MeanFieldState>(state);
    case ModelKind::ehrenfest_density:
    case ModelKind::beyond_ehrenfest:
      return std::holds_alternative<HybridDensity>(state);
    case ModelKind::ehrenfest_conditional:
      return std::holds_alternative<ConditionalSplit>(state);
    case ModelKind::ehrenfest_uhlmann:
      return std::holds_alternative<UhlmannSplit>(state);
  }
  return false;
}

namespace {

double speed_of(double vq, double vp) { return std::sqrt(vq * vq + vp * vp); }

double trace_epsilon(const ScalarField& D, double rel) {
  double m = 0.0;
  for (double v : D.values()) m = std::max(m, v);
  return rel * m;
}

// Replaces every node of T by its Hermitian part; returns the relative
// anti-Hermitian residual.
double symmetrize(MatrixField& T) {
  double worst = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < T.points(); ++k) {
    auto b = T.block(k);
    const SmallMatrix m = b;
    worst = std::max(worst, 0.5 * (m - m.adjoint()).norm());
    scale = std::max(scale, m.norm());
    b = hermitian_part(m);
  }
  return scale > 0.0 ? worst / scale : 0.0;
}

// -(i/hbar)[A, P]
SmallMatrix rotation(const SmallMatrix& A, const SmallMatrix& P, double hbar) {
  return cplx(0.0, -1.0 / hbar) * commutator(A, P);
}

}  // namespace

VectorField2 ehrenfest_velocity(const ComplexField& F, const HamiltonianFields& H) {
  const PhaseGrid& g = F.grid();
  VectorField2 v{ScalarField(g), ScalarField(g)};
  for (std::size_t k = 0; k < g.points(); ++k) {
    const auto f = F.block(k);
    v.q[k] = (f.adjoint() * H.dp.block(k) * f).trace().real();
    v.p[k] = -(f.adjoint() * H.dq.block(k) * f).trace().real();
  }
  return v;
}

VectorField2 density_velocity(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization) {
  const PhaseGrid& g = P.grid();
  const ScalarField D = classical_density(P);
  const double eps = trace_epsilon(D, trace_regularization);
  VectorField2 v{ScalarField(g), ScalarField(g)};
  for (std::size_t k = 0; k < g.points(); ++k) {
    const double den = D[k] + eps;
    if (!(den > 0.0) || !std::isfinite(den))
      throw NumericalAbort("vanishing trace in velocity denominator at node (" + std::to_string(g.row_of(k)) + "," +
                           std::to_string(g.col_of(k)) + ")");
    const auto p = P.P.block(k);
    v.q[k] = (p * H.dp.block(k)).trace().real() / den;
    v.p[k] = -(p * H.dq.block(k)).trace().real() / den;
  }
  return v;
}

MeanFieldState mean_field_rhs(const MeanFieldState& s, const HamiltonianFields& H, RhsInfo* info) {
  const PhaseGrid& g = s.grid();
  const int n = H.dim();
  ScalarField vq(g), vp(g);
  SmallMatrix HQ = SmallMatrix::Zero(n, n);
  double vmax = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) {
    vq[k] = (s.rho * H.dp.block(k)).trace().real();
    vp[k] = -(s.rho * H.dq.block(k)).trace().real();
    vmax = std::max(vmax, speed_of(vq[k], vp[k]));
    HQ += s.D[k] * H.H.block(k);
  }
  HQ *= g.cell_area();
  MeanFieldState out{divergence(s.D, vq, vp), rotation(HQ, s.rho, g.hbar())};
  out.D *= -1.0;
  const SmallMatrix raw = out.rho;
  out.rho = hermitian_part(raw);
  if (info) {
    info->max_speed = vmax;
    const double scale = raw.norm();
    info->antiherm_residual = scale > 0.0 ? 0.5 * (raw - raw.adjoint()).norm() / scale : 0.0;
  }
  return out;
}

HybridDensity ehrenfest_rhs(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization,
                            RhsInfo* info) {
  const PhaseGrid& g = P.grid();
  const VectorField2 v = density_velocity(P, H, trace_regularization);
  HybridDensity out{divergence(P.P, v.q, v.p)};
  out.P *= -1.0;
  double vmax = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) {
    out.P.block(k) += rotation(H.H.block(k), P.P.block(k), g.hbar());
    vmax = std::max(vmax, speed_of(v.q[k], v.p[k]));
  }
  const double resid = symmetrize(out.P);
  if (info) {
    info->max_speed = vmax;
    info->antiherm_residual = resid;
  }
  return out;
}

namespace {

// Shared structure of the conditional and Uhlmann systems:
//   dD/dt = -div(D X),  dF/dt = -X . grad F - (i/hbar) H F,  X = Re Tr(F^dagger X_H F).
// The component Re Tr(F^dagger A) F / |F|^2 of the advection term A = X . grad F
// vanishes for unit-norm F but not for its stencil derivatives; it is removed so
// the discrete flow keeps |F| = 1 pointwise.
template <class Split>
Split split_rhs(const ScalarField& D, const ComplexField& F, const HamiltonianFields& H, RhsInfo* info) {
  const PhaseGrid& g = D.grid();
  const VectorField2 v = ehrenfest_velocity(F, H);
  ScalarField dD = divergence(D, v.q, v.p);
  dD *= -1.0;
  const auto Fq = partial_q(F);
  const auto Fp = partial_p(F);
  ComplexField dF(g, F.rows(), F.cols());
  const cplx rot(0.0, -1.0 / g.hbar());
  double vmax = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) {
    SmallMatrix adv = v.q[k] * Fq.block(k) + v.p[k] * Fp.block(k);
    const double n2 = F.block(k).squaredNorm();
    if (n2 > 0.0) adv -= ((F.block(k).adjoint() * adv).trace().real() / n2) * F.block(k);
    dF.block(k) = -adv + rot * (H.H.block(k) * F.block(k));
    vmax = std::max(vmax, speed_of(v.q[k], v.p[k]));
  }
  if (info) {
    info->max_speed = vmax;
    info->antiherm_residual = 0.0;
  }
  return Split{std::move(dD), std::move(dF)};
}

}  // namespace

ConditionalSplit conditional_rhs(const ConditionalSplit& s, const HamiltonianFields& H, RhsInfo* info) {
  return split_rhs<ConditionalSplit>(s.D, s.psi, H, info);
}

UhlmannSplit uhlmann_rhs(const UhlmannSplit& s, const HamiltonianFields& H, RhsInfo* info) {
  return split_rhs<UhlmannSplit>(s.D, s.W, H, info);
}

BeyondTerms beyond_terms(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization) {
  const PhaseGrid& g = P.grid();
  const int n = P.dim();
  const double hbar = g.hbar();
  const ScalarField D = classical_density(P);
  const double eps = trace_epsilon(D, trace_regularization);
  const auto dPq = partial_q(P.P);
  const auto dPp = partial_p(P.P);

  BeyondTerms out{MatrixField(g, n, n), MatrixField(g, n, n), {ScalarField(g), ScalarField(g)},
                  MatrixField(g, n, n)};
  for (std::size_t k = 0; k < g.points(); ++k) {
    const double den = D[k] + eps;
    if (!(den > 0.0)) throw NumericalAbort("vanishing trace in beyond-Ehrenfest denominators");
    const SmallMatrix p = P.P.block(k);
    const cplx fac(0.0, hbar / (2.0 * den));
    // X_P = (dP/dp, -dP/dq)
    out.sigma_q.block(k) = fac * commutator(p, dPp.block(k));
    out.sigma_p.block(k) = -fac * commutator(p, dPq.block(k));
  }

  MatrixField Xq = H.dp;
  MatrixField Xp = H.dq;
  Xp *= -1.0;
  const auto Sqq = partial_q(out.sigma_q), Sqp = partial_p(out.sigma_q);
  const auto Spq = partial_q(out.sigma_p), Spp = partial_p(out.sigma_p);
  const auto Xqq = partial_q(Xq), Xqp = partial_p(Xq);
  const auto Xpq = partial_q(Xp), Xpp = partial_p(Xp);

  for (std::size_t k = 0; k < g.points(); ++k) {
    const double den = D[k] + eps;
    const SmallMatrix p = P.P.block(k);
    const SmallMatrix xq = Xq.block(k), xp = Xp.block(k);
    const SmallMatrix sq = out.sigma_q.block(k), sp = out.sigma_p.block(k);
    // (X . grad Sigma - Sigma . grad X)_k = X^j d_j Sigma_k - Sigma^j d_j X_k
    const double corr_q =
        (xq * Sqq.block(k) + xp * Sqp.block(k) - sq * Xqq.block(k) - sp * Xqp.block(k)).trace().real() / den;
    const double corr_p =
        (xq * Spq.block(k) + xp * Spp.block(k) - sq * Xpq.block(k) - sp * Xpp.block(k)).trace().real() / den;
    out.velocity.q[k] = (p * xq).trace().real() / den + corr_q;
    out.velocity.p[k] = (p * xp).trace().real() / den + corr_p;

    const SmallMatrix aq = dPq.block(k), ap = dPp.block(k);
    const double gq = aq.trace().real() / (2.0 * den);
    const double gp = ap.trace().real() / (2.0 * den);
    const SmallMatrix bracket = commutator(aq - gq * p, xq) + commutator(ap - gp * p, xp);
    out.effective_H.block(k) = H.H.block(k) + cplx(0.0, hbar / den) * bracket;
  }
  return out;
}

HybridDensity beyond_ehrenfest_rhs(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization,
                                   RhsInfo* info) {
  const PhaseGrid& g = P.grid();
  const BeyondTerms terms = beyond_terms(P, H, trace_regularization);
  HybridDensity out{divergence(P.P, terms.velocity.q, terms.velocity.p)};
  out.P *= -1.0;
  double vmax = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) {
    out.P.block(k) += rotation(terms.effective_H.block(k), P.P.block(k), g.hbar());
    vmax = std::max(vmax, speed_of(terms.velocity.q[k], terms.velocity.p[k]));
  }
  const double resid = symmetrize(out.P);
  if (info) {
    info->max_speed = vmax;
    info->antiherm_residual = resid;
  }
  return out;
}

double beyond_energy(const HybridDensity& P, const HamiltonianFields& H, double trace_regularization) {
  const BeyondTerms terms = beyond_terms(P, H, trace_regularization);
  double acc = 0.0;
  for (std::size_t k = 0; k < P.P.points(); ++k) {
    const SmallMatrix xq = H.dp.block(k);
    const SmallMatrix xp = -H.dq.block(k);
    acc += (P.P.block(k) * H.H.block(k)).trace().real();
    acc += (terms.sigma_q.block(k) * xp - terms.sigma_p.block(k) * xq).trace().real();
  }
  return acc * P.grid().cell_area();
}

ModelState model_rhs(ModelKind kind, const ModelState& state, const HamiltonianFields& H,
                     double trace_regularization, RhsInfo* info) {
  if (!state_matches(kind, state)) throw InvalidInput("state representation does not match model " + to_string(kind));
  switch (kind) {
    case ModelKind::mean_field:
      return mean_field_rhs(std::get<MeanFieldState>(state), H, info);
    case ModelKind::ehrenfest_density:
      return ehrenfest_rhs(std::get<HybridDensity>(state), H, trace_regularization, info);
    case ModelKind::beyond_ehrenfest:
      return beyond_ehrenfest_rhs(std::get<HybridDensity>(state), H, trace_regularization, info);
    case ModelKind::ehrenfest_conditional:
      return conditional_rhs(std::get<ConditionalSplit>(state), H, info);
    case ModelKind::ehrenfest_uhlmann:
      return uhlmann_rhs(std::get<UhlmannSplit>(state), H, info);
  }
  throw InvalidInput("unknown model");
}

void axpy(ModelState& y, double a, const ModelState& x) {
  std::visit(
      [&](auto& dst) {
        using S = std::decay_t<decltype(dst)>;
        dst.axpy(a, std::get<S>(x));
      },
      y);
}

namespace {

bool finite_values(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
bool finite_values(std::span<const cplx> v) {
  return std::all_of(v.begin(), v.end(), [](cplx x) { return std::isfinite(x.real()) && std::isfinite(x.imag()); });
}

}  // namespace

bool all_finite(const ModelState& s) {
  return std::visit(
      [](const auto& st) -> bool {
        using S = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<S, MeanFieldState>) {
          return finite_values(st.D.values()) && st.rho.allFinite();
        } else if constexpr (std::is_same_v<S, HybridDensity>) {
          return finite_values(st.P.values());
        } else if constexpr (std::is_same_v<S, ConditionalSplit>) {
          return finite_values(st.D.values()) && finite_values(st.psi.values());
        } else {
          return finite_values(st.D.values()) && finite_values(st.W.values());
        }
      },
      s);
}

namespace {

void renormalize_state(ModelState& s) {
  std::visit(
      [](auto& st) {
        using S = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<S, MeanFieldState>) {
          const double m = integrate(st.D);
          if (m > 0.0) st.D *= 1.0 / m;
          const double tr = st.rho.trace().real();
          if (tr > 0.0) st.rho /= tr;
        } else if constexpr (std::is_same_v<S, HybridDensity>) {
          const double m = integrate(classical_density(st));
          if (m > 0.0) st.P *= 1.0 / m;
        } else {
          renormalize(st);
        }
      },
      s);
}

// The mean-field rho only rotates, so its spectrum is invariant. RK4 is not
// unitary; after each step rho keeps the new eigenvectors and gets back the old
// eigenvalues. The correction is O(dt^5) per step and leaves the order intact.
void restore_spectrum(const ModelState& before, ModelState& after) {
  const auto* a = std::get_if<MeanFieldState>(&before);
  auto* b = std::get_if<MeanFieldState>(&after);
  if (!a || !b) return;
  const HermitianEigen old_eig = hermitian_eigen(hermitian_part(a->rho), false);
  const HermitianEigen new_eig = hermitian_eigen(hermitian_part(b->rho), false);
  b->rho = new_eig.vectors * old_eig.values.cast<cplx>().asDiagonal() * new_eig.vectors.adjoint();
}

}  // namespace

RunResult rk4_run(ModelKind kind, ModelState state, const HamiltonianFields& H, const StepperConfig& cfg,
                  const RunHooks& hooks) {
  if (!state_matches(kind, state)) throw InvalidInput("state representation does not match model " + to_string(kind));
  if (!(cfg.dt > 0.0)) throw InvalidInput("dt must be positive");
  if (cfg.steps < 0) throw InvalidInput("steps must be non-negative");
  const int every = std::max(1, cfg.sample_every);

  const PhaseGrid& g = H.grid();
  const double hmin = std::min(g.dq(), g.dp());
  RunResult res;
  res.state = state;
  double antiherm_window = 0.0;
  bool warned = false;

  auto sample = [&](double t, const ModelState& s) {
    if (hooks.diagnostics) {
      DiagnosticRow row = hooks.diagnostics(t, s);
      row.t = t;
      row.antiherm = antiherm_window;
      res.series.rows.push_back(row);
    }
    if (hooks.on_sample) hooks.on_sample(t, s);
    if (cfg.keep_samples) {
      res.samples.push_back(s);
      res.sample_times.push_back(t);
    }
    antiherm_window = 0.0;
  };

  sample(0.0, state);
  for (int step = 1; step <= cfg.steps; ++step) {
    RhsInfo worst;
    ModelState next = state;
    try {
      std::visit(
          [&](const auto& y) {
            using S = std::decay_t<decltype(y)>;
            auto rhs = [&](const S& x) -> S {
              RhsInfo info;
              S k = std::get<S>(model_rhs(kind, ModelState(x), H, cfg.trace_regularization, &info));
              worst.max_speed = std::max(worst.max_speed, info.max_speed);
              worst.antiherm_residual = std::max(worst.antiherm_residual, info.antiherm_residual);
              return k;
            };
            next = rk4_step(y, cfg.dt, rhs);
          },
          state);
    } catch (const NumericalAbort& e) {
      res.aborted = true;
      res.abort_reason = e.what();
      break;
    }
    const double cfl = cfg.dt * worst.max_speed / hmin;
    res.max_cfl = std::max(res.max_cfl, cfl);
    if (cfl >= 0.5) {
      res.aborted = true;
      res.abort_reason = "CFL guard exceeded: " + std::to_string(cfl) + " at step " + std::to_string(step);
      break;
    }
    if (cfl > 0.35 && !warned) {
      res.warnings.push_back("CFL number " + std::to_string(cfl) + " above 0.35");
      warned = true;
    }
    if (!all_finite(next)) {
      res.aborted = true;
      res.abort_reason = "non-finite state at step " + std::to_string(step);
      break;
    }
    restore_spectrum(state, next);
    if (cfg.renormalize) renormalize_state(next);
    state = std::move(next);
    res.steps_taken = step;
    antiherm_window = std::max(antiherm_window, worst.antiherm_residual);
    res.max_antiherm = std::max(res.max_antiherm, worst.antiherm_residual);
    if (step % every == 0 || step == cfg.steps) sample(step * cfg.dt, state);
  }
  res.state = std::move(state);
  return res;
}

}  // namespace mqc
