// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria, so ctest reports the gate as failed if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "mqc/equilibria.hpp"
#include "mqc/scenario.hpp"

using namespace mqc;

namespace {

const std::filesystem::path kConfigs = MQC_CONFIG_DIR;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Maximum over samples of |X(t) - X(0)| divided by max(|X(0)|, floor).
double drift(const SimulateOutcome& r, std::optional<double> DiagnosticRow::*col, double floor = 0.0) {
  const auto& rows = r.run.series.rows;
  const double x0 = *(rows.front().*col);
  double d = 0.0;
  for (const auto& row : rows) d = std::max(d, std::abs(*(row.*col) - x0));
  return d / std::max(std::abs(x0), floor);
}

double rel_distance(const MatrixField& a, const MatrixField& b) {
  return testing::field_distance(a, b) / testing::field_norm(b);
}

ScenarioConfig nanowire(int n) {
  ScenarioConfig cfg = load_config(kConfigs / "nanowire.json");
  const PhaseGrid& g = cfg.grid;
  cfg.grid = PhaseGrid(g.q0(), g.q1(), g.p0(), g.p1(), n, n, g.hbar());
  return cfg;
}

// The 64^2 baseline nanowire run and its 128^2, dt/2 refinement, both carrying
// the K = 256 loop tracer. Shared by criteria 1, 2, 5, 10 and 13.
struct NanowireRuns {
  SimulateOutcome coarse, fine;
};

const NanowireRuns& nanowire_runs() {
  static const NanowireRuns runs = [] {
    NanowireRuns r;
    ScenarioConfig c = nanowire(64);
    c.diagnostics.loop = LoopSpec{0.5, 0.0, 0.5, 256};
    r.coarse = run_simulate(c);
    ScenarioConfig f = nanowire(128);
    f.diagnostics.loop = c.diagnostics.loop;
    f.time.dt = r.coarse.stepper.dt / 2;
    f.time.t_final.reset();
    f.time.steps = 2 * r.coarse.stepper.steps;
    f.time.sample_every = 2 * c.time.sample_every;
    r.fine = run_simulate(f);
    return r;
  }();
  return runs;
}

// ---------------------------------------------------------------- criteria

Verdict casimir_conservation() {
  const NanowireRuns& r = nanowire_runs();
  if (r.coarse.run.aborted || r.fine.run.aborted) return {false, "run aborted"};
  // C1 of a pure state vanishes identically, so its drift is measured against
  // the unit mass instead of its own size, and at the roundoff floor no further
  // decrease under refinement can be asked of it.
  constexpr double kTol = 1e-4, kShrink = 8.0, kRoundoff = 1e-12;
  struct Col {
    const char* name;
    std::optional<double> DiagnosticRow::*col;
    double floor;
  };
  const Col cols[] = {{"C1", &DiagnosticRow::C1, 1.0},
                      {"C2", &DiagnosticRow::C2, 0.0},
                      {"S_pure", &DiagnosticRow::S_pure, 0.0},
                      {"renyi2", &DiagnosticRow::renyi, 0.0}};
  bool ok = true;
  std::string detail;
  for (const Col& c : cols) {
    const double d64 = drift(r.coarse, c.col, c.floor), d128 = drift(r.fine, c.col, c.floor);
    const bool shrinks = d128 * kShrink <= d64 || (d64 < kRoundoff && d128 < kRoundoff);
    ok = ok && d64 < kTol && shrinks;
    detail += fmt("%s %.2e->%.2e ", c.name, d64, d128);
  }
  return {ok, detail};
}

Verdict energy_and_mass() {
  const SimulateOutcome& r = nanowire_runs().coarse;
  const double e = drift(r, &DiagnosticRow::energy), m = drift(r, &DiagnosticRow::mass, 1.0);
  return {e < 1e-6 && m < 1e-10, fmt("energy %.2e (tol 1e-6), mass %.2e (tol 1e-10)", e, m)};
}

Verdict casimir_brackets(const nlohmann::json& report) {
  const double c1 = report["c1_bracket_ratio"].get<double>();
  const double anti = report["antisymmetry"].get<double>();
  double general = 0.0;
  for (const auto& [name, v] : report["split_rate_ratio"].items()) general = std::max(general, v.get<double>());
  return {c1 < 1e-6 && general < 1e-6 && anti < 1e-9,
          fmt("20 probes: C1 %.2e, C_general %.2e (tol 1e-6 of scale); antisymmetry %.2e (tol 1e-9)", c1, general,
              anti)};
}

Verdict bracket_dynamics(const nlohmann::json& report) {
  bool ok = true;
  std::string detail;
  for (const auto& [name, v] : report["consistency"].items()) {
    const double res = v["residual"].get<double>();
    ok = ok && res < 1e-5;
    detail += fmt("%s %.2e ", name.c_str(), res);
  }
  return {ok, detail + "(tol 1e-5)"};
}

Verdict meanfield_purity() {
  ScenarioConfig cfg = nanowire(64);
  cfg.model = ModelKind::mean_field;
  const SimulateOutcome mf = run_simulate(cfg);
  const double dmf = drift(mf, &DiagnosticRow::purity);
  const double dcond = drift(nanowire_runs().coarse, &DiagnosticRow::purity);
  // Decoherence is expected above 1e-3; the hard requirement is only that it is visibly nonzero.
  const bool ok = !mf.run.aborted && dmf < 1e-12 && dcond > 1e-6;
  return {ok, fmt("mean-field %.2e (tol 1e-12); conditional %.2e (%s 1e-3)", dmf, dcond,
                  dcond > 1e-3 ? "above" : "BELOW")};
}

Verdict renyi_limits() {
  const PhaseGrid g = testing::torus(64);
  bool ok = true;
  double worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const UhlmannSplit u = random_mixed_split(g, 2, seed);
    const HybridDensity P = compose(u);
    const ScalarField D = classical_density(P);
    const SmallMatrix rho = quantum_marginal(P);
    ScenarioConfig cfg = nanowire(64);
    cfg.initial.state.kind = StateProfile::Kind::twisted;
    cfg.initial.state.k = static_cast<int>(seed);
    const ConditionalSplit c = initial_conditional(cfg, build(cfg.hamiltonian, cfg.grid));
    const UhlmannSplit cu = pad_to_uhlmann(c, 2);

    const double su = entropy_uhlmann(u).value, sm = entropy_meanfield(D, rho), sp = shannon_pure(c).value;
    for (double a : {1.0 - 1e-3, 1.0 + 1e-3}) {
      const double e[] = {std::abs(renyi_mqc(u, a).value - su) / std::abs(su),
                          std::abs(renyi_meanfield(D, rho, a) - sm) / std::abs(sm),
                          std::abs(renyi_mqc(cu, a).value - sp) / std::abs(sp)};
      for (double x : e) {
        worst = std::max(worst, x);
        ok = ok && x <= 1e-2;
      }
    }
  }
  return {ok, fmt("worst relative gap %.2e over 3 states x 3 families (tol 1e-2)", worst)};
}

Verdict meanfield_reduction() {
  const PhaseGrid g = testing::torus(64);
  SmallMatrix HQ(2, 2);
  HQ << 0.5, cplx(0.2, -0.1), cplx(0.2, 0.1), -0.5;
  const HamiltonianFields H = build(HamiltonianSpec::uncoupled(PhaseFunction::trig_harmonic(1.0, 1.0), HQ), g);
  std::mt19937_64 rng(17);
  const SmallMatrix rho0 = testing::random_density(rng, 2);
  const ScalarField D0 = testing::von_mises(g, 0.5, 0.0, 2.0);
  HybridDensity P{MatrixField(g, 2, 2)};
  for (std::size_t k = 0; k < g.points(); ++k) P.P.block(k) = D0[k] * rho0;

  StepperConfig sc;
  sc.dt = 0.2 * g.dq() / max_speed_bound(H);
  sc.steps = static_cast<int>(std::ceil(2 * testing::kPi / sc.dt));
  sc.dt = 2 * testing::kPi / sc.steps;
  sc.sample_every = 10;
  double dist = 0.0;
  RunHooks hooks;
  hooks.on_sample = [&](double, const ModelState& s) {
    dist = std::max(dist, factorization_distance(std::get<HybridDensity>(s)));
  };
  const RunResult run = rk4_run(ModelKind::ehrenfest_density, ModelState(P), H, sc, hooks);

  const UhlmannSplit u{D0, WaveOpField(g, 2, 2)};
  UhlmannSplit uc = u;
  const SmallMatrix w = matrix_function(rho0, [](double x) { return std::sqrt(std::max(x, 0.0)); });
  for (std::size_t k = 0; k < g.points(); ++k) uc.W.block(k) = w;
  const double su = entropy_uhlmann(uc).value, sm = entropy_meanfield(D0, rho0);
  const double gap = std::abs(su - sm);
  return {!run.aborted && dist < 1e-8 && gap < 1e-12,
          fmt("factorization distance %.2e (tol 1e-8); |S_uhlmann - S_meanfield| %.2e (tol 1e-12)", dist, gap)};
}

Verdict equilibrium_stationarity() {
  const ScenarioConfig cfg = load_config(kConfigs / "dephasing_equilibrium.json");
  const EquilibriumOutcome eq = run_equilibrium(cfg);
  const StationarityReport& st = eq.stationarity;
  const HamiltonianFields H = build(cfg.hamiltonian, cfg.grid);
  ScenarioConfig check = cfg;
  check.time.t_final = cfg.equilibrium->t_check;
  const StepperConfig sc = stepper_config(check, H);

  // Negative control: the Gibbs density modulated by 10%. The first variational
  // condition does not see D, so the control is measured on the D change and on
  // the Gibbs residual.
  EquilibriumResult bad = eq.result;
  auto& s = std::get<ConditionalSplit>(bad.state);
  const PhaseGrid& g = cfg.grid;
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) s.D(i, j) *= 1.0 + 0.1 * std::sin(g.q(i));
  s.D *= 1.0 / integrate(s.D);
  const StationarityReport neg = stationarity_residual(bad, H, sc.dt, sc.steps);

  constexpr double kDTol = 1e-5, kStateTol = 1e-5, kMarinaTol = 1e-6, kControl = 100.0;
  const bool ok = !st.aborted && st.d_change < kDTol && st.state_change < kStateTol && st.marina_residual < kMarinaTol &&
                  neg.d_change >= kControl * kDTol && neg.gibbs_residual >= kControl * kMarinaTol;
  return {ok, fmt("dD %.2e (tol 1e-5), dpsi %.2e (tol 1e-5), marina %.2e (tol 1e-6); control dD %.2e, gibbs %.2e",
                  st.d_change, st.state_change, st.marina_residual, neg.d_change, neg.gibbs_residual)};
}

Verdict mu_inversion() {
  MaxEntProblem p;
  p.representation = Representation::mean_field;
  p.hamiltonian = HamiltonianSpec::uncoupled(PhaseFunction::harmonic(1.0, 1.0), SmallMatrix::Zero(1, 1));
  p.grid = PhaseGrid(-12.0, 12.0, -12.0, 12.0, 128, 128);
  bool ok = true;
  double worst = 0.0;
  for (double E : {0.25, 0.5, 1.0, 2.0}) {
    p.energy = E;
    const double err = std::abs(solve_mu(p).mu * E - 1.0);
    worst = std::max(worst, err);
    ok = ok && err < 1e-3;
  }
  return {ok, fmt("max |mu E - 1| %.2e over E in {0.25,0.5,1,2} (tol 1e-3)", worst)};
}

Verdict poincare_loop() {
  const NanowireRuns& r = nanowire_runs();
  const double d64 = drift(r.coarse, &DiagnosticRow::poincare), d128 = drift(r.fine, &DiagnosticRow::poincare);
  return {d64 < 1e-3 && 2 * d128 <= d64, fmt("drift %.2e (tol 1e-3) -> %.2e at 128^2 (needs <= half)", d64, d128)};
}

Verdict lambda_transport() {
  std::vector<double> spacing, residual;
  double dt0 = 0.0;
  for (int n : {32, 64, 128}) {
    ScenarioConfig cfg = nanowire(n);
    cfg.initial.state.kind = StateProfile::Kind::twisted;
    const HamiltonianFields H = build(cfg.hamiltonian, cfg.grid);
    if (n == 32) dt0 = stepper_config(cfg, H).dt;
    StepperConfig sc;
    sc.dt = dt0 * 32 / n;
    sc.steps = static_cast<int>(std::lround(0.5 / dt0)) * n / 32;
    sc.keep_samples = true;
    const RunResult run = rk4_run(ModelKind::ehrenfest_conditional, ModelState(initial_conditional(cfg, H)), H, sc);
    std::vector<ConditionalSplit> samples;
    for (const auto& s : run.samples) samples.push_back(std::get<ConditionalSplit>(s));
    const std::vector<double> res = lambda_transport_residual(samples, run.sample_times, H);
    spacing.push_back(cfg.grid.dq());
    residual.push_back(*std::max_element(res.begin(), res.end()));
  }
  const double order = fit_log_slope(spacing, residual).first;
  return {order >= 2.0, fmt("residual %.2e, %.2e, %.2e; observed order %.2f (needs >= 2)", residual[0], residual[1],
                            residual[2], order)};
}

Verdict beyond_ehrenfest() {
  // (a) a scalar Hamiltonian moves Tr P by classical Liouville
  const PhaseGrid g = testing::torus(64);
  const HamiltonianFields Hc =
      build(HamiltonianSpec::uncoupled(PhaseFunction::trig_harmonic(1.0, 1.0), SmallMatrix::Zero(2, 2)), g);
  const HybridDensity P0 = compose(random_mixed_split(g, 2, 5));
  StepperConfig sc;
  sc.dt = 0.2 * g.dq() / max_speed_bound(Hc);
  sc.steps = static_cast<int>(std::ceil(1.0 / sc.dt));
  sc.dt = 1.0 / sc.steps;
  sc.sample_every = sc.steps;
  const RunResult beyond = rk4_run(ModelKind::beyond_ehrenfest, ModelState(P0), Hc, sc);
  const RunResult classical =
      rk4_run(ModelKind::mean_field, ModelState(MeanFieldState{classical_density(P0), quantum_marginal(P0)}), Hc, sc);
  const ScalarField Db = classical_density(std::get<HybridDensity>(beyond.state));
  const ScalarField& Dc = std::get<MeanFieldState>(classical.state).D;
  double l1 = 0.0;
  for (std::size_t k = 0; k < g.points(); ++k) l1 += std::abs(Db[k] - Dc[k]);
  l1 *= g.cell_area();

  // (b) uniform P has no gradient corrections
  const HamiltonianFields Hn = build(nanowire(64).hamiltonian, g);
  std::mt19937_64 rng(8);
  const SmallMatrix rho = testing::random_density(rng, 2) / g.area();
  HybridDensity U{MatrixField(g, 2, 2)};
  for (std::size_t k = 0; k < g.points(); ++k) U.P.block(k) = rho;
  const double tend = rel_distance(beyond_ehrenfest_rhs(U, Hn).P, ehrenfest_rhs(U, Hn).P);

  // (c) energy drift over a short run at two resolutions
  double drifts[2];
  for (int level = 0; level < 2; ++level) {
    const PhaseGrid gl = testing::torus(32 << level);
    const HamiltonianFields H = build(nanowire(32 << level).hamiltonian, gl);
    const HybridDensity P = compose(random_mixed_split(gl, 2, 9));
    StepperConfig s;
    s.dt = 0.2 * testing::torus(32).dq() / max_speed_bound(H) / (1 << level);
    s.steps = static_cast<int>(std::ceil(0.5 / s.dt));
    s.dt = 0.5 / s.steps;
    const double e0 = beyond_energy(P, H);
    double d = 0.0;
    RunHooks hooks;
    hooks.on_sample = [&](double, const ModelState& st) {
      d = std::max(d, std::abs(beyond_energy(std::get<HybridDensity>(st), H) - e0));
    };
    const RunResult run = rk4_run(ModelKind::beyond_ehrenfest, ModelState(P), H, s, hooks);
    drifts[level] = run.aborted ? std::nan("") : d / std::abs(e0);
  }
  const bool ok = !beyond.aborted && l1 < 1e-6 && tend < 1e-10 && drifts[1] < 1e-3 && drifts[1] < drifts[0];
  return {ok, fmt("(a) L1 %.2e (tol 1e-6); (b) %.2e (tol 1e-10); (c) energy drift %.2e -> %.2e (tol 1e-3)", l1, tend,
                  drifts[0], drifts[1])};
}

Verdict representation_equivalence() {
  const PhaseGrid g = testing::torus(64);
  double trip = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const HybridDensity P = compose(random_mixed_split(g, 2, seed));
    trip = std::max(trip, rel_distance(compose(uhlmann_factor(P, 2)).P, P.P));
  }
  const NanowireRuns& r = nanowire_runs();
  ScenarioConfig cfg = nanowire(64);
  cfg.model = ModelKind::ehrenfest_density;
  const SimulateOutcome dens = run_simulate(cfg);
  const HybridDensity from_split = compose(std::get<ConditionalSplit>(r.coarse.run.state));
  const double gap = rel_distance(from_split.P, std::get<HybridDensity>(dens.run.state).P);
  return {trip < 1e-10 && gap < 1e-6 && !dens.run.aborted,
          fmt("round trip %.2e (tol 1e-10); (D,psi) vs P after one period %.2e (tol 1e-6)", trip, gap)};
}

}  // namespace

int main() {
  const nlohmann::json casimir = run_casimir_check(nanowire(64));
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"Casimir conservation", casimir_conservation},
      {"energy and mass", energy_and_mass},
      {"Casimir bracket property", [&] { return casimir_brackets(casimir); }},
      {"bracket-dynamics consistency", [&] { return bracket_dynamics(casimir); }},
      {"mean-field purity", meanfield_purity},
      {"Renyi limits", renyi_limits},
      {"mean-field reduction", meanfield_reduction},
      {"equilibrium stationarity", equilibrium_stationarity},
      {"mu inversion", mu_inversion},
      {"Poincare loop", poincare_loop},
      {"Lambda transport", lambda_transport},
      {"beyond-Ehrenfest", beyond_ehrenfest},
      {"representation equivalence", representation_equivalence},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += v.pass ? 0 : 1;
    std::printf("%s %2zu %-30s %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, v.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed;
}
