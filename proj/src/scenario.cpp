#include "mqc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "mqc/linalg.hpp"

namespace mqc {

using nlohmann::json;

// --------------------------------------------------------------- config access

namespace {

/// JSON node that remembers its key path for error messages.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return *j_; }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  Node at(const std::string& key) const {
    if (!j_->is_object()) throw ConfigError("key '" + path_ + "': expected an object");
    auto it = j_->find(key);
    if (it == j_->end()) throw ConfigError("missing key '" + child(key) + "'");
    return Node(*it, child(key));
  }
  std::optional<Node> find(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return at(key);
  }

  double number() const {
    if (!j_->is_number()) throw ConfigError("key '" + path_ + "': expected a number");
    return j_->get<double>();
  }
  int integer() const {
    if (!j_->is_number_integer()) throw ConfigError("key '" + path_ + "': expected an integer");
    return j_->get<int>();
  }
  std::string string() const {
    if (!j_->is_string()) throw ConfigError("key '" + path_ + "': expected a string");
    return j_->get<std::string>();
  }
  bool boolean() const {
    if (!j_->is_boolean()) throw ConfigError("key '" + path_ + "': expected true or false");
    return j_->get<bool>();
  }

  double number(const std::string& key, double fallback) const { return has(key) ? at(key).number() : fallback; }
  int integer(const std::string& key, int fallback) const { return has(key) ? at(key).integer() : fallback; }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? at(key).string() : fallback;
  }
  bool boolean(const std::string& key, bool fallback) const { return has(key) ? at(key).boolean() : fallback; }

  std::vector<Node> items() const {
    if (!j_->is_array()) throw ConfigError("key '" + path_ + "': expected an array");
    std::vector<Node> out;
    for (std::size_t i = 0; i < j_->size(); ++i) out.emplace_back((*j_)[i], path_ + "[" + std::to_string(i) + "]");
    return out;
  }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* j_;
  std::string path_;
};

template <class Fn>
auto rethrow_as_config(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("key '" + path + "': " + e.what());
  }
}

PhaseFunction phase_term(const Node& t) {
  if (t.raw().is_number()) return PhaseFunction::constant(t.number());
  const std::string type = t.at("type").string();
  if (type == "constant") return PhaseFunction::constant(t.at("c").number());
  if (type == "harmonic")
    return PhaseFunction::harmonic(t.number("cq", 1.0), t.number("cp", 1.0), t.number("qc", 0.0),
                                   t.number("pc", 0.0));
  if (type == "trig_harmonic")
    return PhaseFunction::trig_harmonic(t.number("cq", 1.0), t.number("cp", 1.0), t.number("length", 1.0));
  if (type == "linear") return PhaseFunction::linear(t.number("aq", 0.0), t.number("ap", 0.0));
  if (type == "sine_q") return PhaseFunction::sine_q(t.at("amp").number(), t.number("k", 1.0));
  if (type == "sin_sq_sum") return PhaseFunction::sin_sq_sum(t.number("s", 1.0));
  if (type == "monomial") {
    PhaseTerm term;
    term.kind = PhaseTerm::Kind::monomial;
    term.coef = t.at("coef").number();
    term.pow_q = t.integer("pow_q", 0);
    term.pow_p = t.integer("pow_p", 0);
    term.center_q = t.number("center_q", 0.0);
    term.center_p = t.number("center_p", 0.0);
    if (term.pow_q < 0 || term.pow_p < 0) throw ConfigError("key '" + t.path() + "': negative power");
    return PhaseFunction({term});
  }
  if (type == "cosine") {
    PhaseTerm term;
    term.kind = PhaseTerm::Kind::cosine;
    term.coef = t.at("coef").number();
    term.kq = t.number("kq", 0.0);
    term.kp = t.number("kp", 0.0);
    term.phase = t.number("phase", 0.0);
    return PhaseFunction({term});
  }
  throw ConfigError("key '" + t.path() + ".type': unknown phase-function term '" + type + "'");
}

}  // namespace

PhaseFunction parse_phase_function(const json& node, const std::string& path) {
  const Node n(node, path);
  if (node.is_array()) {
    PhaseFunction f;
    for (const Node& t : n.items()) f += phase_term(t);
    return f;
  }
  return phase_term(n);
}

SmallMatrix parse_matrix(const json& node, int n, const std::string& path) {
  const Node nd(node, path);
  if (node.is_string()) {
    const std::string name = node.get<std::string>();
    auto two = [&](const SmallMatrix& m) {
      if (n != 2) throw ConfigError("key '" + path + "': '" + name + "' needs a quantum dimension of 2");
      return m;
    };
    if (name == "sigma_x") return two(pauli_x());
    if (name == "sigma_y") return two(pauli_y());
    if (name == "sigma_z") return two(pauli_z());
    if (name == "identity") return identity(n);
    if (name == "zero") return SmallMatrix::Zero(n, n);
    throw ConfigError("key '" + path + "': unknown matrix '" + name + "'");
  }
  if (node.is_object()) {
    const double s = nd.number("scale", 1.0);
    return s * parse_matrix(nd.at("matrix").raw(), n, nd.path() + ".matrix");
  }
  const auto rows = nd.items();
  if (static_cast<int>(rows.size()) != n)
    throw ConfigError("key '" + path + "': expected " + std::to_string(n) + " rows");
  SmallMatrix m(n, n);
  for (int r = 0; r < n; ++r) {
    const auto cols = rows[r].items();
    if (static_cast<int>(cols.size()) != n)
      throw ConfigError("key '" + rows[r].path() + "': expected " + std::to_string(n) + " entries");
    for (int c = 0; c < n; ++c) {
      if (cols[c].raw().is_array()) {
        const auto parts = cols[c].items();
        if (parts.size() != 2) throw ConfigError("key '" + cols[c].path() + "': expected [re, im]");
        m(r, c) = cplx(parts[0].number(), parts[1].number());
      } else {
        m(r, c) = cols[c].number();
      }
    }
  }
  if (!is_hermitian(m)) throw ConfigError("key '" + path + "': matrix is not Hermitian");
  return m;
}

HamiltonianSpec parse_hamiltonian(const json& node, int n, const std::filesystem::path& base_dir,
                                  const std::string& path) {
  const Node h(node, path);
  const std::string kind = h.at("kind").string();
  auto fn = [&](const std::string& key) { return parse_phase_function(h.at(key).raw(), h.path() + "." + key); };
  auto mat = [&](const std::string& key) { return parse_matrix(h.at(key).raw(), n, h.path() + "." + key); };
  return rethrow_as_config(path, [&]() -> HamiltonianSpec {
    if (kind == "zero") return HamiltonianSpec::uncoupled(PhaseFunction(), SmallMatrix::Zero(n, n));
    if (kind == "uncoupled")
      return HamiltonianSpec::uncoupled(h.has("HC") ? fn("HC") : PhaseFunction(),
                                        h.has("HQ") ? mat("HQ") : SmallMatrix::Zero(n, n));
    if (kind == "nanowire") {
      if (n != 2) throw ConfigError("key '" + path + "': the nanowire Hamiltonian is two-level (grid.n = 2)");
      NanowireParams p;
      p.mass = h.number("mass", p.mass);
      p.eta = h.number("eta", p.eta);
      p.B = h.number("B", p.B);
      p.confinement = h.number("confinement", p.confinement);
      p.trig = h.boolean("trig", p.trig);
      p.length = h.number("length", p.length);
      return HamiltonianSpec::nanowire(p);
    }
    if (kind == "pure_dephasing") return HamiltonianSpec::pure_dephasing(fn("H0"), fn("HI"), mat("A"));
    if (kind == "zeta_composed") {
      std::vector<SmallMatrix> coeffs;
      for (const Node& c : h.at("coeffs").items()) coeffs.push_back(parse_matrix(c.raw(), n, c.path()));
      return HamiltonianSpec::zeta_composed(fn("zeta"), coeffs);
    }
    if (kind == "tabulated") {
      const std::filesystem::path file = base_dir / h.at("file").string();
      const ModelState s = read_snapshot_file(file);
      const auto* P = std::get_if<HybridDensity>(&s);
      if (!P) throw ConfigError("key '" + path + ".file': tabulated Hamiltonians use a density snapshot");
      if (P->dim() != n) throw ConfigError("key '" + path + ".file': matrix dimension differs from grid.n");
      return HamiltonianSpec::tabulated(P->P);
    }
    throw ConfigError("key '" + path + ".kind': unknown Hamiltonian kind '" + kind + "'");
  });
}

ScenarioConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  const Node root(doc, "");
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  ScenarioConfig cfg;
  cfg.base_dir = base_dir;

  const Node dom = root.at("domain");
  const Node grd = root.at("grid");
  const double hbar = root.has("physics") ? root.at("physics").number("hbar", 1.0) : 1.0;
  const double q0 = dom.at("q0").number(), q1 = dom.at("q1").number();
  const double p0 = dom.at("p0").number(), p1 = dom.at("p1").number();
  const int nq = grd.at("Nq").integer(), np = grd.at("Np").integer();
  if (!(q1 > q0)) throw ConfigError("key 'domain.q1': must exceed domain.q0");
  if (!(p1 > p0)) throw ConfigError("key 'domain.p1': must exceed domain.p0");
  if (nq < 5 || np < 5) throw ConfigError("key 'grid': Nq and Np must be at least 5");
  if (!(hbar > 0.0)) throw ConfigError("key 'physics.hbar': must be positive");
  cfg.grid = PhaseGrid(q0, q1, p0, p1, nq, np, hbar);
  cfg.n = grd.integer("n", 2);
  cfg.m = grd.integer("m", cfg.n);
  if (cfg.n < 1 || cfg.n > kMaxDim) throw ConfigError("key 'grid.n': must lie in [1, " + std::to_string(kMaxDim) + "]");
  if (cfg.m < 1 || cfg.m > kMaxDim) throw ConfigError("key 'grid.m': must lie in [1, " + std::to_string(kMaxDim) + "]");

  if (root.has("model")) {
    const std::string name = root.at("model").string();
    cfg.model = rethrow_as_config("model", [&] { return model_kind_from_string(name); });
  }
  cfg.hamiltonian = parse_hamiltonian(root.at("hamiltonian").raw(), cfg.n, base_dir);

  if (auto t = root.find("time")) {
    if (t->has("dt")) cfg.time.dt = t->at("dt").number();
    cfg.time.cfl = t->number("cfl", cfg.time.cfl);
    if (t->has("steps")) cfg.time.steps = t->at("steps").integer();
    if (t->has("t_final")) cfg.time.t_final = t->at("t_final").number();
    cfg.time.sample_every = t->integer("sample_every", 1);
    cfg.trace_regularization = t->number("trace_regularization", cfg.trace_regularization);
    if (cfg.time.dt && !(*cfg.time.dt > 0.0)) throw ConfigError("key 'time.dt': must be positive");
    if (!(cfg.time.cfl > 0.0)) throw ConfigError("key 'time.cfl': must be positive");
    if (cfg.time.steps && *cfg.time.steps < 0) throw ConfigError("key 'time.steps': must be non-negative");
    if (cfg.time.t_final && !(*cfg.time.t_final >= 0.0)) throw ConfigError("key 'time.t_final': must be non-negative");
    if (cfg.time.sample_every < 1) throw ConfigError("key 'time.sample_every': must be at least 1");
  }

  if (auto in = root.find("initial")) {
    InitialSpec& is = cfg.initial;
    is.representation = in->string("representation", is.representation);
    if (is.representation != "conditional" && is.representation != "density" && is.representation != "uhlmann" &&
        is.representation != "mean_field")
      throw ConfigError("key 'initial.representation': unknown representation '" + is.representation + "'");
    if (in->has("file")) is.file = base_dir / in->at("file").string();
    if (auto d = in->find("D")) {
      const std::string prof = d->at("profile").string();
      DensityProfile& dp = is.density;
      if (prof == "gaussian") {
        dp.kind = DensityProfile::Kind::gaussian;
      } else if (prof == "von_mises") {
        dp.kind = DensityProfile::Kind::von_mises;
      } else if (prof == "uniform") {
        dp.kind = DensityProfile::Kind::uniform;
      } else {
        throw ConfigError("key '" + d->path() + ".profile': unknown density profile '" + prof + "'");
      }
      dp.qc = d->number("qc", dp.qc);
      dp.pc = d->number("pc", dp.pc);
      dp.sigma_q = d->number("sigma_q", dp.sigma_q);
      dp.sigma_p = d->number("sigma_p", dp.sigma_p);
      dp.kappa_q = d->number("kappa_q", dp.kappa_q);
      dp.kappa_p = d->number("kappa_p", dp.kappa_p);
      if (!(dp.sigma_q > 0.0) || !(dp.sigma_p > 0.0)) throw ConfigError("key '" + d->path() + "': widths must be positive");
    }
    if (auto s = in->find("psi")) {
      const std::string prof = s->at("profile").string();
      StateProfile& sp = is.state;
      if (prof == "constant") {
        sp.kind = StateProfile::Kind::constant;
      } else if (prof == "eigen") {
        sp.kind = StateProfile::Kind::eigen;
      } else if (prof == "twisted") {
        sp.kind = StateProfile::Kind::twisted;
      } else {
        throw ConfigError("key '" + s->path() + ".profile': unknown state profile '" + prof + "'");
      }
      sp.theta = s->number("theta", sp.theta);
      sp.phase = s->number("phase", sp.phase);
      sp.branch = s->integer("branch", sp.branch);
      sp.amp = s->number("amp", sp.amp);
      sp.k = s->integer("k", sp.k);
      sp.l = s->integer("l", sp.l);
      if (sp.branch < 0 || sp.branch >= cfg.n) throw ConfigError("key '" + s->path() + ".branch': out of range");
    }
    if (auto w = in->find("weights")) {
      for (const Node& x : w->items()) {
        const double v = x.number();
        if (!(v >= 0.0)) throw ConfigError("key '" + x.path() + "': weights must be non-negative");
        is.weights.push_back(v);
      }
      if (static_cast<int>(is.weights.size()) > cfg.n)
        throw ConfigError("key '" + w->path() + "': more weights than quantum dimensions");
    }
  }

  if (auto d = root.find("diagnostics")) {
    cfg.diagnostics.renyi_alpha = d->number("renyi_alpha", cfg.diagnostics.renyi_alpha);
    if (auto l = d->find("loop")) {
      LoopSpec ls;
      ls.qc = l->number("qc", ls.qc);
      ls.pc = l->number("pc", ls.pc);
      ls.radius = l->number("radius", ls.radius);
      ls.points = l->integer("K", ls.points);
      if (ls.points < 8) throw ConfigError("key '" + l->path() + ".K': need at least 8 loop points");
      cfg.diagnostics.loop = ls;
    }
    if (auto p = d->find("probes")) {
      ProbeSpec& ps = cfg.diagnostics.probes;
      ps.count = p->integer("count", ps.count);
      ps.seed = static_cast<std::uint64_t>(p->integer("seed", static_cast<int>(ps.seed)));
      ps.kmax = p->integer("kmax", ps.kmax);
      ps.twist = p->number("twist", ps.twist);
    }
  }

  if (auto e = root.find("equilibrium")) {
    EquilibriumSpec es;
    const std::string rep = e->string("representation", "conditional");
    es.representation = rethrow_as_config(e->path() + ".representation", [&] { return representation_from_string(rep); });
    if (e->has("E")) es.energy = e->at("E").number();
    if (e->has("mu")) es.mu = e->at("mu").number();
    if (es.energy.has_value() == es.mu.has_value())
      throw ConfigError("key 'equilibrium': give exactly one of 'E' and 'mu'");
    es.branch = e->integer("branch", 0);
    if (es.branch < 0 || es.branch >= cfg.n) throw ConfigError("key 'equilibrium.branch': out of range");
    es.t_check = e->number("t_check", es.t_check);
    es.probes = e->integer("probes", es.probes);
    cfg.equilibrium = es;
  }

  if (auto c = root.find("convergence")) {
    if (auto f = c->find("factors")) {
      cfg.convergence.factors.clear();
      for (const Node& x : f->items()) cfg.convergence.factors.push_back(x.integer());
    }
    cfg.convergence.mode = c->string("mode", cfg.convergence.mode);
    if (cfg.convergence.mode != "space" && cfg.convergence.mode != "time" && cfg.convergence.mode != "both")
      throw ConfigError("key 'convergence.mode': expected space, time or both");
  }
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open configuration " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("configuration " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

// ------------------------------------------------------------ initial states

double max_speed_bound(const HamiltonianFields& H) {
  double v = 0.0;
  for (std::size_t k = 0; k < H.H.points(); ++k) {
    for (const MatrixField* f : {&H.dq, &H.dp}) {
      const HermitianEigen e = hermitian_eigen(hermitian_part(f->block(k)), false);
      v = std::max({v, std::abs(e.values[0]), std::abs(e.values[e.values.size() - 1])});
    }
  }
  return v;
}

StepperConfig stepper_config(const ScenarioConfig& cfg, const HamiltonianFields& H) {
  StepperConfig sc;
  sc.sample_every = cfg.time.sample_every;
  sc.trace_regularization = cfg.trace_regularization;
  const TimeSpec& t = cfg.time;
  if (t.t_final && t.steps) {
    if (*t.steps == 0) throw ConfigError("key 'time.steps': must be positive when time.t_final is given");
    sc.steps = *t.steps;
    sc.dt = *t.t_final / *t.steps;
    if (!(sc.dt > 0.0)) throw ConfigError("key 'time.t_final': must be positive when time.steps is given");
    return sc;
  }
  if (t.dt) {
    sc.dt = *t.dt;
  } else {
    const double v = max_speed_bound(H);
    if (!(v > 0.0)) throw ConfigError("missing key 'time.dt' (required when the Hamiltonian has no phase-space gradient)");
    sc.dt = t.cfl * std::min(cfg.grid.dq(), cfg.grid.dp()) / v;
  }
  if (t.t_final) {
    sc.steps = static_cast<int>(std::ceil(*t.t_final / sc.dt - 1e-9));
    if (sc.steps > 0) sc.dt = *t.t_final / sc.steps;
  } else if (t.steps) {
    sc.steps = *t.steps;
  } else {
    throw ConfigError("missing key 'time.steps' (or time.t_final)");
  }
  return sc;
}

namespace {

ScalarField density_profile(const DensityProfile& d, const PhaseGrid& g) {
  const double wq = 2.0 * std::numbers::pi / g.length_q(), wp = 2.0 * std::numbers::pi / g.length_p();
  ScalarField D = sample(g, [&](double q, double p) {
    switch (d.kind) {
      case DensityProfile::Kind::gaussian:
        return std::exp(-0.5 * std::pow((q - d.qc) / d.sigma_q, 2) - 0.5 * std::pow((p - d.pc) / d.sigma_p, 2));
      case DensityProfile::Kind::von_mises:
        return std::exp(d.kappa_q * (std::cos(wq * (q - d.qc)) - 1.0) + d.kappa_p * (std::cos(wp * (p - d.pc)) - 1.0));
      case DensityProfile::Kind::uniform:
        return 1.0;
    }
    return 1.0;
  });
  D *= 1.0 / integrate(D);
  return D;
}

/// Orthonormal basis whose first vector is v (Gram-Schmidt against the standard basis).
SmallMatrix completion(const SmallVector& v) {
  const int n = static_cast<int>(v.size());
  SmallMatrix B(n, n);
  B.col(0) = v;
  int filled = 1;
  for (int a = 0; a < n && filled < n; ++a) {
    SmallVector e = SmallVector::Zero(n);
    e[a] = 1.0;
    for (int b = 0; b < filled; ++b) e -= B.col(b) * B.col(b).dot(e);
    if (e.norm() > 1e-6) B.col(filled++) = e.normalized();
  }
  return B;
}

}  // namespace

ConditionalSplit initial_conditional(const ScenarioConfig& cfg, const HamiltonianFields& H) {
  const PhaseGrid& g = cfg.grid;
  const int n = cfg.n;
  ConditionalSplit s{density_profile(cfg.initial.density, g), StateField(g, n, 1)};
  const StateProfile& sp = cfg.initial.state;
  if (sp.kind == StateProfile::Kind::eigen) {
    s.psi = eigenfields(H.H).states[sp.branch];
    return s;
  }
  const double wq = 2.0 * std::numbers::pi / g.length_q(), wp = 2.0 * std::numbers::pi / g.length_p();
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) {
      double th = sp.theta;
      double ph = sp.phase;
      if (sp.kind == StateProfile::Kind::twisted) {
        th += sp.amp * std::sin(sp.k * wp * (g.p(j) - g.p0()));
        ph += sp.l * wq * (g.q(i) - g.q0());
      }
      if (n == 1) {
        s.psi(i, j, 0) = std::polar(1.0, ph);
        continue;
      }
      s.psi(i, j, 0) = std::cos(th);
      s.psi(i, j, 1) = std::polar(std::sin(th), ph);
    }
  return s;
}

ModelState convert_state(const ModelState& s, ModelKind target, int ancilla) {
  const bool density_model = target == ModelKind::ehrenfest_density || target == ModelKind::beyond_ehrenfest;
  if (state_matches(target, s)) return s;
  auto meanfield_from = [](const ScalarField& D, const SmallMatrix& avg) {
    return MeanFieldState{D, avg / avg.trace().real()};
  };
  if (const auto* c = std::get_if<ConditionalSplit>(&s)) {
    if (density_model) return compose(*c);
    if (target == ModelKind::ehrenfest_uhlmann) return pad_to_uhlmann(*c, ancilla);
    return meanfield_from(c->D, quantum_marginal(compose(*c)));
  }
  if (const auto* u = std::get_if<UhlmannSplit>(&s)) {
    if (density_model) return compose(*u);
    if (target == ModelKind::mean_field) return meanfield_from(u->D, quantum_marginal(compose(*u)));
    throw InvalidInput("a wave-operator state cannot be evolved by the conditional model");
  }
  if (const auto* P = std::get_if<HybridDensity>(&s)) {
    if (target == ModelKind::ehrenfest_uhlmann) return uhlmann_factor(*P, ancilla);
    if (target == ModelKind::mean_field) return meanfield_from(classical_density(*P), quantum_marginal(*P));
    throw InvalidInput("a density state cannot be evolved by the conditional model");
  }
  const auto& mf = std::get<MeanFieldState>(s);
  HybridDensity P{MatrixField(mf.grid(), static_cast<int>(mf.rho.rows()), static_cast<int>(mf.rho.cols()))};
  for (std::size_t k = 0; k < P.P.points(); ++k) P.P.block(k) = mf.D[k] * mf.rho;
  if (density_model) return P;
  if (target == ModelKind::ehrenfest_uhlmann) return uhlmann_factor(P, ancilla);
  throw InvalidInput("a mean-field state cannot be evolved by the conditional model");
}

ModelState initial_state(const ScenarioConfig& cfg, const HamiltonianFields& H) {
  if (cfg.initial.file) {
    ModelState s = read_snapshot_file(*cfg.initial.file);
    if (!(std::visit([](const auto& x) { return x.grid(); }, s) == cfg.grid))
      throw ConfigError("key 'initial.file': snapshot grid differs from the configured grid");
    return convert_state(s, cfg.model, cfg.m);
  }
  ConditionalSplit c = initial_conditional(cfg, H);
  const std::vector<double>& w = cfg.initial.weights;
  if (w.empty()) {
    if (cfg.initial.representation == "conditional") return convert_state(c, cfg.model, cfg.m);
    if (cfg.initial.representation == "uhlmann") return convert_state(pad_to_uhlmann(c, cfg.m), cfg.model, cfg.m);
    if (cfg.initial.representation == "density") return convert_state(compose(c), cfg.model, cfg.m);
    return convert_state(convert_state(c, ModelKind::mean_field, cfg.m), cfg.model, cfg.m);
  }
  // mixture: W = [sqrt(w_0) b_0, sqrt(w_1) b_1, ...] with b the completion of psi
  if (cfg.m < static_cast<int>(w.size())) throw ConfigError("key 'initial.weights': more weights than grid.m");
  double total = 0.0;
  for (double x : w) total += x;
  if (!(total > 0.0)) throw ConfigError("key 'initial.weights': weights sum to zero");
  const PhaseGrid& g = cfg.grid;
  UhlmannSplit u{c.D, WaveOpField(g, cfg.n, cfg.m)};
  for (std::size_t k = 0; k < g.points(); ++k) {
    SmallVector v(cfg.n);
    for (int a = 0; a < cfg.n; ++a) v[a] = c.psi.at(k)[a];
    const SmallMatrix B = completion(v);
    auto W = u.W.block(k);
    for (std::size_t a = 0; a < w.size(); ++a) W.col(a) = std::sqrt(w[a] / total) * B.col(a);
  }
  if (cfg.model == ModelKind::ehrenfest_conditional)
    throw ConfigError("key 'initial.weights': mixed initial data cannot be evolved by the conditional model");
  return convert_state(u, cfg.model, cfg.m);
}

// ------------------------------------------------------------------ simulate

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot write " + path.string());
  os << text;
}

json run_metadata(const ScenarioConfig& cfg, const StepperConfig& sc, const RunResult& run) {
  json meta;
  meta["model"] = to_string(cfg.model);
  meta["hamiltonian"] = to_string(cfg.hamiltonian.kind());
  meta["grid"] = {{"Nq", cfg.grid.nq()}, {"Np", cfg.grid.np()}, {"n", cfg.n}, {"m", cfg.m}};
  meta["dt"] = sc.dt;
  meta["steps"] = sc.steps;
  meta["steps_taken"] = run.steps_taken;
  meta["max_cfl"] = run.max_cfl;
  meta["max_antiherm_resid"] = run.max_antiherm;
  meta["warnings"] = run.warnings;
  meta["aborted"] = run.aborted;
  meta["abort_reason"] = run.abort_reason;
  if (cfg.model == ModelKind::beyond_ehrenfest)
    meta["operator_ordering"] = "Tr(X_H . grad Sigma - Sigma . grad X_H) evaluated left to right as written";
  return meta;
}

ScalarField classical_part_of(const ModelState& s) {
  return std::visit(
      [](const auto& x) -> ScalarField {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, HybridDensity>) {
          return classical_density(x);
        } else {
          return x.D;
        }
      },
      s);
}

}  // namespace

SimulateOutcome run_simulate(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  const HamiltonianFields H = build(cfg.hamiltonian, cfg.grid);
  SimulateOutcome out;
  out.stepper = stepper_config(cfg, H);
  const ModelState s0 = initial_state(cfg, H);
  DiagnosticOptions opt;
  opt.renyi_alpha = cfg.diagnostics.renyi_alpha;
  const ModelKind model = cfg.model;

  if (cfg.diagnostics.loop && model == ModelKind::ehrenfest_conditional) {
    const LoopSpec& ls = *cfg.diagnostics.loop;
    const LoopTracer loop = LoopTracer::circle(ls.qc, ls.pc, ls.radius, ls.points);
    DiagnosticSeries series;
    const LoopRun lr = poincare_run(std::get<ConditionalSplit>(s0), loop, H, out.stepper,
                                    [&](double t, const ConditionalSplit& s, double value) {
                                      DiagnosticRow row = standard_diagnostics(model, t, ModelState(s), H, opt);
                                      row.poincare = value;
                                      series.rows.push_back(row);
                                    });
    out.run.state = lr.state;
    out.run.series = std::move(series);
    out.run.aborted = lr.aborted;
    out.run.abort_reason = lr.abort_reason;
    out.run.steps_taken = lr.steps_taken;
    out.run.max_cfl = lr.max_cfl;
    out.run.warnings = lr.warnings;
  } else {
    RunHooks hooks;
    hooks.diagnostics = [&](double t, const ModelState& s) { return standard_diagnostics(model, t, s, H, opt); };
    out.run = rk4_run(model, s0, H, out.stepper, hooks);
  }
  out.exit_code = out.run.aborted ? 2 : 0;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ostringstream csv;
    write_csv(csv, out.run.series);
    write_text(out_dir / "diagnostics.csv", csv.str());
    write_snapshot_file(out_dir / "initial.snap", s0);
    const auto final_name = out.run.aborted ? "abort.snap" : "final.snap";
    write_snapshot_file(out_dir / final_name, out.run.state);
    write_text(out_dir / "run.json", run_metadata(cfg, out.stepper, out.run).dump(2) + "\n");
    out.files = {out_dir / "diagnostics.csv", out_dir / "initial.snap", out_dir / final_name, out_dir / "run.json"};
  }
  return out;
}

// --------------------------------------------------------------- equilibrium

EquilibriumOutcome run_equilibrium(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  if (!cfg.equilibrium) throw ConfigError("missing key 'equilibrium'");
  const EquilibriumSpec& es = *cfg.equilibrium;
  MaxEntProblem problem;
  problem.representation = es.representation;
  problem.hamiltonian = cfg.hamiltonian;
  problem.grid = cfg.grid;
  problem.energy = es.energy;
  problem.mu = es.mu;
  problem.branch = es.branch;
  problem.ancilla = cfg.m;

  EquilibriumOutcome out;
  out.result = solve_equilibrium(problem);
  const HamiltonianFields H = build(cfg.hamiltonian, cfg.grid);
  ScenarioConfig check = cfg;
  check.time.t_final = es.t_check;
  check.time.steps.reset();
  const StepperConfig sc = stepper_config(check, H);
  out.stationarity = stationarity_residual(out.result, H, sc.dt, sc.steps);
  out.maximality = maximality_probe(out.result, H, es.probes);

  json& m = out.metrics;
  m["representation"] = to_string(out.result.representation);
  m["hamiltonian"] = to_string(cfg.hamiltonian.kind());
  m["branch"] = out.result.branch;
  m["mu"] = out.result.mu;
  m["Z"] = out.result.Z;
  m["energy"] = out.result.energy;
  if (es.energy) m["target_energy"] = *es.energy;
  m["lambda_deviation"] = out.result.lambda_deviation;
  m["entropy"] = out.maximality.entropy;
  m["notes"] = out.result.notes;
  const StationarityReport& st = out.stationarity;
  m["stationarity"] = {{"marina_residual", st.marina_residual}, {"gibbs_residual", st.gibbs_residual},
                       {"lambda2", st.lambda2},                 {"d_change", st.d_change},
                       {"state_change", st.state_change},       {"entropy_change", st.entropy_change},
                       {"t_check", st.t_check},                 {"dt", sc.dt},
                       {"aborted", st.aborted}};
  const MaximalityReport& mx = out.maximality;
  m["maximality"] = {{"probes", mx.probes},
                     {"violations", mx.violations},
                     {"max_perturbed_entropy", mx.max_perturbed},
                     {"max_constraint_error", mx.max_constraint_error}};
  if (const auto* mf = std::get_if<MeanFieldState>(&out.result.state)) {
    const MeanFieldResidual r = meanfield_maxent_residual(mf->D, mf->rho, H, out.result.mu);
    m["meanfield_residual"] = {{"quantum", r.quantum}, {"classical", r.classical}};
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_snapshot_file(out_dir / "equilibrium.snap", out.result.state);
    write_text(out_dir / "metrics.json", m.dump(2) + "\n");
  }
  return out;
}

// ------------------------------------------------------------ Casimir checks

json run_casimir_check(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  const ProbeSpec& ps = cfg.diagnostics.probes;
  const PhaseGrid& g = cfg.grid;
  const UhlmannSplit u = random_mixed_split(g, cfg.n, ps.seed, ps.twist);
  const HybridDensity P = compose(u);
  const MatrixField G1 = functional_derivative(Functional::c1(SpectralFunction::neg_x_log_x()), P);
  const GammaFunction gammas[] = {
      {GammaFunction::Kind::entropy},
      {GammaFunction::Kind::renyi, {}, cfg.diagnostics.renyi_alpha},
      {GammaFunction::Kind::phi, SpectralFunction::neg_x_log_x()},
      {GammaFunction::Kind::sigma, SpectralFunction::log()},
  };
  const char* gamma_names[] = {"entropy", "renyi", "c1_split", "c2_sigma_log"};
  double c1_ratio = 0.0, antisym = 0.0;
  double general[4] = {0.0, 0.0, 0.0, 0.0};
  for (int t = 0; t < ps.count; ++t) {
    const std::uint64_t s = ps.seed + 1000 + 2 * static_cast<std::uint64_t>(t);
    auto A = std::make_shared<MatrixField>(random_hermitian_field(g, cfg.n, ps.kmax, s));
    auto B = std::make_shared<MatrixField>(random_hermitian_field(g, cfg.n, ps.kmax, s + 1));
    const MatrixField F = functional_derivative(Functional::probe(A, B), P);
    const BracketValue b = hybrid_bracket(F, G1, P);
    const BracketValue b2 = hybrid_bracket(G1, F, P);
    c1_ratio = std::max(c1_ratio, std::abs(b.value) / b.bound);
    antisym = std::max(antisym, std::abs(b.value + b2.value) / b.scale);
    for (int k = 0; k < 4; ++k) {
      const CasimirProbe c = casimir_rate(u, F, gammas[k]);
      general[k] = std::max(general[k], std::abs(c.rate) / c.bound);
    }
  }
  json out;
  out["probes"] = ps.count;
  out["seed"] = ps.seed;
  out["c1_bracket_ratio"] = c1_ratio;
  out["antisymmetry"] = antisym;
  for (int k = 0; k < 4; ++k) out["split_rate_ratio"][gamma_names[k]] = general[k];

  const HamiltonianFields H = build(cfg.hamiltonian, g);
  ScenarioConfig dens = cfg;
  dens.model = ModelKind::ehrenfest_density;
  const HybridDensity P0 = std::get<HybridDensity>(initial_state(dens, H));
  const Functional fs[] = {Functional::mass(), Functional::second_moment_q(),
                           Functional::c1(SpectralFunction::neg_x_log_x())};
  for (const Functional& f : fs) {
    const ConsistencyReport r = bracket_consistency(f, P0, H);
    out["consistency"][f.name()] = {{"bracket", r.bracket}, {"chain", r.chain}, {"residual", r.residual}};
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "casimir.json", out.dump(2) + "\n");
  }
  return out;
}

// ---------------------------------------------------------------- convergence

std::pair<double, double> fit_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < std::min(x.size(), y.size()); ++k)
    if (x[k] > 0.0 && y[k] > 0.0) {
      lx.push_back(std::log(x[k]));
      ly.push_back(std::log(y[k]));
    }
  const std::size_t n = lx.size();
  if (n < 2) return {std::nan(""), std::nan("")};
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += lx[k];
    my += ly[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
    syy += (ly[k] - my) * (ly[k] - my);
  }
  const double slope = sxy / sxx;
  const double r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return {slope, r2};
}

ConvergenceTable run_convergence(const ScenarioConfig& cfg, const std::vector<int>& factors,
                                 const std::filesystem::path& out_dir) {
  if (factors.size() < 3) throw ConfigError("key 'convergence.factors': need at least 3 levels");
  for (std::size_t l = 0; l < factors.size(); ++l) {
    if (factors[l] < 1) throw ConfigError("key 'convergence.factors': factors must be positive");
    if (l > 0 && factors[l] % factors[l - 1] != 0)
      throw ConfigError("key 'convergence.factors': each factor must divide the next");
  }
  if (cfg.hamiltonian.kind() == HamiltonianKind::tabulated && cfg.convergence.mode != "time")
    throw UnsupportedError("spatial convergence needs an analytic Hamiltonian");
  const std::string& mode = cfg.convergence.mode;
  const bool refine_space = mode != "time";
  const bool refine_time = mode != "space";

  const HamiltonianFields H0 = build(cfg.hamiltonian, cfg.grid);
  const StepperConfig base = stepper_config(cfg, H0);
  const double t_final = base.dt * base.steps;
  const int rmax = factors.back();

  struct Level {
    double spacing;
    DiagnosticRow first, last;
    ScalarField D;
    PhaseGrid grid;
  };
  std::vector<Level> levels;
  for (int r : factors) {
    ScenarioConfig c = cfg;
    if (refine_space) c.grid = cfg.grid.refined(r);
    const int steps = base.steps * (refine_time ? r : rmax);
    c.time.dt.reset();
    c.time.t_final = t_final;
    c.time.steps = steps;
    c.time.sample_every = steps;
    SimulateOutcome o = run_simulate(c);
    if (o.run.aborted) throw NumericalAbort("convergence level " + std::to_string(r) + ": " + o.run.abort_reason);
    Level lv;
    lv.spacing = refine_space ? c.grid.dq() : t_final / steps;
    lv.first = o.run.series.rows.front();
    lv.last = o.run.series.rows.back();
    lv.D = classical_part_of(o.run.state);
    lv.grid = c.grid;
    levels.push_back(std::move(lv));
  }

  ConvergenceTable table;
  table.mode = mode;
  const auto& cols = csv_columns();
  for (std::size_t col = 1; col < cols.size(); ++col) {
    if (cols[col] == "antiherm_resid") continue;
    ConvergenceRow drift{cols[col], "drift"}, self{cols[col], "self"};
    bool present = true;
    for (const Level& lv : levels) present = present && column_value(lv.first, col) && column_value(lv.last, col);
    if (!present) continue;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const double x0 = *column_value(levels[l].first, col), x1 = *column_value(levels[l].last, col);
      const double scale = std::abs(x0) > 1e-12 ? std::abs(x0) : 1.0;
      drift.spacing.push_back(levels[l].spacing);
      drift.errors.push_back(std::abs(x1 - x0) / scale);
      if (l + 1 < levels.size()) {
        const double y1 = *column_value(levels[l + 1].last, col);
        self.spacing.push_back(levels[l].spacing);
        self.errors.push_back(std::abs(y1 - x1) / scale);
      }
    }
    for (ConvergenceRow* row : {&drift, &self}) {
      const auto [slope, r2] = fit_log_slope(row->spacing, row->errors);
      row->order = -slope;
      row->r2 = r2;
      table.rows.push_back(*row);
    }
  }
  // classical density field, differences between consecutive levels on the coarse nodes
  ConvergenceRow field{"D", "self"};
  for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
    const Level& a = levels[l];
    const Level& b = levels[l + 1];
    const int ratio = refine_space ? b.grid.nq() / a.grid.nq() : 1;
    double diff = 0.0, norm = 0.0;
    for (int i = 0; i < a.grid.nq(); ++i)
      for (int j = 0; j < a.grid.np(); ++j) {
        diff += std::abs(b.D(ratio * i, ratio * j) - a.D(i, j));
        norm += std::abs(a.D(i, j));
      }
    field.spacing.push_back(a.spacing);
    field.errors.push_back(diff / norm);
  }
  const auto [slope, r2] = fit_log_slope(field.spacing, field.errors);
  field.order = -slope;
  field.r2 = r2;
  table.rows.push_back(field);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ostringstream os;
    write_convergence_csv(os, table);
    write_text(out_dir / "convergence.csv", os.str());
  }
  return table;
}

void write_convergence_csv(std::ostream& os, const ConvergenceTable& table) {
  os << "quantity,measure,mode,order,r2,spacing,errors\n";
  auto join = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ";" : "") + format_number(v[k]);
    return s;
  };
  for (const ConvergenceRow& r : table.rows)
    os << r.quantity << ',' << r.measure << ',' << table.mode << ',' << format_number(r.order) << ','
       << format_number(r.r2) << ',' << join(r.spacing) << ',' << join(r.errors) << '\n';
}

}  // namespace mqc
