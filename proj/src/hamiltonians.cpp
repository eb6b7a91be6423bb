#include "mqc/hamiltonians.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

#include "mqc/linalg.hpp"

namespace mqc {

// ---------------------------------------------------------------- PhaseFunction

PhaseFunction PhaseFunction::constant(double c) {
  PhaseTerm t;
  t.kind = PhaseTerm::Kind::constant;
  t.coef = c;
  return PhaseFunction({t});
}

PhaseFunction PhaseFunction::harmonic(double cq, double cp, double qc, double pc) {
  std::vector<PhaseTerm> terms;
  PhaseTerm t;
  t.kind = PhaseTerm::Kind::monomial;
  t.center_q = qc;
  t.center_p = pc;
  if (cq != 0.0) {
    t.coef = 0.5 * cq;
    t.pow_q = 2;
    t.pow_p = 0;
    terms.push_back(t);
  }
  if (cp != 0.0) {
    t.coef = 0.5 * cp;
    t.pow_q = 0;
    t.pow_p = 2;
    terms.push_back(t);
  }
  return PhaseFunction(terms);
}

PhaseFunction PhaseFunction::trig_harmonic(double cq, double cp, double length) {
  const double l2 = length * length;
  std::vector<PhaseTerm> terms;
  PhaseTerm c;
  c.kind = PhaseTerm::Kind::constant;
  c.coef = (cq + cp) * l2;
  terms.push_back(c);
  PhaseTerm t;
  t.kind = PhaseTerm::Kind::cosine;
  if (cq != 0.0) {
    t.coef = -cq * l2;
    t.kq = 1.0 / length;
    t.kp = 0.0;
    terms.push_back(t);
  }
  if (cp != 0.0) {
    t.coef = -cp * l2;
    t.kq = 0.0;
    t.kp = 1.0 / length;
    terms.push_back(t);
  }
  return PhaseFunction(terms);
}

PhaseFunction PhaseFunction::linear(double aq, double ap) {
  std::vector<PhaseTerm> terms;
  PhaseTerm t;
  t.kind = PhaseTerm::Kind::monomial;
  if (aq != 0.0) {
    t.coef = aq;
    t.pow_q = 1;
    t.pow_p = 0;
    terms.push_back(t);
  }
  if (ap != 0.0) {
    t.coef = ap;
    t.pow_q = 0;
    t.pow_p = 1;
    terms.push_back(t);
  }
  return PhaseFunction(terms);
}

PhaseFunction PhaseFunction::sine_q(double amp, double k) {
  PhaseTerm t;
  t.kind = PhaseTerm::Kind::cosine;
  t.coef = amp;
  t.kq = k;
  t.phase = -std::numbers::pi / 2.0;
  return PhaseFunction({t});
}

PhaseFunction PhaseFunction::sin_sq_sum(double s) {
  // sin^2 x = (1 - cos 2x)/2
  PhaseTerm c;
  c.kind = PhaseTerm::Kind::constant;
  c.coef = s;
  PhaseTerm a;
  a.kind = PhaseTerm::Kind::cosine;
  a.coef = -0.5 * s;
  a.kq = 2.0;
  PhaseTerm b = a;
  b.kq = 0.0;
  b.kp = 2.0;
  return PhaseFunction({c, a, b});
}

namespace {

double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

}  // namespace

double PhaseFunction::value(double q, double p) const {
  double s = 0.0;
  for (const auto& t : terms_) {
    switch (t.kind) {
      case PhaseTerm::Kind::constant:
        s += t.coef;
        break;
      case PhaseTerm::Kind::monomial:
        s += t.coef * ipow(q - t.center_q, t.pow_q) * ipow(p - t.center_p, t.pow_p);
        break;
      case PhaseTerm::Kind::cosine:
        s += t.coef * std::cos(t.kq * q + t.kp * p + t.phase);
        break;
    }
  }
  return s;
}

std::array<double, 2> PhaseFunction::gradient(double q, double p) const {
  double gq = 0.0, gp = 0.0;
  for (const auto& t : terms_) {
    switch (t.kind) {
      case PhaseTerm::Kind::constant:
        break;
      case PhaseTerm::Kind::monomial: {
        const double x = q - t.center_q, y = p - t.center_p;
        if (t.pow_q > 0) gq += t.coef * t.pow_q * ipow(x, t.pow_q - 1) * ipow(y, t.pow_p);
        if (t.pow_p > 0) gp += t.coef * t.pow_p * ipow(x, t.pow_q) * ipow(y, t.pow_p - 1);
        break;
      }
      case PhaseTerm::Kind::cosine: {
        const double s = -t.coef * std::sin(t.kq * q + t.kp * p + t.phase);
        gq += s * t.kq;
        gp += s * t.kp;
        break;
      }
    }
  }
  return {gq, gp};
}

std::array<double, 3> PhaseFunction::hessian(double q, double p) const {
  double hqq = 0.0, hqp = 0.0, hpp = 0.0;
  for (const auto& t : terms_) {
    switch (t.kind) {
      case PhaseTerm::Kind::constant:
        break;
      case PhaseTerm::Kind::monomial: {
        const double x = q - t.center_q, y = p - t.center_p;
        const int a = t.pow_q, b = t.pow_p;
        if (a > 1) hqq += t.coef * a * (a - 1) * ipow(x, a - 2) * ipow(y, b);
        if (a > 0 && b > 0) hqp += t.coef * a * b * ipow(x, a - 1) * ipow(y, b - 1);
        if (b > 1) hpp += t.coef * b * (b - 1) * ipow(x, a) * ipow(y, b - 2);
        break;
      }
      case PhaseTerm::Kind::cosine: {
        const double c = -t.coef * std::cos(t.kq * q + t.kp * p + t.phase);
        hqq += c * t.kq * t.kq;
        hqp += c * t.kq * t.kp;
        hpp += c * t.kp * t.kp;
        break;
      }
    }
  }
  return {hqq, hqp, hpp};
}

bool PhaseFunction::periodic_on(const PhaseGrid& g) const {
  auto integral = [](double x) { return std::abs(x - std::round(x)) < 1e-9; };
  for (const auto& t : terms_) {
    if (t.kind == PhaseTerm::Kind::monomial && t.coef != 0.0) return false;
    if (t.kind == PhaseTerm::Kind::cosine) {
      if (!integral(t.kq * g.length_q() / (2.0 * std::numbers::pi))) return false;
      if (!integral(t.kp * g.length_p() / (2.0 * std::numbers::pi))) return false;
    }
  }
  return true;
}

PhaseFunction& PhaseFunction::operator+=(const PhaseFunction& other) {
  terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
  return *this;
}

PhaseFunction PhaseFunction::scaled(double s) const {
  PhaseFunction out = *this;
  for (auto& t : out.terms_) t.coef *= s;
  return out;
}

// ---------------------------------------------------------------- HamiltonianSpec

std::string to_string(HamiltonianKind kind) {
  switch (kind) {
    case HamiltonianKind::uncoupled:
      return "uncoupled";
    case HamiltonianKind::nanowire:
      return "nanowire";
    case HamiltonianKind::pure_dephasing:
      return "pure_dephasing";
    case HamiltonianKind::zeta_composed:
      return "zeta_composed";
    case HamiltonianKind::tabulated:
      return "tabulated";
  }
  return "unknown";
}

HamiltonianKind hamiltonian_kind_from_string(const std::string& name) {
  for (auto k : {HamiltonianKind::uncoupled, HamiltonianKind::nanowire, HamiltonianKind::pure_dephasing,
                 HamiltonianKind::zeta_composed, HamiltonianKind::tabulated})
    if (to_string(k) == name) return k;
  throw InvalidInput("unknown Hamiltonian kind '" + name + "'");
}

namespace {

void require_hermitian(const SmallMatrix& m, const char* what) {
  if (m.rows() != m.cols() || !is_hermitian(m)) throw InvalidInput(std::string(what) + " must be Hermitian");
}

}  // namespace

HamiltonianSpec HamiltonianSpec::uncoupled(const PhaseFunction& HC, const SmallMatrix& HQ) {
  require_hermitian(HQ, "quantum Hamiltonian H_Q");
  HamiltonianSpec s;
  s.kind_ = HamiltonianKind::uncoupled;
  s.dim_ = static_cast<int>(HQ.rows());
  s.HC_ = HC;
  s.HQ_ = HQ;
  s.terms_.emplace_back(HC, identity(s.dim_));
  s.terms_.emplace_back(PhaseFunction::constant(1.0), HQ);
  return s;
}

HamiltonianSpec HamiltonianSpec::nanowire(const NanowireParams& params) {
  if (!(params.mass > 0.0)) throw InvalidInput("nanowire mass must be positive");
  if (!(params.length > 0.0)) throw InvalidInput("nanowire surrogate length must be positive");
  HamiltonianSpec s;
  s.kind_ = HamiltonianKind::nanowire;
  s.dim_ = 2;
  s.nanowire_ = params;
  const double L = params.length;
  PhaseFunction kinetic, drift, potential;
  if (params.trig) {
    kinetic = PhaseFunction::trig_harmonic(0.0, 1.0 / params.mass, L);
    PhaseTerm t;
    t.kind = PhaseTerm::Kind::cosine;
    t.coef = L;
    t.kp = 1.0 / L;
    t.phase = -std::numbers::pi / 2.0;  // L sin(p/L)
    drift = PhaseFunction({t});
    if (params.confinement != 0.0) potential = PhaseFunction::trig_harmonic(params.confinement, 0.0, L);
  } else {
    kinetic = PhaseFunction::harmonic(0.0, 1.0 / params.mass);
    drift = PhaseFunction::linear(0.0, 1.0);
    if (params.confinement != 0.0) potential = PhaseFunction::harmonic(params.confinement, 0.0);
  }
  PhaseFunction scalar = kinetic;
  scalar += potential;
  s.terms_.emplace_back(scalar, identity(2));
  s.terms_.emplace_back(drift.scaled(params.eta), pauli_z());
  s.terms_.emplace_back(PhaseFunction::constant(params.B), pauli_x());
  if (params.confinement == 0.0) {
    // H depends on p only: zeta = p.
    s.zeta_ = PhaseFunction::linear(0.0, 1.0);
  }
  return s;
}

HamiltonianSpec HamiltonianSpec::pure_dephasing(const PhaseFunction& H0, const PhaseFunction& HI,
                                                const SmallMatrix& A) {
  require_hermitian(A, "dephasing operator A");
  HamiltonianSpec s;
  s.kind_ = HamiltonianKind::pure_dephasing;
  s.dim_ = static_cast<int>(A.rows());
  s.H0_ = H0;
  s.HI_ = HI;
  s.A_ = A;
  s.terms_.emplace_back(H0, identity(s.dim_));
  s.terms_.emplace_back(HI, A);
  return s;
}

HamiltonianSpec HamiltonianSpec::zeta_composed(const PhaseFunction& zeta, const std::vector<SmallMatrix>& coeffs) {
  if (coeffs.empty()) throw InvalidInput("zeta_composed needs at least one coefficient matrix");
  for (const auto& c : coeffs) require_hermitian(c, "zeta coefficient");
  HamiltonianSpec s;
  s.kind_ = HamiltonianKind::zeta_composed;
  s.dim_ = static_cast<int>(coeffs.front().rows());
  for (const auto& c : coeffs)
    if (c.rows() != s.dim_) throw InvalidInput("zeta coefficients must share one dimension");
  s.zeta_ = zeta;
  s.zeta_coeffs_ = coeffs;
  return s;
}

HamiltonianSpec HamiltonianSpec::tabulated(const MatrixField& H) {
  if (H.rows() != H.cols()) throw InvalidInput("tabulated Hamiltonian must be square");
  for (std::size_t k = 0; k < H.points(); ++k) require_hermitian(H.block(k), "tabulated Hamiltonian");
  HamiltonianSpec s;
  s.kind_ = HamiltonianKind::tabulated;
  s.dim_ = H.rows();
  s.table_ = H;
  return s;
}

SmallMatrix HamiltonianSpec::value_at_zeta(double z) const {
  if (kind_ == HamiltonianKind::nanowire) return value(0.0, z);
  if (zeta_coeffs_.empty()) throw UnsupportedError("Hamiltonian is not zeta-composed");
  SmallMatrix acc = SmallMatrix::Zero(dim_, dim_);
  double zk = 1.0;
  for (const auto& c : zeta_coeffs_) {
    acc += zk * c;
    zk *= z;
  }
  return acc;
}

SmallMatrix HamiltonianSpec::value(double q, double p) const {
  if (kind_ == HamiltonianKind::zeta_composed) return value_at_zeta(zeta_.value(q, p));
  if (kind_ == HamiltonianKind::tabulated) return interpolate(*table_, q, p);
  SmallMatrix acc = SmallMatrix::Zero(dim_, dim_);
  for (const auto& [f, m] : terms_) acc += f.value(q, p) * m;
  return acc;
}

std::array<SmallMatrix, 2> HamiltonianSpec::gradient(double q, double p) const {
  SmallMatrix gq = SmallMatrix::Zero(dim_, dim_), gp = gq;
  if (kind_ == HamiltonianKind::zeta_composed) {
    const double z = zeta_.value(q, p);
    const auto dz = zeta_.gradient(q, p);
    SmallMatrix dH = SmallMatrix::Zero(dim_, dim_);
    double zk = 1.0;
    for (std::size_t k = 1; k < zeta_coeffs_.size(); ++k) {
      dH += (static_cast<double>(k) * zk) * zeta_coeffs_[k];
      zk *= z;
    }
    return {dz[0] * dH, dz[1] * dH};
  }
  if (kind_ == HamiltonianKind::tabulated) {
    const auto fq = partial_q(*table_);
    const auto fp = partial_p(*table_);
    return {interpolate(fq, q, p), interpolate(fp, q, p)};
  }
  for (const auto& [f, m] : terms_) {
    const auto g = f.gradient(q, p);
    gq += g[0] * m;
    gp += g[1] * m;
  }
  return {gq, gp};
}

bool HamiltonianSpec::periodic_on(const PhaseGrid& g) const {
  switch (kind_) {
    case HamiltonianKind::tabulated:
      return true;
    case HamiltonianKind::zeta_composed:
      return zeta_.periodic_on(g);
    default:
      for (const auto& [f, m] : terms_)
        if (!f.periodic_on(g)) return false;
      return true;
  }
}

HamiltonianFields build(const HamiltonianSpec& spec, const PhaseGrid& grid) {
  const int n = spec.dim();
  HamiltonianFields out{MatrixField(grid, n, n), MatrixField(grid, n, n), MatrixField(grid, n, n),
                        spec.periodic_on(grid)};
  if (spec.kind() == HamiltonianKind::tabulated) {
    // Tabulated values must live on this grid; gradients are the 4th-order stencils.
    for (int i = 0; i < grid.nq(); ++i)
      for (int j = 0; j < grid.np(); ++j) out.H.block(grid.index(i, j)) = spec.value(grid.q(i), grid.p(j));
    out.dq = partial_q(out.H);
    out.dp = partial_p(out.H);
    return out;
  }
  for (int i = 0; i < grid.nq(); ++i) {
    for (int j = 0; j < grid.np(); ++j) {
      const std::size_t k = grid.index(i, j);
      const double q = grid.q(i), p = grid.p(j);
      out.H.block(k) = spec.value(q, p);
      const auto g = spec.gradient(q, p);
      out.dq.block(k) = g[0];
      out.dp.block(k) = g[1];
    }
  }
  return out;
}

// ---------------------------------------------------------------- eigenfields

namespace {

constexpr double kCrossingGap = 1e-10;

void seed_gauge(SmallVector& v) {
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

EigenFields eigenfields(const MatrixField& H) {
  const PhaseGrid& g = H.grid();
  const int n = H.rows();
  if (H.cols() != n) throw InvalidInput("eigenfields requires square matrices");
  EigenFields out;
  out.energies.assign(n, ScalarField(g));
  out.states.assign(n, StateField(g, n, 1));
  out.min_neighbor_overlap.assign(n, 1.0);

  std::vector<HermitianEigen> eig(g.points());
  std::size_t seed = 0;
  bool seeded = false;
  for (std::size_t k = 0; k < g.points(); ++k) {
    eig[k] = hermitian_eigen(H.block(k));
    double gap = std::numeric_limits<double>::infinity();
    for (int a = 0; a + 1 < n; ++a) gap = std::min(gap, eig[k].values[a + 1] - eig[k].values[a]);
    if (gap < kCrossingGap) {
      out.crossings.push_back({g.row_of(k), g.col_of(k)});
    } else if (!seeded) {
      seed = k;
      seeded = true;
    }
  }

  std::vector<char> visited(g.points(), 0);
  auto store = [&](std::size_t k, int branch, const SmallVector& v) {
    auto dst = out.states[branch].at(k);
    for (int a = 0; a < n; ++a) dst[a] = v[a];
    const SmallMatrix hk = H.block(k);
    out.energies[branch][k] = (v.adjoint() * hk * v)(0, 0).real();
  };
  auto load = [&](std::size_t k, int branch) {
    SmallVector v(n);
    const auto src = out.states[branch].at(k);
    for (int a = 0; a < n; ++a) v[a] = src[a];
    return v;
  };

  for (int b = 0; b < n; ++b) {
    SmallVector v = eig[seed].vectors.col(b);
    seed_gauge(v);
    store(seed, b, v);
  }
  visited[seed] = 1;
  std::queue<std::size_t> frontier;
  frontier.push(seed);
  while (!frontier.empty()) {
    const std::size_t parent = frontier.front();
    frontier.pop();
    const int i = g.row_of(parent), j = g.col_of(parent);
    const std::size_t nbrs[4] = {g.index(i + 1, j), g.index(i - 1, j), g.index(i, j + 1), g.index(i, j - 1)};
    for (std::size_t k : nbrs) {
      if (visited[k]) continue;
      visited[k] = 1;
      frontier.push(k);
      const auto& e = eig[k];
      // clusters of (near-)degenerate eigenvalues
      std::vector<int> cluster_of(n);
      std::vector<std::vector<int>> clusters;
      for (int a = 0; a < n; ++a) {
        if (a > 0 && e.values[a] - e.values[a - 1] < kCrossingGap) {
          clusters.back().push_back(a);
        } else {
          clusters.push_back({a});
        }
        cluster_of[a] = static_cast<int>(clusters.size()) - 1;
      }
      std::vector<int> used(clusters.size(), 0);
      std::vector<std::vector<SmallVector>> assigned(clusters.size());
      for (int b = 0; b < n; ++b) {
        const SmallVector u = load(parent, b);
        int best = -1;
        double best_ov = -1.0;
        for (std::size_t c = 0; c < clusters.size(); ++c) {
          if (used[c] >= static_cast<int>(clusters[c].size())) continue;
          double ov = 0.0;
          for (int a : clusters[c]) ov += std::norm(e.vectors.col(a).dot(u));
          if (ov > best_ov) {
            best_ov = ov;
            best = static_cast<int>(c);
          }
        }
        SmallVector w = SmallVector::Zero(n);
        if (clusters[best].size() == 1) {
          w = e.vectors.col(clusters[best][0]);
        } else {
          for (int a : clusters[best]) w += e.vectors.col(a) * e.vectors.col(a).dot(u);
          for (const auto& prev : assigned[best]) w -= prev * prev.dot(w);
          if (w.norm() < 1e-8) {
            for (int a : clusters[best]) {
              SmallVector cand = e.vectors.col(a);
              for (const auto& prev : assigned[best]) cand -= prev * prev.dot(cand);
              if (cand.norm() > 1e-8) {
                w = cand;
                break;
              }
            }
          }
          w.normalize();
        }
        const cplx ov = u.dot(w);  // u^dagger w
        if (std::abs(ov) > 0.0) w *= std::conj(ov) / std::abs(ov);
        out.min_neighbor_overlap[b] = std::min(out.min_neighbor_overlap[b], std::abs(u.dot(w)));
        assigned[best].push_back(w);
        ++used[best];
        store(k, b, w);
      }
    }
  }
  return out;
}

}  // namespace mqc
