#include "mqc/grid.hpp"

#include <algorithm>
#include <cmath>

#ifdef MQC_HAVE_OPENMP
#include <omp.h>
#endif

namespace mqc {

void set_thread_limit(int threads) {
#ifdef MQC_HAVE_OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

PhaseGrid::PhaseGrid(double q0, double q1, double p0, double p1, int nq, int np, double hbar)
    : q0_(q0), q1_(q1), p0_(p0), p1_(p1), nq_(nq), np_(np), hbar_(hbar) {
  if (nq <= 0 || np <= 0) throw InvalidInput("grid counts must be positive");
  if (!(q1 > q0) || !(p1 > p0)) throw InvalidInput("grid bounds must satisfy q1 > q0 and p1 > p0");
  if (!(hbar > 0.0)) throw InvalidInput("hbar must be positive");
}

PhaseGrid PhaseGrid::refined(int factor) const {
  return PhaseGrid(q0_, q1_, p0_, p1_, nq_ * factor, np_ * factor, hbar_);
}

namespace {

// (f[-2] - 8 f[-1] + 8 f[+1] - f[+2]) / 12h
template <class T>
void stencil_along(const Field<T>& f, Field<T>& out, bool along_q) {
  const PhaseGrid& g = f.grid();
  const int nc = f.components();
  const double inv = 1.0 / (12.0 * (along_q ? g.dq() : g.dp()));
  const int nq = g.nq(), np = g.np();
#ifdef MQC_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < np; ++j) {
      const T *m2, *m1, *p1, *p2;
      if (along_q) {
        m2 = f.at(g.index(i - 2, j));
        m1 = f.at(g.index(i - 1, j));
        p1 = f.at(g.index(i + 1, j));
        p2 = f.at(g.index(i + 2, j));
      } else {
        m2 = f.at(g.index(i, j - 2));
        m1 = f.at(g.index(i, j - 1));
        p1 = f.at(g.index(i, j + 1));
        p2 = f.at(g.index(i, j + 2));
      }
      T* o = out.at(g.index(i, j));
      for (int c = 0; c < nc; ++c) o[c] = (m2[c] - p2[c] + 8.0 * (p1[c] - m1[c])) * inv;
    }
  }
}

}  // namespace

template <class T>
Field<T> partial_q(const Field<T>& f) {
  Field<T> out(f.grid(), f.rows(), f.cols());
  stencil_along(f, out, true);
  return out;
}

template <class T>
Field<T> partial_p(const Field<T>& f) {
  Field<T> out(f.grid(), f.rows(), f.cols());
  stencil_along(f, out, false);
  return out;
}

template <class T>
Field<T> poisson_bracket(const Field<T>& f, const Field<T>& g) {
  f.require_same(g);
  const auto fq = partial_q(f), fp = partial_p(f), gq = partial_q(g), gp = partial_p(g);
  Field<T> out(f.grid(), f.rows(), f.cols());
  auto o = out.values();
  const auto a = fq.values(), b = gp.values(), c = fp.values(), d = gq.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = a[k] * b[k] - c[k] * d[k];
  return out;
}

double integrate(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values()) s += v;
  return s * f.grid().cell_area();
}

SmallMatrix integrate_blocks(const ComplexField& f) {
  SmallMatrix acc = SmallMatrix::Zero(f.rows(), f.cols());
  for (std::size_t k = 0; k < f.points(); ++k) acc += f.block(k);
  return acc * f.grid().cell_area();
}

namespace {

void lagrange_weights(double t, double w[4]) {
  w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
  w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
  w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
  w[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
}

}  // namespace

template <class T>
typename Field<T>::Block interpolate(const Field<T>& f, double q, double p) {
  const PhaseGrid& g = f.grid();
  // snap coordinates within rounding of a node so nodal values come back exactly
  auto snap = [](double s) {
    const double r = std::round(s);
    return std::abs(s - r) < 1e-9 ? r : s;
  };
  const double sq = snap((q - g.q0()) / g.dq());
  const double sp = snap((p - g.p0()) / g.dp());
  const double fq = std::floor(sq), fp = std::floor(sp);
  const int i0 = static_cast<int>(fq), j0 = static_cast<int>(fp);
  double wq[4], wp[4];
  lagrange_weights(sq - fq, wq);
  lagrange_weights(sp - fp, wp);
  typename Field<T>::Block acc = Field<T>::Block::Zero(f.rows(), f.cols());
  for (int a = 0; a < 4; ++a) {
    if (wq[a] == 0.0) continue;
    for (int b = 0; b < 4; ++b) {
      if (wp[b] == 0.0) continue;
      acc += (wq[a] * wp[b]) * f.block(g.index(i0 - 1 + a, j0 - 1 + b));
    }
  }
  return acc;
}

template <class T>
Field<T> divergence(const Field<T>& f, const ScalarField& vq, const ScalarField& vp) {
  if (!(f.grid() == vq.grid()) || !(f.grid() == vp.grid())) throw GridMismatch("divergence: grid mismatch");
  Field<T> fluxq(f.grid(), f.rows(), f.cols()), fluxp(f.grid(), f.rows(), f.cols());
  const int nc = f.components();
  for (std::size_t k = 0; k < f.points(); ++k) {
    const T* src = f.at(k);
    T* a = fluxq.at(k);
    T* b = fluxp.at(k);
    for (int c = 0; c < nc; ++c) {
      a[c] = src[c] * vq[k];
      b[c] = src[c] * vp[k];
    }
  }
  auto out = partial_q(fluxq);
  out += partial_p(fluxp);
  return out;
}

ComplexField to_complex(const ScalarField& f) {
  ComplexField out(f.grid(), f.rows(), f.cols());
  auto o = out.values();
  auto s = f.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = s[k];
  return out;
}

ScalarField real_part(const ComplexField& f) {
  ScalarField out(f.grid(), f.rows(), f.cols());
  auto o = out.values();
  auto s = f.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = s[k].real();
  return out;
}

ScalarField imag_part(const ComplexField& f) {
  ScalarField out(f.grid(), f.rows(), f.cols());
  auto o = out.values();
  auto s = f.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = s[k].imag();
  return out;
}

double max_abs(const ScalarField& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}

double l1_norm(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values()) s += std::abs(v);
  return s * f.grid().cell_area();
}

template Field<double> partial_q(const Field<double>&);
template Field<cplx> partial_q(const Field<cplx>&);
template Field<double> partial_p(const Field<double>&);
template Field<cplx> partial_p(const Field<cplx>&);
template Field<double> poisson_bracket(const Field<double>&, const Field<double>&);
template Field<cplx> poisson_bracket(const Field<cplx>&, const Field<cplx>&);
template Field<double>::Block interpolate(const Field<double>&, double, double);
template Field<cplx>::Block interpolate(const Field<cplx>&, double, double);
template Field<double> divergence(const Field<double>&, const ScalarField&, const ScalarField&);
template Field<cplx> divergence(const Field<cplx>&, const ScalarField&, const ScalarField&);

}  // namespace mqc
