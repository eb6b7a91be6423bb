#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mqc/core.hpp"

namespace mqc {

/// Uniform periodic Nq x Np discretization of [q0,q1) x [p0,p1).
///
/// Node (i,j) sits at (q0 + i dq, p0 + j dp). Indices wrap in both directions.
class PhaseGrid {
 public:
  PhaseGrid() = default;
  PhaseGrid(double q0, double q1, double p0, double p1, int nq, int np, double hbar = 1.0);

  double q0() const { return q0_; }
  double q1() const { return q1_; }
  double p0() const { return p0_; }
  double p1() const { return p1_; }
  int nq() const { return nq_; }
  int np() const { return np_; }
  double hbar() const { return hbar_; }

  double dq() const { return (q1_ - q0_) / nq_; }
  double dp() const { return (p1_ - p0_) / np_; }
  double length_q() const { return q1_ - q0_; }
  double length_p() const { return p1_ - p0_; }
  double cell_area() const { return dq() * dp(); }
  double area() const { return length_q() * length_p(); }

  double q(int i) const { return q0_ + i * dq(); }
  double p(int j) const { return p0_ + j * dp(); }

  std::size_t points() const { return static_cast<std::size_t>(nq_) * static_cast<std::size_t>(np_); }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(wrap_q(i)) * np_ + wrap_p(j); }
  int row_of(std::size_t k) const { return static_cast<int>(k / np_); }
  int col_of(std::size_t k) const { return static_cast<int>(k % np_); }

  int wrap_q(int i) const { return ((i % nq_) + nq_) % nq_; }
  int wrap_p(int j) const { return ((j % np_) + np_) % np_; }

  /// Same discretization with both counts scaled by `factor`.
  PhaseGrid refined(int factor) const;

  friend bool operator==(const PhaseGrid& a, const PhaseGrid& b) {
    return a.q0_ == b.q0_ && a.q1_ == b.q1_ && a.p0_ == b.p0_ && a.p1_ == b.p1_ && a.nq_ == b.nq_ &&
           a.np_ == b.np_ && a.hbar_ == b.hbar_;
  }

 private:
  double q0_ = 0.0, q1_ = 1.0, p0_ = 0.0, p1_ = 1.0;
  int nq_ = 1, np_ = 1;
  double hbar_ = 1.0;
};

/// Grid field whose value at every node is a rows x cols array of T.
/// Scalar fields use 1 x 1, state vectors n x 1, density matrices n x n.
template <class T>
class Field {
 public:
  using Scalar = T;
  using Block = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor, kMaxDim, kMaxDim>;
  using BlockMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstBlockMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Field() = default;
  explicit Field(const PhaseGrid& grid, int rows = 1, int cols = 1, T fill = T{})
      : grid_(grid), rows_(rows), cols_(cols), data_(grid.points() * rows * cols, fill) {}

  const PhaseGrid& grid() const { return grid_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int components() const { return rows_ * cols_; }
  std::size_t points() const { return grid_.points(); }

  T* at(std::size_t k) { return data_.data() + k * components(); }
  const T* at(std::size_t k) const { return data_.data() + k * components(); }

  T& operator()(int i, int j, int r = 0, int c = 0) { return at(grid_.index(i, j))[r * cols_ + c]; }
  const T& operator()(int i, int j, int r = 0, int c = 0) const { return at(grid_.index(i, j))[r * cols_ + c]; }

  /// Scalar value at flat index k (first component).
  T& operator[](std::size_t k) { return data_[k * components()]; }
  const T& operator[](std::size_t k) const { return data_[k * components()]; }

  BlockMap block(std::size_t k) { return BlockMap(at(k), rows_, cols_); }
  ConstBlockMap block(std::size_t k) const { return ConstBlockMap(at(k), rows_, cols_); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(const Field& other) const {
    return grid_ == other.grid_ && rows_ == other.rows_ && cols_ == other.cols_;
  }

  Field& axpy(double a, const Field& x) {
    require_same(x);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += a * x.data_[k];
    return *this;
  }
  Field& operator+=(const Field& x) { return axpy(1.0, x); }
  Field& operator-=(const Field& x) { return axpy(-1.0, x); }
  Field& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same(const Field& x) const {
    if (!same_shape(x)) throw GridMismatch("field shape or grid mismatch");
  }

 private:
  PhaseGrid grid_;
  int rows_ = 1, cols_ = 1;
  std::vector<T> data_;
};

using ScalarField = Field<double>;
using ComplexField = Field<cplx>;
/// n x n complex matrices per node (P, H, functional derivatives, ...).
using MatrixField = Field<cplx>;
/// Length-n state vector per node.
using StateField = Field<cplx>;
/// n x m conditional wave operator per node.
using WaveOpField = Field<cplx>;

/// Two real components (X_q, X_p) per node.
struct VectorField2 {
  ScalarField q;
  ScalarField p;
};

/// Fourth-order periodic central difference along q, entrywise.
template <class T>
Field<T> partial_q(const Field<T>& f);
/// Fourth-order periodic central difference along p, entrywise.
template <class T>
Field<T> partial_p(const Field<T>& f);

/// Canonical bracket {f,g} = f_q g_p - f_p g_q on scalar or complex fields.
template <class T>
Field<T> poisson_bracket(const Field<T>& f, const Field<T>& g);

/// Periodic trapezoid rule: sum of nodal values times dq dp.
double integrate(const ScalarField& f);
/// Componentwise quadrature of a complex field; returns a rows x cols block.
SmallMatrix integrate_blocks(const ComplexField& f);

/// Periodic bicubic (4x4 Lagrange) interpolation; returns a rows x cols block.
template <class T>
typename Field<T>::Block interpolate(const Field<T>& f, double q, double p);

/// Divergence of the flux (field * vq, field * vp): d_q(field vq) + d_p(field vp).
template <class T>
Field<T> divergence(const Field<T>& f, const ScalarField& vq, const ScalarField& vp);

/// Samples a callable f(q,p) onto the grid.
template <class Fn>
ScalarField sample(const PhaseGrid& grid, Fn&& fn) {
  ScalarField out(grid);
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) out(i, j) = fn(grid.q(i), grid.p(j));
  return out;
}

ComplexField to_complex(const ScalarField& f);
ScalarField real_part(const ComplexField& f);
ScalarField imag_part(const ComplexField& f);

double max_abs(const ScalarField& f);
double l1_norm(const ScalarField& f);

}  // namespace mqc
