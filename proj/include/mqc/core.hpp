#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mqc {

using cplx = std::complex<double>;

/// Largest quantum (and ancilla) dimension supported by the stack-allocated
/// small-matrix types used in pointwise kernels.
inline constexpr int kMaxDim = 8;

using SmallMatrix = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using SmallVector = Eigen::Matrix<cplx, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using RealVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two fields defined on different grids were combined.
class GridMismatch : public Error {
 public:
  using Error::Error;
};

/// Input violates a physical or structural precondition (non-Hermitian, not PSD, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Requested operation is outside the supported class of problems.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A requested target lies outside the attainable range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a violated stability guard during time stepping.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

/// Caps the width of the data-parallel kernels (no-op without OpenMP).
void set_thread_limit(int threads);

}  // namespace mqc
