#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "xtf/errors.hpp"

namespace xtf {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// The tiny LM and every score run in double.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

enum class Axis { kRows, kCols };

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (!std::isfinite(x(i, j))) return false;
  return true;
}

// c += a * b with every c(i, j) accumulated left to right over the inner
// index. Row-major rows make the innermost update a contiguous axpy.
template <typename Scalar>
void matmul_accumulate(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b, MatrixX<Scalar>& c) {
  const Eigen::Index m = a.rows(), k = a.cols();
  for (Eigen::Index i = 0; i < m; ++i) {
    auto c_row = c.row(i);
    for (Eigen::Index p = 0; p < k; ++p) {
      const Scalar s = a(i, p);
      if (s != Scalar(0)) c_row.noalias() += s * b.row(p);
    }
  }
}

template <typename Scalar>
MatrixX<Scalar> matmul(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.rows(), a.cols()) +
                         " x " + shape_string(b.rows(), b.cols()));
  MatrixX<Scalar> c = MatrixX<Scalar>::Zero(a.rows(), b.cols());
  matmul_accumulate(a, b, c);
  return c;
}

// Max-subtracted softmax; the one implementation shared by model and scoring.
template <typename Scalar>
MatrixX<Scalar> softmax(const MatrixX<Scalar>& x, Axis axis = Axis::kCols) {
  if (!all_finite(x)) throw InputError("softmax: non-finite input");
  if (axis == Axis::kRows) return softmax<Scalar>(x.transpose(), Axis::kCols).transpose();
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> log_softmax(const MatrixX<Scalar>& x, Axis axis = Axis::kCols) {
  if (!all_finite(x)) throw InputError("log_softmax: non-finite input");
  if (axis == Axis::kRows) return log_softmax<Scalar>(x.transpose(), Axis::kCols).transpose();
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) sum += std::exp(x(i, j) - mx);
    const Scalar lse = mx + std::log(sum);
    for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return out;
}

}  // namespace xtf
