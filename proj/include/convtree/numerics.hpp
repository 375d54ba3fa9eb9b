#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "convtree/error.hpp"

namespace convtree {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// All learning math runs in double.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Numerically stable softmax of a vector. Throws NonFiniteInput on NaN/inf.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  require(v.size() > 0, ErrorKind::ShapeMismatch, "softmax of empty vector");
  require(v.allFinite(), ErrorKind::NonFiniteInput, "softmax input must be finite");
  const Scalar shift = v.maxCoeff();
  VectorX<Scalar> e = (v.array() - shift).exp().matrix().reshaped();
  return e / e.sum();
}

/// Density of Beta(alpha, beta) at x in [0, 1].
template <typename Scalar>
Scalar beta_pdf(Scalar x, Scalar alpha, Scalar beta) {
  using std::exp;
  using std::lgamma;
  using std::log;
  require(alpha > 0 && beta > 0, ErrorKind::DomainError, "beta_pdf needs alpha, beta > 0");
  require(x >= 0 && x <= 1, ErrorKind::DomainError, "beta_pdf needs x in [0, 1]");
  const Scalar log_norm = lgamma(alpha + beta) - lgamma(alpha) - lgamma(beta);
  // at a boundary only the exponent of the vanishing factor matters
  auto edge = [&](Scalar shape) -> Scalar {
    if (shape < 1) return std::numeric_limits<Scalar>::infinity();
    if (shape > 1) return Scalar(0);
    return exp(log_norm);
  };
  if (x == 0) return edge(alpha);
  if (x == 1) return edge(beta);
  return exp(log_norm + (alpha - 1) * log(x) + (beta - 1) * log1p(-x));
}

/// Cosine similarity, clamped into [-1, 1]. Throws ZeroVector for a zero argument.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_sim(const Eigen::MatrixBase<DerivedA>& u,
                                     const Eigen::MatrixBase<DerivedB>& v) {
  using Scalar = typename DerivedA::Scalar;
  require(u.size() == v.size(), ErrorKind::ShapeMismatch, "cosine_sim dimension mismatch");
  const Scalar nu = u.stableNorm();
  const Scalar nv = v.stableNorm();
  require(nu > 0 && nv > 0, ErrorKind::ZeroVector, "cosine_sim of a zero vector");
  const Scalar c = (u.reshaped() / nu).dot(v.reshaped() / nv);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

}  // namespace convtree
