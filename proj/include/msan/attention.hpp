#pragma once

// Dot-product non-local mixing. For each batch item with channel vectors
// x_i at N = h*w spatial positions:
//
//   y_i = (1/N) * sum_j (x_i . x_j) * x_j
//
// Evaluated through the c x c Gram matrix G = X X^T, so Y = G X / N costs
// O(N c^2) instead of the O(N^2 c) pairwise sum.

#include <Eigen/Core>

#include "msan/kernels.hpp"
#include "msan/tensor.hpp"

namespace msan {

template <typename T> Tensor<T> nonlocal_mix(const Tensor<T> &x) {
  const auto C = static_cast<Eigen::Index>(x.c());
  const auto N = static_cast<Eigen::Index>(x.h() * x.w());
  Tensor<T> y(x.shape());
  const T inv_n = T(1) / static_cast<T>(N);
  for (std::size_t n = 0; n < x.n(); ++n) {
    ConstMatMap<T> X(x.item(n), C, N);
    MatMap<T> Y(y.item(n), C, N);
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> G = X * X.transpose();
    Y.noalias() = (G * X) * inv_n;
  }
  if (!y.all_finite())
    throw NumericalError("nonlocal attention overflowed; rescale the input features");
  return y;
}

// dX += G dY / N + (dG + dG^T) X   with dG = dY X^T / N
template <typename T>
void nonlocal_mix_backward(const Tensor<T> &x, const Tensor<T> &grad_out, Tensor<T> &grad_in) {
  const auto C = static_cast<Eigen::Index>(x.c());
  const auto N = static_cast<Eigen::Index>(x.h() * x.w());
  const T inv_n = T(1) / static_cast<T>(N);
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  for (std::size_t n = 0; n < x.n(); ++n) {
    ConstMatMap<T> X(x.item(n), C, N);
    ConstMatMap<T> dY(grad_out.item(n), C, N);
    MatMap<T> dX(grad_in.item(n), C, N);
    const Mat G = X * X.transpose();
    const Mat dG = (dY * X.transpose()) * inv_n;
    const Mat S = dG + dG.transpose();
    dX.noalias() += (G * dY) * inv_n;
    dX.noalias() += S * X;
  }
}

} // namespace msan
