#pragma once

// Slow, obviously-correct reference implementations. They share no code with
// the production kernels and serve as oracles for selftest and the tests.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "msan/tensor.hpp"
#include "msan/volume.hpp"

namespace msan::ref {

// Direct sum over (c, ky, kx) with explicit bounds checks.
template <typename T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &k, const std::vector<T> &bias, int rate,
                 int stride, int pad) {
  const long H = static_cast<long>(x.h()), W = static_cast<long>(x.w());
  const long KH = static_cast<long>(k.h()), KW = static_cast<long>(k.w());
  const long OH = (H + 2 * pad - ((KH - 1) * rate + 1)) / stride + 1;
  const long OW = (W + 2 * pad - ((KW - 1) * rate + 1)) / stride + 1;
  Tensor<T> y(x.n(), k.n(), static_cast<std::size_t>(OH), static_cast<std::size_t>(OW));
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t o = 0; o < k.n(); ++o)
      for (long i = 0; i < OH; ++i)
        for (long j = 0; j < OW; ++j) {
          T acc = bias.empty() ? T(0) : bias[o];
          for (std::size_t c = 0; c < x.c(); ++c)
            for (long a = 0; a < KH; ++a)
              for (long b = 0; b < KW; ++b) {
                const long si = i * stride + a * rate - pad;
                const long sj = j * stride + b * rate - pad;
                if (si < 0 || sj < 0 || si >= H || sj >= W)
                  continue;
                acc += x(n, c, static_cast<std::size_t>(si), static_cast<std::size_t>(sj)) *
                       k(o, c, static_cast<std::size_t>(a), static_cast<std::size_t>(b));
              }
          y(n, o, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
        }
  return y;
}

// y_i = (1/N) sum_j (x_i . x_j) x_j, looping over position pairs.
template <typename T> Tensor<T> nonlocal(const Tensor<T> &x) {
  const std::size_t N = x.h() * x.w(), C = x.c();
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<T> acc(C, T(0));
      for (std::size_t j = 0; j < N; ++j) {
        T f = 0;
        for (std::size_t c = 0; c < C; ++c)
          f += x.plane(n, c)[i] * x.plane(n, c)[j];
        for (std::size_t c = 0; c < C; ++c)
          acc[c] += f * x.plane(n, c)[j];
      }
      for (std::size_t c = 0; c < C; ++c)
        y.plane(n, c)[i] = acc[c] / static_cast<T>(N);
    }
  return y;
}

template <typename T>
Tensor<T> bilinear(const Tensor<T> &x, std::size_t oh, std::size_t ow, bool align_corners) {
  auto src = [&](std::size_t o, std::size_t in, std::size_t out) {
    double s;
    if (align_corners)
      s = out == 1 ? 0.0 : static_cast<double>(o) * (in - 1.0) / (out - 1.0);
    else
      s = (o + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::fmin(std::fmax(s, 0.0), in - 1.0);
  };
  Tensor<T> y(x.n(), x.c(), oh, ow);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double sy = src(i, x.h(), oh), sx = src(j, x.w(), ow);
          const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
          const std::size_t y1 = y0 + 1 < x.h() ? y0 + 1 : y0, x1 = x0 + 1 < x.w() ? x0 + 1 : x0;
          const double fy = sy - y0, fx = sx - x0;
          y(n, c, i, j) = static_cast<T>(
              (1 - fy) * ((1 - fx) * x(n, c, y0, x0) + fx * x(n, c, y0, x1)) +
              fy * ((1 - fx) * x(n, c, y1, x0) + fx * x(n, c, y1, x1)));
        }
  return y;
}

// Train-mode batch norm with biased batch variance.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T> &x, const std::vector<T> &gamma,
                          const std::vector<T> &beta, double eps) {
  Tensor<T> y(x.shape());
  const double m = static_cast<double>(x.n() * x.h() * x.w());
  for (std::size_t c = 0; c < x.c(); ++c) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < x.h() * x.w(); ++i)
        mean += x.plane(n, c)[i];
    mean /= m;
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < x.h() * x.w(); ++i)
        var += (x.plane(n, c)[i] - mean) * (x.plane(n, c)[i] - mean);
    var /= m;
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < x.h() * x.w(); ++i)
        y.plane(n, c)[i] =
            static_cast<T>(gamma[c] * (x.plane(n, c)[i] - mean) / std::sqrt(var + eps) + beta[c]);
  }
  return y;
}

// 2-of-3 truth table indexed by (a << 2 | b << 1 | c).
inline constexpr std::array<std::uint8_t, 8> kVoteTable{0, 0, 0, 1, 0, 1, 1, 1};

inline Mask vote(const Mask &a, const Mask &b, const Mask &c) {
  Mask out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = kVoteTable[static_cast<std::size_t>(a[i] << 2 | b[i] << 1 | c[i])];
  return out;
}

inline double dsc(const Mask &pred, const Mask &gt) {
  double inter = 0, sz = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    inter += (pred[i] == 1 && gt[i] == 1) ? 1 : 0;
    sz += pred[i] + gt[i];
  }
  return sz == 0 ? 1.0 : 2 * inter / sz;
}

} // namespace msan::ref
