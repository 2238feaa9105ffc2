#pragma once

// Forward (and matching backward) numerical kernels over (n,c,h,w) tensors.
// Every kernel is a pure function of its arguments; outputs are checked for
// non-finite values before they are returned.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msan/error.hpp"
#include "msan/parallel.hpp"
#include "msan/tensor.hpp"

namespace msan {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// -------------------- atrous convolution --------------------

struct ConvGeometry {
  int rate = 1;
  int stride = 1;
  int padding = 0;

  // Zero padding that keeps spatial size for an odd kernel at stride 1.
  static ConvGeometry same(int kernel, int rate = 1) {
    return ConvGeometry{rate, 1, rate * (kernel - 1) / 2};
  }

  void validate() const {
    if (rate < 1)
      throw ShapeError("atrous rate must be >= 1, got " + std::to_string(rate));
    if (stride < 1)
      throw ShapeError("stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0)
      throw ShapeError("padding must be >= 0, got " + std::to_string(padding));
  }
};

template <typename T> struct ConvSpec {
  Tensor<T> kernel;   // (out_c, in_c, kh, kw)
  std::vector<T> bias; // out_c entries, or empty for no bias
  ConvGeometry geom;
};

inline std::size_t effective_extent(std::size_t k, int rate) {
  return (k - 1) * static_cast<std::size_t>(rate) + 1;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry &g) {
  const std::size_t eff = effective_extent(k, g.rate);
  const std::size_t padded = in + 2 * static_cast<std::size_t>(g.padding);
  if (eff > padded)
    throw ShapeError("effective kernel extent " + std::to_string(eff) + " (rate " +
                     std::to_string(g.rate) + ") exceeds padded input extent " +
                     std::to_string(padded));
  return (padded - eff) / static_cast<std::size_t>(g.stride) + 1;
}

namespace detail {

// Valid output range [lo, hi) for which 0 <= o*stride + off < extent.
inline void tap_range(std::ptrdiff_t off, std::ptrdiff_t stride, std::ptrdiff_t extent,
                      std::ptrdiff_t out, std::ptrdiff_t &lo, std::ptrdiff_t &hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = extent - off <= 0 ? 0 : (extent - off + stride - 1) / stride;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
}

// Unfolds one batch item into a (C*kh*kw) x (Ho*Wo) column matrix.
template <typename T>
void im2col(const T *in, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, const ConvGeometry &g, std::size_t Ho, std::size_t Wo, T *cols) {
  const std::size_t P = Ho * Wo;
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t c = 0; c < C; ++c) {
    const T *src = in + c * H * W;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      const std::ptrdiff_t offy = static_cast<std::ptrdiff_t>(ki) * g.rate - g.padding;
      std::ptrdiff_t ylo, yhi;
      tap_range(offy, s, static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(Ho), ylo,
                yhi);
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T *dst = cols + ((c * kh + ki) * kw + kj) * P;
        const std::ptrdiff_t offx = static_cast<std::ptrdiff_t>(kj) * g.rate - g.padding;
        std::ptrdiff_t xlo, xhi;
        tap_range(offx, s, static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(Wo), xlo,
                  xhi);
        std::fill(dst, dst + ylo * Wo, T(0));
        for (std::ptrdiff_t oy = ylo; oy < yhi; ++oy) {
          T *row = dst + oy * Wo;
          const T *srow = src + (oy * s + offy) * static_cast<std::ptrdiff_t>(W);
          std::fill(row, row + xlo, T(0));
          if (s == 1) {
            std::copy(srow + xlo + offx, srow + xhi + offx, row + xlo);
          } else {
            for (std::ptrdiff_t ox = xlo; ox < xhi; ++ox)
              row[ox] = srow[ox * s + offx];
          }
          std::fill(row + xhi, row + Wo, T(0));
        }
        std::fill(dst + yhi * Wo, dst + P, T(0));
      }
    }
  }
}

// Adjoint of im2col: scatters columns back into an input-shaped buffer (+=).
template <typename T>
void col2im(const T *cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, const ConvGeometry &g, std::size_t Ho, std::size_t Wo, T *in) {
  const std::size_t P = Ho * Wo;
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t c = 0; c < C; ++c) {
    T *dstc = in + c * H * W;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      const std::ptrdiff_t offy = static_cast<std::ptrdiff_t>(ki) * g.rate - g.padding;
      std::ptrdiff_t ylo, yhi;
      tap_range(offy, s, static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(Ho), ylo,
                yhi);
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T *src = cols + ((c * kh + ki) * kw + kj) * P;
        const std::ptrdiff_t offx = static_cast<std::ptrdiff_t>(kj) * g.rate - g.padding;
        std::ptrdiff_t xlo, xhi;
        tap_range(offx, s, static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(Wo), xlo,
                  xhi);
        for (std::ptrdiff_t oy = ylo; oy < yhi; ++oy) {
          const T *row = src + oy * Wo;
          T *drow = dstc + (oy * s + offy) * static_cast<std::ptrdiff_t>(W);
          for (std::ptrdiff_t ox = xlo; ox < xhi; ++ox)
            drow[ox * s + offx] += row[ox];
        }
      }
    }
  }
}

inline bool is_pointwise(std::size_t kh, std::size_t kw, const ConvGeometry &g) {
  return kh == 1 && kw == 1 && g.stride == 1 && g.padding == 0;
}

} // namespace detail

template <typename T> Shape conv_output_shape(const Shape &in, const Shape &kernel,
                                              const ConvGeometry &g) {
  g.validate();
  if (in.c != kernel.c)
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                     std::to_string(kernel.c));
  return Shape{in.n, kernel.n, conv_out_extent(in.h, kernel.h, g),
               conv_out_extent(in.w, kernel.w, g)};
}

// y[n,o,i] = sum_c sum_k x[n,c,i*stride + rate*k - pad] * w[o,c,k] + b[o]
template <typename T>
Tensor<T> conv2d(const Tensor<T> &input, const Tensor<T> &kernel, std::span<const T> bias,
                 const ConvGeometry &g) {
  const Shape os = conv_output_shape<T>(input.shape(), kernel.shape(), g);
  if (!bias.empty() && bias.size() != kernel.n())
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " entries for " +
                     std::to_string(kernel.n()) + " output channels");
  const std::size_t C = input.c(), H = input.h(), W = input.w();
  const std::size_t kh = kernel.h(), kw = kernel.w();
  const std::size_t O = kernel.n(), CK = C * kh * kw, P = os.h * os.w;
  Tensor<T> out(os);
  ConstMatMap<T> wmat(kernel.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(CK));
  const bool pointwise = detail::is_pointwise(kh, kw, g);
  parallel_for(input.n(), [&](std::size_t n) {
    MatMap<T> y(out.item(n), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
    if (pointwise) {
      ConstMatMap<T> x(input.item(n), static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(P));
      y.noalias() = wmat * x;
    } else {
      std::vector<T> cols(CK * P);
      detail::im2col(input.item(n), C, H, W, kh, kw, g, os.h, os.w, cols.data());
      ConstMatMap<T> x(cols.data(), static_cast<Eigen::Index>(CK), static_cast<Eigen::Index>(P));
      y.noalias() = wmat * x;
    }
    if (!bias.empty()) {
      for (std::size_t o = 0; o < O; ++o) {
        T *p = out.plane(n, o);
        for (std::size_t i = 0; i < P; ++i)
          p[i] += bias[o];
      }
    }
  });
  ensure_finite(out, "conv2d");
  return out;
}

template <typename T> Tensor<T> conv2d_atrous(const Tensor<T> &input, const ConvSpec<T> &spec) {
  ensure_finite(input, "conv2d_atrous input");
  return conv2d<T>(input, spec.kernel, std::span<const T>(spec.bias), spec.geom);
}

// Accumulates (+=) the gradients requested through non-null pointers.
template <typename T>
void conv2d_backward(const Tensor<T> &input, const Tensor<T> &kernel, const ConvGeometry &g,
                     const Tensor<T> &grad_out, Tensor<T> *grad_in, Tensor<T> *grad_kernel,
                     std::span<T> grad_bias) {
  const std::size_t N = input.n(), C = input.c(), H = input.h(), W = input.w();
  const std::size_t kh = kernel.h(), kw = kernel.w();
  const std::size_t O = kernel.n(), CK = C * kh * kw;
  const std::size_t Ho = grad_out.h(), Wo = grad_out.w(), P = Ho * Wo;
  const bool pointwise = detail::is_pointwise(kh, kw, g);
  ConstMatMap<T> wmat(kernel.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(CK));
  std::vector<Tensor<T>> partial;
  if (grad_kernel)
    partial.assign(N, Tensor<T>(kernel.shape()));

  parallel_for(N, [&](std::size_t n) {
    ConstMatMap<T> dy(grad_out.item(n), static_cast<Eigen::Index>(O),
                      static_cast<Eigen::Index>(P));
    std::vector<T> cols;
    if (grad_kernel) {
      MatMap<T> dw(partial[n].data(), static_cast<Eigen::Index>(O),
                   static_cast<Eigen::Index>(CK));
      if (pointwise) {
        ConstMatMap<T> x(input.item(n), static_cast<Eigen::Index>(C),
                         static_cast<Eigen::Index>(P));
        dw.noalias() = dy * x.transpose();
      } else {
        cols.resize(CK * P);
        detail::im2col(input.item(n), C, H, W, kh, kw, g, Ho, Wo, cols.data());
        ConstMatMap<T> x(cols.data(), static_cast<Eigen::Index>(CK),
                         static_cast<Eigen::Index>(P));
        dw.noalias() = dy * x.transpose();
      }
    }
    if (grad_in) {
      if (pointwise) {
        MatMap<T> dx(grad_in->item(n), static_cast<Eigen::Index>(C),
                     static_cast<Eigen::Index>(P));
        dx.noalias() += wmat.transpose() * dy;
      } else {
        cols.resize(CK * P);
        MatMap<T> dcols(cols.data(), static_cast<Eigen::Index>(CK), static_cast<Eigen::Index>(P));
        dcols.noalias() = wmat.transpose() * dy;
        detail::col2im(cols.data(), C, H, W, kh, kw, g, Ho, Wo, grad_in->item(n));
      }
    }
  });

  if (grad_kernel)
    for (std::size_t n = 0; n < N; ++n)
      *grad_kernel += partial[n];
  if (!grad_bias.empty()) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        const T *p = grad_out.plane(n, o);
        T acc = 0;
        for (std::size_t i = 0; i < P; ++i)
          acc += p[i];
        grad_bias[o] += acc;
      }
  }
}

// -------------------- resampling --------------------

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out, bool align_corners) {
  std::vector<LerpTap> taps(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t i = 0; i < out; ++i) {
    double src;
    if (align_corners) {
      src = out == 1 ? 0.0
                     : static_cast<double>(i) * static_cast<double>(in - 1) /
                           static_cast<double>(out - 1);
    } else {
      src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) -
            0.5;
    }
    src = std::clamp(src, 0.0, last);
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

} // namespace detail

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T> &input, std::size_t out_h, std::size_t out_w,
                          bool align_corners) {
  if (out_h == 0 || out_w == 0)
    throw ShapeError("bilinear_resize: zero-sized target");
  const auto ty = detail::lerp_taps(input.h(), out_h, align_corners);
  const auto tx = detail::lerp_taps(input.w(), out_w, align_corners);
  Tensor<T> out(input.n(), input.c(), out_h, out_w);
  const std::size_t W = input.w();
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c) {
      const T *src = input.plane(n, c);
      T *dst = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        const T *r0 = src + ty[y].i0 * W;
        const T *r1 = src + ty[y].i1 * W;
        for (std::size_t x = 0; x < out_w; ++x) {
          const T fx = static_cast<T>(tx[x].frac);
          const T top = (T(1) - fx) * r0[tx[x].i0] + fx * r0[tx[x].i1];
          const T bot = (T(1) - fx) * r1[tx[x].i0] + fx * r1[tx[x].i1];
          dst[y * out_w + x] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  ensure_finite(out, "bilinear_resize");
  return out;
}

// Adjoint of bilinear_resize, accumulated into grad_in.
template <typename T>
void bilinear_resize_backward(const Tensor<T> &grad_out, bool align_corners, Tensor<T> &grad_in) {
  const std::size_t out_h = grad_out.h(), out_w = grad_out.w(), W = grad_in.w();
  const auto ty = detail::lerp_taps(grad_in.h(), out_h, align_corners);
  const auto tx = detail::lerp_taps(grad_in.w(), out_w, align_corners);
  for (std::size_t n = 0; n < grad_out.n(); ++n)
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      const T *g = grad_out.plane(n, c);
      T *dst = grad_in.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        T *r0 = dst + ty[y].i0 * W;
        T *r1 = dst + ty[y].i1 * W;
        for (std::size_t x = 0; x < out_w; ++x) {
          const T fx = static_cast<T>(tx[x].frac);
          const T v = g[y * out_w + x];
          r0[tx[x].i0] += (T(1) - fy) * (T(1) - fx) * v;
          r0[tx[x].i1] += (T(1) - fy) * fx * v;
          r1[tx[x].i0] += fy * (T(1) - fx) * v;
          r1[tx[x].i1] += fy * fx * v;
        }
      }
    }
}

// Nearest-neighbour resampling, used for label maps.
template <typename T>
Tensor<T> nearest_resize(const Tensor<T> &input, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    throw ShapeError("nearest_resize: zero-sized target");
  auto pick = [](std::size_t i, std::size_t in, std::size_t out) {
    const auto s = static_cast<std::size_t>(
        std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out)));
    return std::min(s, in - 1);
  };
  Tensor<T> out(input.n(), input.c(), out_h, out_w);
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c)
      for (std::size_t y = 0; y < out_h; ++y) {
        const std::size_t sy = pick(y, input.h(), out_h);
        for (std::size_t x = 0; x < out_w; ++x)
          out(n, c, y, x) = input(n, c, sy, pick(x, input.w(), out_w));
      }
  return out;
}

enum class PadPolicy { zero, reflect };

// Grows each plane to (out_h, out_w) by padding at the bottom and right.
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T> &input, std::size_t out_h, std::size_t out_w,
                           PadPolicy policy) {
  if (out_h < input.h() || out_w < input.w())
    throw ShapeError("pad_bottom_right: target smaller than input");
  if (out_h == input.h() && out_w == input.w())
    return input;
  auto reflect = [](std::size_t i, std::size_t n) {
    if (n == 1)
      return std::size_t{0};
    const std::size_t period = 2 * (n - 1);
    std::size_t m = i % period;
    return m < n ? m : period - m;
  };
  Tensor<T> out(input.n(), input.c(), out_h, out_w);
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
          if (y < input.h() && x < input.w())
            out(n, c, y, x) = input(n, c, y, x);
          else if (policy == PadPolicy::reflect)
            out(n, c, y, x) = input(n, c, reflect(y, input.h()), reflect(x, input.w()));
        }
  return out;
}

template <typename T> Tensor<T> crop_top_left(const Tensor<T> &input, std::size_t h, std::size_t w) {
  if (h > input.h() || w > input.w())
    throw ShapeError("crop_top_left: crop larger than input");
  Tensor<T> out(input.n(), input.c(), h, w);
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(input.plane(n, c) + y * input.w(), w, out.plane(n, c) + y * w);
  return out;
}

// -------------------- normalization --------------------

enum class Mode { train, eval };

template <typename T> struct BatchNormCache {
  std::vector<T> inv_std;
  Tensor<T> xhat;
};

// Train mode normalizes with batch statistics over (n,h,w) and updates the
// running statistics (unbiased variance); eval mode uses the running values.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T> &x, std::span<const T> gamma, std::span<const T> beta,
                      std::span<T> running_mean, std::span<T> running_var, Mode mode,
                      double momentum, double epsilon, BatchNormCache<T> *cache = nullptr) {
  const std::size_t N = x.n(), C = x.c(), P = x.h() * x.w();
  if (!(epsilon > 0.0))
    throw ValueError("batchnorm2d: epsilon must be > 0");
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
      running_var.size() != C)
    throw ShapeError("batchnorm2d: per-channel parameters must have " + std::to_string(C) +
                     " entries");
  Tensor<T> y(x.shape());
  std::vector<T> inv_std(C), means(C);
  const double count = static_cast<double>(N * P);
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T *p = x.plane(n, c);
        for (std::size_t i = 0; i < P; ++i)
          s += p[i];
      }
      mean = s / count;
      double sq = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T *p = x.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[c] = static_cast<T>(is);
    means[c] = static_cast<T>(mean);
    const T m = static_cast<T>(mean), ist = static_cast<T>(is);
    for (std::size_t n = 0; n < N; ++n) {
      const T *p = x.plane(n, c);
      T *q = y.plane(n, c);
      for (std::size_t i = 0; i < P; ++i)
        q[i] = (p[i] - m) * ist * gamma[c] + beta[c];
    }
  }
  if (cache) {
    cache->inv_std = inv_std;
    cache->xhat = Tensor<T>(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T *p = x.plane(n, c);
        T *h = cache->xhat.plane(n, c);
        for (std::size_t i = 0; i < P; ++i)
          h[i] = (p[i] - means[c]) * inv_std[c];
      }
  }
  ensure_finite(y, "batchnorm2d");
  return y;
}

// Accumulates dx, dgamma, dbeta.
template <typename T>
void batchnorm2d_backward(const Tensor<T> &grad_out, const BatchNormCache<T> &cache,
                          std::span<const T> gamma, Mode mode, Tensor<T> *grad_in,
                          std::span<T> grad_gamma, std::span<T> grad_beta) {
  const std::size_t N = grad_out.n(), C = grad_out.c(), P = grad_out.h() * grad_out.w();
  const double count = static_cast<double>(N * P);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T *g = grad_out.plane(n, c);
      const T *h = cache.xhat.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * h[i];
      }
    }
    if (!grad_gamma.empty())
      grad_gamma[c] += static_cast<T>(sum_dy_xhat);
    if (!grad_beta.empty())
      grad_beta[c] += static_cast<T>(sum_dy);
    if (!grad_in)
      continue;
    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
    for (std::size_t n = 0; n < N; ++n) {
      const T *g = grad_out.plane(n, c);
      const T *h = cache.xhat.plane(n, c);
      T *d = grad_in->plane(n, c);
      if (mode == Mode::train) {
        const double mdy = sum_dy / count, mdyx = sum_dy_xhat / count;
        for (std::size_t i = 0; i < P; ++i)
          d[i] += static_cast<T>(scale * (g[i] - mdy - h[i] * mdyx));
      } else {
        for (std::size_t i = 0; i < P; ++i)
          d[i] += static_cast<T>(scale * g[i]);
      }
    }
  }
}

// -------------------- pointwise / structural --------------------

template <typename T> Tensor<T> relu(const Tensor<T> &x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T> Tensor<T> global_avg_pool(const Tensor<T> &x) {
  Tensor<T> y(x.n(), x.c(), 1, 1);
  const std::size_t P = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T *p = x.plane(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < P; ++i)
        s += p[i];
      y(n, c, 0, 0) = static_cast<T>(s / static_cast<double>(P));
    }
  return y;
}

template <typename T> Tensor<T> concat_channels(std::span<const Tensor<T> *const> parts) {
  if (parts.empty())
    throw ShapeError("concat_channels: nothing to concatenate");
  const Shape &s0 = parts[0]->shape();
  std::size_t C = 0;
  for (const auto *p : parts) {
    const Shape &s = p->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat_channels: mismatched n/h/w " + s.str() + " vs " + s0.str());
    C += s.c;
  }
  Tensor<T> out(s0.n, C, s0.h, s0.w);
  const std::size_t P = s0.h * s0.w;
  for (std::size_t n = 0; n < s0.n; ++n) {
    T *dst = out.item(n);
    for (const auto *p : parts) {
      std::copy_n(p->item(n), p->c() * P, dst);
      dst += p->c() * P;
    }
  }
  return out;
}

template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>> &parts) {
  std::vector<const Tensor<T> *> ptrs;
  for (const auto &p : parts)
    ptrs.push_back(&p);
  return concat_channels<T>(std::span<const Tensor<T> *const>(ptrs));
}

template <typename T> Tensor<T> softmax_channels(const Tensor<T> &x) {
  Tensor<T> y(x.shape());
  const std::size_t C = x.c(), P = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T *src = x.item(n);
    T *dst = y.item(n);
    for (std::size_t i = 0; i < P; ++i) {
      T m = src[i];
      for (std::size_t c = 1; c < C; ++c)
        m = std::max(m, src[c * P + i]);
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        s += std::exp(static_cast<double>(src[c * P + i] - m));
      for (std::size_t c = 0; c < C; ++c)
        dst[c * P + i] = static_cast<T>(std::exp(static_cast<double>(src[c * P + i] - m)) / s);
    }
  }
  return y;
}

} // namespace msan
