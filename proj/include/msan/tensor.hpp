#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "msan/error.hpp"
#include "msan/rng.hpp"

namespace msan {

enum class DType : std::uint32_t { real32 = 0, real64 = 1 };

template <typename T> constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::real32 : DType::real64;
}

inline const char *dtype_name(DType d) { return d == DType::real32 ? "real32" : "real64"; }

// (batch, channels, height, width); width is the fastest-varying index.
struct Shape {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape &) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

template <typename T> class Tensor {
public:
  using value_type = T;

  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0)
      throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
    data_.assign(shape.numel(), fill);
  }

  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  Tensor(Shape shape, std::vector<T> values) : Tensor(shape) {
    if (values.size() != shape.numel())
      throw ShapeError("tensor " + shape.str() + " needs " + std::to_string(shape.numel()) +
                       " values, got " + std::to_string(values.size()));
    data_ = std::move(values);
  }

  static Tensor random_normal(Shape shape, Rng &rng, double sigma = 1.0) {
    Tensor t(shape);
    for (auto &v : t.data_)
      v = static_cast<T>(rng.normal(0.0, sigma));
    return t;
  }

  static Tensor random_uniform(Shape shape, Rng &rng, double lo, double hi) {
    Tensor t(shape);
    for (auto &v : t.data_)
      v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape &shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::size_t offset(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const {
    return ((in * shape_.c + ic) * shape_.h + ih) * shape_.w + iw;
  }

  T &operator()(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) {
    return data_[offset(in, ic, ih, iw)];
  }
  const T &operator()(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const {
    return data_[offset(in, ic, ih, iw)];
  }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }

  // One (h, w) plane.
  T *plane(std::size_t in, std::size_t ic) { return data_.data() + offset(in, ic, 0, 0); }
  const T *plane(std::size_t in, std::size_t ic) const {
    return data_.data() + offset(in, ic, 0, 0);
  }
  // All channels of one batch item.
  T *item(std::size_t in) { return data_.data() + offset(in, 0, 0, 0); }
  const T *item(std::size_t in) const { return data_.data() + offset(in, 0, 0, 0); }

  // Same data, different shape with equal element count.
  Tensor reshaped(Shape shape) const { return Tensor(shape, data_); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor &operator+=(const Tensor &o) {
    check_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] += o.data_[i];
    return *this;
  }

  Tensor &operator*=(T s) {
    for (auto &v : data_)
      v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U> Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void check_same_shape(const Tensor &o, const char *what) const {
    if (!(shape_ == o.shape_))
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                       o.shape_.str());
  }

  bool operator==(const Tensor &o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

template <typename T> void ensure_finite(const Tensor<T> &t, const char *op) {
  if (!t.all_finite())
    throw NumericalError(std::string(op) + ": non-finite value in tensor " + t.shape().str());
}

template <typename T> double max_abs_diff(const Tensor<T> &a, const Tensor<T> &b) {
  a.check_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

} // namespace msan
