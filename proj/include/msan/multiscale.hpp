#pragma once

// Multi-scale inference: run the model on rescaled copies of a slice batch,
// bring each probability map back to the original resolution, average, and
// threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "msan/error.hpp"
#include "msan/kernels.hpp"
#include "msan/model.hpp"
#include "msan/tensor.hpp"

namespace msan {

struct InferenceConfig {
  std::vector<double> scales{1.25, 1.5, 1.75};
  double rho = 0.5;
  PadPolicy pad_policy = PadPolicy::reflect;
  std::size_t batch = 16; // slices per forward pass

  void validate() const {
    if (scales.empty())
      throw ConfigError("inference: scales must not be empty");
    for (double s : scales)
      if (!(s > 0.0) || !std::isfinite(s))
        throw ConfigError("inference: scales must be positive");
    if (!(rho > 0.0 && rho < 1.0))
      throw ConfigError("inference: rho must lie in (0, 1)");
    if (batch == 0)
      throw ConfigError("inference: batch must be >= 1");
  }
};

// Anything that maps a (n,1,h,w) windowed batch with h, w divisible by
// `divisor` to (n,1,h,w) foreground probabilities.
template <typename T> struct SliceModel {
  std::size_t divisor = 1;
  std::function<Tensor<T>(const Tensor<T> &)> probability;
};

template <typename T> SliceModel<T> slice_model(MsanModel<T> &model) {
  return {static_cast<std::size_t>(model.output_stride()),
          [&model](const Tensor<T> &x) { return model.foreground_probability(x); }};
}

inline std::size_t scaled_extent(std::size_t n, double s) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * s)));
}

inline std::size_t round_up(std::size_t n, std::size_t k) { return (n + k - 1) / k * k; }

// Probability map at one scale, returned at the input resolution.
template <typename T>
Tensor<T> scale_probability(const SliceModel<T> &model, const Tensor<T> &batch, double scale,
                            PadPolicy pad) {
  if (batch.c() != 1)
    throw ShapeError("infer: expected single-channel slices, got " + batch.shape().str());
  if (!model.probability || model.divisor == 0)
    throw ConfigError("infer: empty slice model");
  const std::size_t h = batch.h(), w = batch.w();
  const std::size_t sh = scaled_extent(h, scale), sw = scaled_extent(w, scale);
  const Tensor<T> resized = (sh == h && sw == w) ? batch : bilinear_resize(batch, sh, sw, false);
  const std::size_t ph = round_up(sh, model.divisor), pw = round_up(sw, model.divisor);
  const Tensor<T> prob = model.probability(pad_bottom_right(resized, ph, pw, pad));
  if (prob.n() != batch.n() || prob.c() != 1 || prob.h() != ph || prob.w() != pw)
    throw ShapeError("infer: model returned " + prob.shape().str() + " for input " +
                     std::to_string(ph) + "x" + std::to_string(pw));
  const Tensor<T> cropped = crop_top_left(prob, sh, sw);
  return (sh == h && sw == w) ? cropped : bilinear_resize(cropped, h, w, false);
}

// Accumulator wide enough that n * x is exact for small n, so the mean of
// identical maps reproduces the map bit for bit.
template <typename T>
using FuseAcc = std::conditional_t<std::is_same_v<T, float>, double, long double>;

template <typename T> T mean_of(FuseAcc<T> sum, std::size_t count) {
  return static_cast<T>(count > 1 ? sum / static_cast<FuseAcc<T>>(count) : sum);
}

// Mean of the maps, accumulated in the order given.
template <typename T> Tensor<T> fuse_scales(const std::vector<Tensor<T>> &maps) {
  if (maps.empty())
    throw ValueError("fuse_scales: no maps");
  for (std::size_t k = 1; k < maps.size(); ++k)
    maps.front().check_same_shape(maps[k], "fuse_scales");
  Tensor<T> out(maps.front().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    FuseAcc<T> s = 0;
    for (const auto &m : maps)
      s += m[i];
    out[i] = mean_of<T>(s, maps.size());
  }
  return out;
}

template <typename T> Tensor<T> binarize(const Tensor<T> &prob, double rho) {
  Tensor<T> z(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i)
    z[i] = static_cast<double>(prob[i]) > rho ? T(1) : T(0);
  return z;
}

inline std::vector<double> sorted_scales(std::vector<double> s) {
  std::sort(s.begin(), s.end());
  return s;
}

template <typename T> struct MultiScaleResult {
  Tensor<T> probability;
  Tensor<T> mask;
};

// Scales are visited in ascending order, so any permutation of cfg.scales
// gives bit-identical output.
template <typename T>
MultiScaleResult<T> infer_multiscale(const SliceModel<T> &model, const Tensor<T> &batch,
                                     const InferenceConfig &cfg) {
  cfg.validate();
  std::vector<Tensor<T>> maps;
  for (double s : sorted_scales(cfg.scales))
    maps.push_back(scale_probability(model, batch, s, cfg.pad_policy));
  Tensor<T> p = fuse_scales(maps);
  Tensor<T> z = binarize(p, cfg.rho);
  return {std::move(p), std::move(z)};
}

} // namespace msan
