#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "msan/error.hpp"
#include "msan/rng.hpp"
#include "msan/tensor.hpp"
#include "msan/volume.hpp"

namespace msan {

// -------------------- intensity windowing --------------------

struct WindowSpec {
  double hu_min = -80.0;
  double hu_max = 320.0;
  double out_max = 255.0;

  void validate() const {
    if (!(hu_min < hu_max) || !(out_max > 0.0))
      throw ConfigError("window: need hu_min < hu_max and out_max > 0");
  }
};

inline float hu_window(float hu, const WindowSpec &s) {
  const double v = std::clamp(static_cast<double>(hu), s.hu_min, s.hu_max);
  return static_cast<float>((v - s.hu_min) / (s.hu_max - s.hu_min) * s.out_max);
}

inline Volume hu_window_normalize(const Volume &vol, const WindowSpec &spec) {
  spec.validate();
  Volume out(vol.dims());
  out.spacing_mm = vol.spacing_mm;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!std::isfinite(vol[i]))
      throw NumericalError("hu_window_normalize: non-finite voxel");
    out[i] = hu_window(vol[i], spec);
  }
  return out;
}

// -------------------- augmentation --------------------

struct AugmentSpec {
  double rot_min_deg = 0.0;
  double rot_max_deg = 15.0;
  std::vector<double> train_scales{1.25, 1.5, 1.75};
  std::uint64_t seed = 0;

  void validate() const {
    if (rot_min_deg < 0.0 || rot_min_deg > rot_max_deg)
      throw ConfigError("augment: need 0 <= rot_min_deg <= rot_max_deg");
    if (train_scales.empty())
      throw ConfigError("augment: train_scales must not be empty");
    for (double s : train_scales)
      if (!(s > 0.0))
        throw ConfigError("augment: scales must be > 0");
  }
};

inline double sample_scale(const AugmentSpec &spec, Rng &rng) {
  if (spec.train_scales.empty())
    throw ConfigError("sample_scale: empty scale set");
  return spec.train_scales[rng.index(spec.train_scales.size())];
}

inline double sample_rotation(const AugmentSpec &spec, Rng &rng) {
  return rng.uniform(spec.rot_min_deg, spec.rot_max_deg);
}

// Rotates counterclockwise (as displayed, rows growing downwards) about the
// exact slice centre. The image is resampled bilinearly and the mask by
// nearest neighbour; samples falling outside the source grid are zero.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> random_rotation(const Tensor<T> &slice, const Tensor<T> &mask,
                                                double angle_deg) {
  slice.check_same_shape(mask, "random_rotation");
  const std::size_t H = slice.h(), W = slice.w();
  if (angle_deg == 0.0)
    return {slice, mask};
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const double eps = 1e-9;
  Tensor<T> img(slice.shape()), lab(mask.shape());
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const double x = static_cast<double>(c) - cx, y = cy - static_cast<double>(r);
      const double xs = x * cs + y * sn, ys = -x * sn + y * cs;
      double sc = xs + cx, sr = cy - ys;
      if (sc < -eps || sr < -eps || sc > static_cast<double>(W - 1) + eps ||
          sr > static_cast<double>(H - 1) + eps)
        continue;
      sc = std::clamp(sc, 0.0, static_cast<double>(W - 1));
      sr = std::clamp(sr, 0.0, static_cast<double>(H - 1));
      const auto r0 = static_cast<std::size_t>(std::floor(sr));
      const auto c0 = static_cast<std::size_t>(std::floor(sc));
      const std::size_t r1 = std::min(r0 + 1, H - 1), c1 = std::min(c0 + 1, W - 1);
      const double fr = sr - static_cast<double>(r0), fc = sc - static_cast<double>(c0);
      const auto rn = static_cast<std::size_t>(std::lround(sr));
      const auto cn = static_cast<std::size_t>(std::lround(sc));
      for (std::size_t n = 0; n < slice.n(); ++n)
        for (std::size_t ch = 0; ch < slice.c(); ++ch) {
          const double top = (1 - fc) * slice(n, ch, r0, c0) + fc * slice(n, ch, r0, c1);
          const double bot = (1 - fc) * slice(n, ch, r1, c0) + fc * slice(n, ch, r1, c1);
          img(n, ch, r, c) = static_cast<T>((1 - fr) * top + fr * bot);
          lab(n, ch, r, c) = mask(n, ch, rn, cn);
        }
    }
  return {std::move(img), std::move(lab)};
}

} // namespace msan
