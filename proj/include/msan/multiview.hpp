#pragma once

// Per-view inference over a whole volume and majority-vote fusion.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "msan/error.hpp"
#include "msan/multiscale.hpp"
#include "msan/preprocess.hpp"
#include "msan/volume.hpp"

namespace msan {

using ProbVolume = Grid3<float>;

// One probability volume per scale (ascending scale order) for a single view.
struct ViewProbabilities {
  Axis axis = Axis::axial;
  std::vector<double> scales;
  std::vector<ProbVolume> maps;
};

namespace detail {

// Slices [first, first + count) of a view as one (count,1,rows,cols) batch.
template <typename T, typename V>
Tensor<T> slice_batch(const Grid3<V> &vol, Axis a, std::size_t first, std::size_t count) {
  const auto g = slice_geometry(vol.dims(), a);
  Tensor<T> t(count, 1, g.rows, g.cols);
  for (std::size_t k = 0; k < count; ++k)
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c)
        t(k, 0, r, c) = static_cast<T>(vol[slice_voxel(vol.dims(), a, first + k, r, c)]);
  return t;
}

template <typename T, typename V>
void scatter_batch(const Tensor<T> &t, Grid3<V> &vol, Axis a, std::size_t first) {
  const auto g = slice_geometry(vol.dims(), a);
  for (std::size_t k = 0; k < t.n(); ++k)
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c)
        vol[slice_voxel(vol.dims(), a, first + k, r, c)] = static_cast<V>(t(k, 0, r, c));
}

} // namespace detail

// `windowed` must already be intensity-normalised.
template <typename T>
ViewProbabilities view_probabilities(const SliceModel<T> &model, const Volume &windowed, Axis a,
                                     const InferenceConfig &cfg) {
  cfg.validate();
  ViewProbabilities out{a, sorted_scales(cfg.scales), {}};
  const auto g = slice_geometry(windowed.dims(), a);
  for (std::size_t k = 0; k < out.scales.size(); ++k)
    out.maps.emplace_back(windowed.dims());
  for (std::size_t first = 0; first < g.count; first += cfg.batch) {
    const std::size_t count = std::min(cfg.batch, g.count - first);
    const Tensor<T> batch = detail::slice_batch<T>(windowed, a, first, count);
    for (std::size_t k = 0; k < out.scales.size(); ++k)
      detail::scatter_batch(scale_probability(model, batch, out.scales[k], cfg.pad_policy),
                            out.maps[k], a, first);
  }
  return out;
}

// Mean over the selected scale maps (indices into vp.maps, visited in the
// given order), thresholded strictly at rho.
inline Mask fuse_view(const ViewProbabilities &vp, const std::vector<std::size_t> &which,
                      double rho) {
  if (which.empty())
    throw ValueError("fuse_view: no scales selected");
  const Dims d = vp.maps.at(which.front()).dims();
  Mask m(d);
  for (std::size_t i = 0; i < d.count(); ++i) {
    FuseAcc<float> s = 0;
    for (std::size_t k : which)
      s += vp.maps.at(k)[i];
    m[i] = static_cast<double>(mean_of<float>(s, which.size())) > rho ? 1 : 0;
  }
  return m;
}

inline Mask fuse_view(const ViewProbabilities &vp, double rho) {
  std::vector<std::size_t> all(vp.maps.size());
  for (std::size_t k = 0; k < all.size(); ++k)
    all[k] = k;
  return fuse_view(vp, all, rho);
}

// Per-view binary volume.
template <typename T>
Mask infer_view(const SliceModel<T> &model, const Volume &windowed, Axis a,
                const InferenceConfig &cfg) {
  return fuse_view(view_probabilities(model, windowed, a, cfg), cfg.rho);
}

inline Mask majority_vote(const std::vector<const Mask *> &views) {
  if (views.empty())
    throw ValueError("majority_vote: no views");
  if (views.size() % 2 == 0)
    throw ValueError("majority_vote: even view count " + std::to_string(views.size()) +
                     " has no tie rule");
  const Dims d = views.front()->dims();
  for (const Mask *v : views) {
    if (!(v->dims() == d))
      throw ShapeError("majority_vote: dims " + v->dims().str() + " vs " + d.str());
    v->check_binary("majority_vote");
  }
  Mask out(d);
  for (std::size_t i = 0; i < d.count(); ++i) {
    std::size_t votes = 0;
    for (const Mask *v : views)
      votes += (*v)[i];
    out[i] = 2 * votes > views.size() ? 1 : 0;
  }
  return out;
}

inline Mask majority_vote(const Mask &zc, const Mask &zs, const Mask &za) {
  return majority_vote({&zc, &zs, &za});
}

// Full pipeline for one volume in HU: window, infer each view, vote.
template <typename T>
Mask infer_volume(const std::map<Axis, SliceModel<T>> &models, const Volume &hu,
                  const WindowSpec &window, const InferenceConfig &cfg) {
  const Volume windowed = hu_window_normalize(hu, window);
  std::vector<Mask> views;
  for (Axis a : kAllAxes) {
    auto it = models.find(a);
    if (it == models.end())
      throw ConfigError("infer: no model for the " + std::string(axis_name(a)) + " view");
    views.push_back(infer_view(it->second, windowed, a, cfg));
  }
  return majority_vote(views[0], views[1], views[2]);
}

} // namespace msan
