#pragma once

// 3-D volumes and the three slicing views.
//
// Voxel (w, h, l) lives at index (w * H + h) * L + l (L fastest). Slices keep
// the two remaining axes in their original order:
//   coronal  slice w : (H, L) plane, row h, column l
//   sagittal slice h : (W, L) plane, row w, column l
//   axial    slice l : (H, W) plane, row h, column w

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "msan/error.hpp"
#include "msan/tensor.hpp"

namespace msan {

struct Dims {
  std::size_t W = 1, H = 1, L = 1;
  constexpr std::size_t count() const { return W * H * L; }
  constexpr bool operator==(const Dims &) const = default;
  std::string str() const {
    return std::to_string(W) + "x" + std::to_string(H) + "x" + std::to_string(L);
  }
};

template <typename V> class Grid3 {
public:
  Grid3() = default;
  explicit Grid3(Dims d, V fill = V{}) : dims_(d) {
    if (d.W == 0 || d.H == 0 || d.L == 0)
      throw ShapeError("volume dimensions must be >= 1, got " + d.str());
    voxels_.assign(d.count(), fill);
  }
  Grid3(Dims d, std::vector<V> voxels) : Grid3(d) {
    if (voxels.size() != d.count())
      throw ShapeError("volume " + d.str() + " needs " + std::to_string(d.count()) +
                       " voxels, got " + std::to_string(voxels.size()));
    voxels_ = std::move(voxels);
  }

  const Dims &dims() const { return dims_; }
  std::size_t index(std::size_t w, std::size_t h, std::size_t l) const {
    return (w * dims_.H + h) * dims_.L + l;
  }
  V &operator()(std::size_t w, std::size_t h, std::size_t l) { return voxels_[index(w, h, l)]; }
  const V &operator()(std::size_t w, std::size_t h, std::size_t l) const {
    return voxels_[index(w, h, l)];
  }
  V &operator[](std::size_t i) { return voxels_[i]; }
  const V &operator[](std::size_t i) const { return voxels_[i]; }
  std::vector<V> &voxels() { return voxels_; }
  const std::vector<V> &voxels() const { return voxels_; }
  std::size_t size() const { return voxels_.size(); }

  bool operator==(const Grid3 &o) const { return dims_ == o.dims_ && voxels_ == o.voxels_; }

private:
  Dims dims_;
  std::vector<V> voxels_;
};

struct Volume : Grid3<float> {
  using Grid3<float>::Grid3;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0}; // metadata only
};

struct Mask : Grid3<std::uint8_t> {
  using Grid3<std::uint8_t>::Grid3;

  std::size_t foreground() const {
    std::size_t n = 0;
    for (auto v : voxels())
      n += v != 0;
    return n;
  }

  void check_binary(const char *what) const {
    for (auto v : voxels())
      if (v > 1)
        throw ValueError(std::string(what) + ": mask is not binary");
  }
};

enum class Axis { coronal, sagittal, axial };

inline constexpr std::array<Axis, 3> kAllAxes{Axis::coronal, Axis::sagittal, Axis::axial};

inline std::string_view axis_name(Axis a) {
  switch (a) {
  case Axis::coronal:
    return "coronal";
  case Axis::sagittal:
    return "sagittal";
  case Axis::axial:
    return "axial";
  }
  return "?";
}

inline Axis parse_axis(std::string_view s) {
  for (Axis a : kAllAxes)
    if (axis_name(a) == s)
      return a;
  throw ConfigError("unknown axis '" + std::string(s) + "' (coronal, sagittal, axial)");
}

struct SliceGeometry {
  std::size_t count, rows, cols;
};

inline SliceGeometry slice_geometry(const Dims &d, Axis a) {
  switch (a) {
  case Axis::coronal:
    return {d.W, d.H, d.L};
  case Axis::sagittal:
    return {d.H, d.W, d.L};
  case Axis::axial:
    return {d.L, d.H, d.W};
  }
  return {0, 0, 0};
}

// Voxel index of (slice, row, col) for the given view.
inline std::size_t slice_voxel(const Dims &d, Axis a, std::size_t s, std::size_t r,
                               std::size_t c) {
  switch (a) {
  case Axis::coronal:
    return (s * d.H + r) * d.L + c;
  case Axis::sagittal:
    return (r * d.H + s) * d.L + c;
  case Axis::axial:
    return (c * d.H + r) * d.L + s;
  }
  return 0;
}

// One slice as a (1,1,rows,cols) tensor.
template <typename T, typename V>
Tensor<T> extract_slice(const Grid3<V> &vol, Axis a, std::size_t s) {
  const auto g = slice_geometry(vol.dims(), a);
  if (s >= g.count)
    throw ShapeError("slice index out of range");
  Tensor<T> t(1, 1, g.rows, g.cols);
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c)
      t(0, 0, r, c) = static_cast<T>(vol[slice_voxel(vol.dims(), a, s, r, c)]);
  return t;
}

template <typename T, typename V>
std::vector<Tensor<T>> extract_slices(const Grid3<V> &vol, Axis a) {
  const auto g = slice_geometry(vol.dims(), a);
  std::vector<Tensor<T>> out;
  out.reserve(g.count);
  for (std::size_t s = 0; s < g.count; ++s)
    out.push_back(extract_slice<T>(vol, a, s));
  return out;
}

// Inverse of extract_slices.
template <typename G, typename T>
G restack(const std::vector<Tensor<T>> &slices, const Dims &dims, Axis a) {
  const auto g = slice_geometry(dims, a);
  if (slices.size() != g.count)
    throw ShapeError("restack: expected " + std::to_string(g.count) + " slices, got " +
                     std::to_string(slices.size()));
  G out(dims);
  for (std::size_t s = 0; s < g.count; ++s) {
    const Tensor<T> &t = slices[s];
    if (t.h() != g.rows || t.w() != g.cols)
      throw ShapeError("restack: slice " + std::to_string(s) + " has shape " + t.shape().str());
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c)
        out[slice_voxel(dims, a, s, r, c)] =
            static_cast<std::decay_t<decltype(out[0])>>(t(0, 0, r, c));
  }
  return out;
}

} // namespace msan
