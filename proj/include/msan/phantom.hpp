#pragma once

// Synthetic "bleed" phantoms in Hounsfield units with exact ground truth.
//
// Each volume is an elliptic soft-tissue body in air with
//   - bright bone rings (tori) and contrast-filled vessel tubes, never labelled,
//   - 1..k blobby foci of variable brightness: a sphere whose radius is
//     modulated by a random sum of zonal harmonics (Legendre P2/P3 of the
//     direction), bounded by boundary_noise_amp,
//   - additive Gaussian noise.
// Foci are painted last, so each voxel carries exactly one label.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msan/error.hpp"
#include "msan/rng.hpp"
#include "msan/volume.hpp"

namespace msan {

struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(Rng &rng) const { return rng.uniform(lo, hi); }
};

struct CountRange {
  int lo = 0, hi = 0;
  int sample(Rng &rng) const { return static_cast<int>(rng.integer(lo, hi)); }
};

struct PhantomConfig {
  Dims dims{64, 64, 64};
  CountRange n_foci{1, 5};
  Range focus_radius_vox{2.0, 10.0};
  Range focus_intensity_hu{150.0, 320.0};
  double boundary_noise_amp = 0.35; // fraction of the radius
  double focus_gradient_hu = 20.0;  // in-focus intensity drift across one radius
  CountRange bone_rings{1, 2};
  Range bone_hu{700.0, 1200.0};
  Range bone_major_radius_vox{8.0, 14.0};
  Range bone_minor_radius_vox{1.5, 3.0};
  CountRange vessel_tubes{2, 4};
  Range vessel_hu{120.0, 250.0};
  Range vessel_radius_vox{1.0, 2.5};
  double tissue_hu = 40.0;
  double air_hu = -1000.0;
  double noise_sigma_hu = 15.0;
  int placement_retries = 500;

  void validate() const {
    auto range_ok = [](const Range &r) { return r.lo <= r.hi; };
    auto count_ok = [](const CountRange &r) { return 0 <= r.lo && r.lo <= r.hi; };
    if (dims.W < 8 || dims.H < 8 || dims.L < 8)
      throw ConfigError("phantom: dims must be at least 8 per axis");
    if (!count_ok(n_foci) || n_foci.lo < 1 || !count_ok(bone_rings) || !count_ok(vessel_tubes))
      throw ConfigError("phantom: invalid count range");
    if (!range_ok(focus_radius_vox) || focus_radius_vox.lo <= 0.0 ||
        !range_ok(focus_intensity_hu) || !range_ok(bone_hu) || !range_ok(bone_major_radius_vox) ||
        !range_ok(bone_minor_radius_vox) || !range_ok(vessel_hu) || !range_ok(vessel_radius_vox))
      throw ConfigError("phantom: invalid value range");
    if (boundary_noise_amp < 0.0 || boundary_noise_amp >= 1.0)
      throw ConfigError("phantom: boundary_noise_amp must be in [0, 1)");
    if (noise_sigma_hu < 0.0)
      throw ConfigError("phantom: noise_sigma_hu must be >= 0");
    const double extent = 2.0 * focus_radius_vox.hi * (1.0 + boundary_noise_amp) + 4.0;
    if (extent > static_cast<double>(std::min({dims.W, dims.H, dims.L})))
      throw ConfigError("phantom: foci do not fit inside the volume");
  }
};

struct FocusInfo {
  std::array<double, 3> center;
  double radius;
  double intensity_hu;
  std::size_t voxels = 0;
};

struct Phantom {
  Volume volume; // HU
  Mask mask;
  std::vector<FocusInfo> foci;
  // 0 background/tissue, 1 bone, 2 vessel, 3 focus
  std::vector<std::uint8_t> labels;
};

namespace detail {

using Vec3 = std::array<double, 3>;

inline Vec3 random_unit(Rng &rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-9)
      return {v[0] / n, v[1] / n, v[2] / n};
  }
}

inline double dot(const Vec3 &a, const Vec3 &b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline double legendre(int l, double x) {
  switch (l) {
  case 2:
    return 0.5 * (3 * x * x - 1);
  case 3:
    return 0.5 * (5 * x * x * x - 3 * x);
  default:
    return 1.0;
  }
}

// Radial modulation f(u) in [-1, 1] for unit direction u.
struct RadialShape {
  std::vector<Vec3> axes;
  std::vector<int> orders;
  std::vector<double> weights;

  static RadialShape random(Rng &rng, int terms = 4) {
    RadialShape s;
    double norm = 0.0;
    for (int k = 0; k < terms; ++k) {
      s.axes.push_back(random_unit(rng));
      s.orders.push_back(2 + static_cast<int>(rng.index(2)));
      s.weights.push_back(rng.uniform(-1.0, 1.0));
      norm += std::abs(s.weights.back());
    }
    for (auto &w : s.weights)
      w /= std::max(norm, 1e-12);
    return s;
  }

  double operator()(const Vec3 &u) const {
    double f = 0.0;
    for (std::size_t k = 0; k < axes.size(); ++k)
      f += weights[k] * legendre(orders[k], dot(u, axes[k]));
    return f;
  }
};

inline Vec3 bezier(const Vec3 &a, const Vec3 &b, const Vec3 &c, double t) {
  const double u = 1 - t;
  return {u * u * a[0] + 2 * u * t * b[0] + t * t * c[0],
          u * u * a[1] + 2 * u * t * b[1] + t * t * c[1],
          u * u * a[2] + 2 * u * t * b[2] + t * t * c[2]};
}

} // namespace detail

inline Phantom generate_phantom(const PhantomConfig &cfg, std::uint64_t seed) {
  using detail::Vec3;
  cfg.validate();
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  const Dims d = cfg.dims;
  const double W = static_cast<double>(d.W), H = static_cast<double>(d.H),
               L = static_cast<double>(d.L);
  Phantom ph{Volume(d), Mask(d), {}, std::vector<std::uint8_t>(d.count(), 0)};

  // Body: elliptic cylinder along L.
  const double bw = 0.46 * W, bh = 0.40 * H, cw = (W - 1) / 2, ch = (H - 1) / 2;
  auto inside_body = [&](double w, double h) {
    const double a = (w - cw) / bw, b = (h - ch) / bh;
    return a * a + b * b <= 1.0;
  };
  std::vector<float> hu(d.count());
  for (std::size_t w = 0; w < d.W; ++w)
    for (std::size_t h = 0; h < d.H; ++h) {
      const float v = static_cast<float>(inside_body(static_cast<double>(w), static_cast<double>(h))
                                             ? cfg.tissue_hu
                                             : cfg.air_hu);
      for (std::size_t l = 0; l < d.L; ++l)
        hu[ph.volume.index(w, h, l)] = v;
    }

  auto paint_bbox = [&](const Vec3 &lo, const Vec3 &hi, auto &&fn) {
    const auto clampi = [](double v, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
    };
    for (std::size_t w = clampi(std::floor(lo[0]), d.W); w <= clampi(std::ceil(hi[0]), d.W); ++w)
      for (std::size_t h = clampi(std::floor(lo[1]), d.H); h <= clampi(std::ceil(hi[1]), d.H);
           ++h)
        for (std::size_t l = clampi(std::floor(lo[2]), d.L);
             l <= clampi(std::ceil(hi[2]), d.L); ++l)
          fn(w, h, l);
  };

  // Bone rings.
  const int n_bone = cfg.bone_rings.sample(rng);
  for (int k = 0; k < n_bone; ++k) {
    const double R = cfg.bone_major_radius_vox.sample(rng);
    const double r = cfg.bone_minor_radius_vox.sample(rng);
    const Vec3 c{rng.uniform(0.25 * W, 0.75 * W), rng.uniform(0.3 * H, 0.7 * H),
                 rng.uniform(0.2 * L, 0.8 * L)};
    const Vec3 axis = detail::random_unit(rng);
    const float v = static_cast<float>(cfg.bone_hu.sample(rng));
    const double e = R + r + 1;
    paint_bbox({c[0] - e, c[1] - e, c[2] - e}, {c[0] + e, c[1] + e, c[2] + e},
               [&](std::size_t w, std::size_t h, std::size_t l) {
                 const Vec3 p{static_cast<double>(w) - c[0], static_cast<double>(h) - c[1],
                              static_cast<double>(l) - c[2]};
                 const double along = detail::dot(p, axis);
                 const double radial =
                     std::sqrt(std::max(0.0, detail::dot(p, p) - along * along));
                 const double dr = radial - R;
                 if (dr * dr + along * along <= r * r) {
                   const std::size_t i = ph.volume.index(w, h, l);
                   hu[i] = v;
                   ph.labels[i] = 1;
                 }
               });
  }

  // Vessel tubes: gently curved quadratic Bezier paths crossing the volume.
  const int n_vessel = cfg.vessel_tubes.sample(rng);
  for (int k = 0; k < n_vessel; ++k) {
    const Vec3 dir = detail::random_unit(rng);
    const Vec3 mid{rng.uniform(0.3 * W, 0.7 * W), rng.uniform(0.3 * H, 0.7 * H),
                   rng.uniform(0.3 * L, 0.7 * L)};
    const double span = std::max({W, H, L});
    const Vec3 a{mid[0] - dir[0] * span, mid[1] - dir[1] * span, mid[2] - dir[2] * span};
    const Vec3 b{mid[0] + rng.normal(0, 0.08 * span), mid[1] + rng.normal(0, 0.08 * span),
                 mid[2] + rng.normal(0, 0.08 * span)};
    const Vec3 c{mid[0] + dir[0] * span, mid[1] + dir[1] * span, mid[2] + dir[2] * span};
    const double r = cfg.vessel_radius_vox.sample(rng);
    const float v = static_cast<float>(cfg.vessel_hu.sample(rng));
    const int samples = static_cast<int>(4 * span);
    for (int s = 0; s <= samples; ++s) {
      const Vec3 p = detail::bezier(a, b, c, static_cast<double>(s) / samples);
      paint_bbox({p[0] - r, p[1] - r, p[2] - r}, {p[0] + r, p[1] + r, p[2] + r},
                 [&](std::size_t w, std::size_t h, std::size_t l) {
                   const double dw = static_cast<double>(w) - p[0],
                                dh = static_cast<double>(h) - p[1],
                                dl = static_cast<double>(l) - p[2];
                   if (dw * dw + dh * dh + dl * dl <= r * r) {
                     const std::size_t i = ph.volume.index(w, h, l);
                     if (ph.labels[i] != 1) {
                       hu[i] = v;
                       ph.labels[i] = 2;
                     }
                   }
                 });
    }
  }

  // Foci.
  const int n_foci = cfg.n_foci.sample(rng);
  const double amp = cfg.boundary_noise_amp;
  struct Placed {
    Vec3 c;
    double reach;
  };
  std::vector<Placed> placed;
  for (int k = 0; k < n_foci; ++k) {
    // Log-uniform radius: small foci are as common per octave as large ones.
    const double R = std::exp(rng.uniform(std::log(cfg.focus_radius_vox.lo),
                                          std::log(cfg.focus_radius_vox.hi)));
    const double reach = R * (1.0 + amp);
    Vec3 c{};
    bool ok = false;
    for (int attempt = 0; attempt < cfg.placement_retries && !ok; ++attempt) {
      const double m = reach + 2.0;
      c = {rng.uniform(m, W - 1 - m), rng.uniform(m, H - 1 - m), rng.uniform(m, L - 1 - m)};
      ok = inside_body(c[0], c[1]);
      for (const auto &p : placed) {
        const Vec3 dv{c[0] - p.c[0], c[1] - p.c[1], c[2] - p.c[2]};
        ok = ok && std::sqrt(detail::dot(dv, dv)) > reach + p.reach + 1.0;
      }
    }
    if (!ok)
      throw DataError("phantom: could not place focus " + std::to_string(k) + " after " +
                      std::to_string(cfg.placement_retries) + " attempts (seed " +
                      std::to_string(seed) + ")");
    placed.push_back({c, reach});
    const auto shape = detail::RadialShape::random(rng);
    const double intensity = cfg.focus_intensity_hu.sample(rng);
    const Vec3 grad_dir = detail::random_unit(rng);
    FocusInfo info{c, R, intensity, 0};
    const double e = reach + 1;
    paint_bbox({c[0] - e, c[1] - e, c[2] - e}, {c[0] + e, c[1] + e, c[2] + e},
               [&](std::size_t w, std::size_t h, std::size_t l) {
                 const Vec3 p{static_cast<double>(w) - c[0], static_cast<double>(h) - c[1],
                              static_cast<double>(l) - c[2]};
                 const double dist2 = detail::dot(p, p);
                 double limit = R;
                 if (amp > 0.0 && dist2 > 0.0) {
                   const double dn = std::sqrt(dist2);
                   limit = R * (1.0 + amp * shape({p[0] / dn, p[1] / dn, p[2] / dn}));
                 }
                 if (dist2 <= limit * limit) {
                   const std::size_t i = ph.volume.index(w, h, l);
                   hu[i] = static_cast<float>(intensity + cfg.focus_gradient_hu *
                                                              detail::dot(p, grad_dir) / R);
                   ph.labels[i] = 3;
                   ph.mask[i] = 1;
                   ++info.voxels;
                 }
               });
    ph.foci.push_back(info);
  }

  if (cfg.noise_sigma_hu > 0.0)
    for (auto &v : hu)
      v = static_cast<float>(v + rng.normal(0.0, cfg.noise_sigma_hu));
  ph.volume = Volume(d, std::move(hu));
  return ph;
}

} // namespace msan
