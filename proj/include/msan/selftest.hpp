#pragma once

// Oracle and gradient checks shared by `msan selftest` and the acceptance
// driver. Each check returns its worst observed error next to the tolerance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "msan/attention.hpp"
#include "msan/autodiff.hpp"
#include "msan/kernels.hpp"
#include "msan/metrics.hpp"
#include "msan/model.hpp"
#include "msan/multiscale.hpp"
#include "msan/multiview.hpp"
#include "msan/optim.hpp"
#include "msan/reference.hpp"
#include "msan/rng.hpp"

namespace msan::selftest {

struct CheckResult {
  std::string name;
  double worst = 0.0; // error measure (or failure count)
  double tolerance = 0.0;
  std::size_t cases = 0;
  bool pass = false;
};

inline std::ostream &operator<<(std::ostream &os, const CheckResult &r) {
  return os << (r.pass ? "PASS " : "FAIL ") << r.name << "  worst=" << r.worst
            << " tol=" << r.tolerance << " cases=" << r.cases;
}

inline CheckResult finish(std::string name, double worst, double tol, std::size_t cases) {
  return {std::move(name), worst, tol, cases, worst <= tol};
}

using T64 = Tensor<double>;

// -------------------- kernel oracles --------------------

// Random shape/rate/stride/padding draws; even-numbered cases use rate 1.
inline CheckResult conv_oracle(std::size_t configs = 100, std::uint64_t seed = 11) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < configs; ++k) {
    const std::size_t n = rng.integer(1, 2), ci = rng.integer(1, 4), co = rng.integer(1, 4);
    const std::size_t kh = 2 * rng.integer(0, 2) + 1, kw = 2 * rng.integer(0, 2) + 1;
    const int rate = k % 2 == 0 ? 1 : static_cast<int>(rng.integer(2, 4));
    const int stride = static_cast<int>(rng.integer(1, 2));
    const int pad = static_cast<int>(rng.integer(0, static_cast<std::int64_t>(rate * (kh - 1) / 2 + 1)));
    const std::size_t need = std::max(kh, kw) * static_cast<std::size_t>(rate);
    const std::size_t h = need + rng.integer(0, 6), w = need + rng.integer(0, 6);
    T64 x = T64::random_normal({n, ci, h, w}, rng);
    T64 ker = T64::random_normal({co, ci, kh, kw}, rng);
    std::vector<double> bias(co);
    for (auto &b : bias)
      b = rng.normal();
    const T64 y = conv2d_atrous(x, ConvSpec<double>{ker, bias, {rate, stride, pad}});
    worst = std::max(worst, max_abs_diff(y, ref::conv2d(x, ker, bias, rate, stride, pad)));
  }
  return finish("conv2d_atrous vs direct-sum oracle", worst, 1e-12, configs);
}

inline CheckResult attention_oracle(std::size_t configs = 100, std::uint64_t seed = 12) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < configs; ++k) {
    const Shape s{static_cast<std::size_t>(rng.integer(1, 2)), static_cast<std::size_t>(rng.integer(1, 6)),
                  static_cast<std::size_t>(rng.integer(1, 7)), static_cast<std::size_t>(rng.integer(1, 7))};
    const T64 x = T64::random_normal(s, rng);
    worst = std::max(worst, max_abs_diff(nonlocal_mix(x), ref::nonlocal(x)));
  }
  return finish("nonlocal attention vs pairwise oracle", worst, 1e-12, configs);
}

// -------------------- gradient suite --------------------

namespace detail {

inline GradCheckOptions grad_options() {
  GradCheckOptions o;
  o.max_coords = 12;
  return o;
}

// Worst relative error over `instances` random instantiations built by
// `setup(rng, store)`, which returns the loss builder.
inline CheckResult grad_family(
    std::string name, double tol, std::size_t instances, std::uint64_t seed,
    const std::function<std::function<Var(Graph<double> &)>(Rng &, ParamStore<double> &)> &setup) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < instances; ++k) {
    ParamStore<double> store;
    auto build = setup(rng, store);
    GradCheckOptions opt = grad_options();
    opt.seed = seed * 1000 + k;
    worst = std::max(worst, grad_check<double>(store, build, {}, opt).max_rel_error);
  }
  return finish("gradient: " + std::move(name), worst, tol, instances);
}

inline T64 probe_like(const Shape &s, Rng &rng) { return T64::random_normal(s, rng); }

} // namespace detail

// A tiny full network; every trainable tensor is probed.
inline MsanConfig tiny_msan_config() {
  MsanConfig m;
  m.backbone.stage_channels = {2, 3, 4, 4};
  m.backbone.blocks_per_stage = {1, 1, 1, 1};
  m.aspp.rates = {1, 2};
  m.aspp.branch_channels = 3;
  m.decoder_channels = 3;
  return m;
}

inline CheckResult tiny_msan_gradient(std::uint64_t seed, double tol = 1e-5) {
  MsanModel<double> model(tiny_msan_config(), seed);
  Rng rng(seed + 1);
  // A non-zero projection so gradients also flow through the attention mix.
  Tensor<double> &w = model.params().at("attention.w");
  w = T64::random_normal(w.shape(), rng, 0.5);
  const T64 x = T64::random_uniform({2, 1, 24, 24}, rng, 0.0, 255.0);
  T64 t(Shape{2, 1, 24, 24});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
  GradCheckOptions opt;
  opt.max_coords = 6;
  opt.seed = seed;
  const auto r = grad_check<double>(
      model.params(),
      [&](Graph<double> &g) {
        return ad::cross_entropy(g, model.forward(g, g.constant(x), Mode::train), t, {1.0, 3.0});
      },
      {}, opt);
  return finish("gradient: full tiny MSAN graph", r.max_rel_error, tol, r.coords_checked);
}

inline std::vector<CheckResult> gradient_suite(std::size_t instances = 20, std::uint64_t seed = 21) {
  using detail::grad_family;
  using detail::probe_like;
  using Build = std::function<Var(Graph<double> &)>;
  std::vector<CheckResult> out;
  auto shape = [](Rng &rng, std::size_t cmax, std::size_t smin, std::size_t smax) {
    return Shape{static_cast<std::size_t>(rng.integer(1, 2)),
                 static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(cmax))),
                 static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(smin), static_cast<std::int64_t>(smax))),
                 static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(smin), static_cast<std::int64_t>(smax)))};
  };

  out.push_back(grad_family("conv2d_atrous", 1e-5, instances, seed + 1,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    const Shape s = shape(rng, 3, 5, 9);
    const int rate = static_cast<int>(rng.integer(1, 3)), stride = static_cast<int>(rng.integer(1, 2));
    const std::size_t co = rng.integer(1, 3);
    const ConvGeometry geom{rate, stride, rate};
    ps.add("x", T64::random_normal(s, rng));
    ps.add("w", T64::random_normal({co, s.c, 3, 3}, rng));
    ps.add("b", T64::random_normal({1, co, 1, 1}, rng));
    const T64 r = probe_like(conv_output_shape<double>(s, {co, s.c, 3, 3}, geom), rng);
    return [=, &ps](Graph<double> &g) {
      return ad::weighted_sum(g, ad::conv2d(g, g.parameter(ps, "x"), g.parameter(ps, "w"),
                                            g.parameter(ps, "b"), geom), r);
    };
  }));

  out.push_back(grad_family("batchnorm (train)", 1e-4, instances, seed + 2,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    Shape s = shape(rng, 3, 2, 5);
    s.n = 2;
    ps.add("x", T64::random_normal(s, rng, 2.0));
    ps.add("gamma", T64::random_uniform({1, s.c, 1, 1}, rng, 0.5, 1.5));
    ps.add("beta", T64::random_normal({1, s.c, 1, 1}, rng));
    ps.add("rm", T64(Shape{1, s.c, 1, 1}), false);
    ps.add("rv", T64(Shape{1, s.c, 1, 1}, 1.0), false);
    const T64 r = probe_like(s, rng);
    return [=, &ps](Graph<double> &g) {
      return ad::weighted_sum(g, ad::batchnorm(g, g.parameter(ps, "x"), g.parameter(ps, "gamma"),
                                               g.parameter(ps, "beta"), ps.at("rm"), ps.at("rv"),
                                               Mode::train, 0.1, 1e-5), r);
    };
  }));

  out.push_back(grad_family("relu / add / scale / mul", 1e-5, instances, seed + 3,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    const Shape s = shape(rng, 3, 2, 6);
    ps.add("a", T64::random_normal(s, rng));
    ps.add("b", T64::random_normal(s, rng));
    const T64 r = probe_like(s, rng);
    return [=, &ps](Graph<double> &g) {
      Var a = g.parameter(ps, "a"), b = g.parameter(ps, "b");
      Var y = ad::mul(g, ad::relu(g, ad::add(g, a, ad::scale(g, b, 0.7))), b);
      return ad::weighted_sum(g, y, r);
    };
  }));

  out.push_back(grad_family("bilinear resize", 1e-5, instances, seed + 4,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    const Shape s = shape(rng, 2, 2, 6);
    const std::size_t oh = rng.integer(1, 11), ow = rng.integer(1, 11);
    const bool ac = rng.uniform() < 0.5;
    ps.add("x", T64::random_normal(s, rng));
    const T64 r = probe_like({s.n, s.c, oh, ow}, rng);
    return [=, &ps](Graph<double> &g) {
      return ad::weighted_sum(g, ad::resize(g, g.parameter(ps, "x"), oh, ow, ac), r);
    };
  }));

  out.push_back(grad_family("global_avg_pool / concat", 1e-5, instances, seed + 5,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    const Shape s = shape(rng, 3, 1, 5);
    Shape s2 = s;
    s2.c = rng.integer(1, 3);
    ps.add("a", T64::random_normal(s, rng));
    ps.add("b", T64::random_normal(s2, rng));
    const T64 r = probe_like({s.n, s.c + s2.c, s.h, s.w}, rng);
    const T64 q = probe_like({s.n, s.c, 1, 1}, rng);
    return [=, &ps](Graph<double> &g) {
      Var a = g.parameter(ps, "a");
      Var cat = ad::concat(g, std::vector<Var>{a, g.parameter(ps, "b")});
      return ad::add(g, ad::weighted_sum(g, cat, r), ad::weighted_sum(g, ad::global_avg_pool(g, a), q));
    };
  }));

  out.push_back(grad_family("nonlocal attention z = w*y + x", 1e-5, instances, seed + 6,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    const Shape s = shape(rng, 4, 2, 5);
    ps.add("x", T64::random_normal(s, rng));
    ps.add("w", T64::random_normal({s.c, s.c, 1, 1}, rng, 0.5));
    const T64 r = probe_like(s, rng);
    return [=, &ps](Graph<double> &g) {
      return ad::weighted_sum(
          g, nonlocal_attention(g, g.parameter(ps, "x"), g.parameter(ps, "w")), r);
    };
  }));

  out.push_back(grad_family("pixelwise cross-entropy", 1e-5, instances, seed + 7,
                            [&](Rng &rng, ParamStore<double> &ps) -> Build {
    Shape s = shape(rng, 1, 1, 6);
    s.c = 2;
    ps.add("z", T64::random_normal(s, rng, 2.0));
    T64 t(Shape{s.n, 1, s.h, s.w});
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const std::array<double, 2> wts{1.0, rng.uniform(1.0, 4.0)};
    return [=, &ps](Graph<double> &g) { return ad::cross_entropy(g, g.parameter(ps, "z"), t, wts); };
  }));

  out.push_back(grad_family("ASPP (rates 1,2 + 1x1 + pool)", 1e-5, instances, seed + 8, [&](Rng &rng, ParamStore<double> &ps) -> Build {
    AsppConfig cfg;
    cfg.rates = {1, 2};
    cfg.branch_channels = 2;
    register_aspp(ps, "aspp", 3, cfg, rng);
    ps.add("x", T64::random_normal({2, 3, 5, 5}, rng));
    const T64 r = probe_like({2, 2, 5, 5}, rng);
    return [=, &ps](Graph<double> &g) {
      const Layers<double> L{ps, Mode::train, 0.1, 1e-5};
      return ad::weighted_sum(g, aspp_forward(g, g.parameter(ps, "x"), cfg, L, "aspp"), r);
    };
  }));

  out.push_back(tiny_msan_gradient(seed + 9));
  return out;
}

// -------------------- pipeline truth tables --------------------

inline Mask random_mask(const Dims &d, Rng &rng, double p = 0.5) {
  Mask m(d);
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = rng.uniform() < p ? 1 : 0;
  return m;
}

inline CheckResult vote_truth_table(std::size_t trials = 200, std::uint64_t seed = 31) {
  Rng rng(seed);
  double mismatches = 0;
  // Exhaustive over the 8 single-voxel combinations.
  for (std::size_t code = 0; code < 8; ++code) {
    Mask a({1, 1, 1}, (code >> 2) & 1), b({1, 1, 1}, (code >> 1) & 1), c({1, 1, 1}, code & 1);
    mismatches += majority_vote(a, b, c)[0] != ref::kVoteTable[code];
  }
  for (std::size_t k = 0; k < trials; ++k) {
    const Dims d{4, 4, 4};
    const Mask a = random_mask(d, rng), b = random_mask(d, rng), c = random_mask(d, rng);
    const Mask v = majority_vote(a, b, c), o = ref::vote(a, b, c);
    for (std::size_t i = 0; i < v.size(); ++i)
      mismatches += v[i] != o[i];
  }
  return finish("majority_vote vs truth table", mismatches, 0.0, trials + 8);
}

// Fused map stays within [min, max] of the inputs and foreground sets shrink
// as rho grows.
inline CheckResult fusion_properties(std::size_t trials = 200, std::uint64_t seed = 32) {
  Rng rng(seed);
  double violations = 0;
  for (std::size_t k = 0; k < trials; ++k) {
    const Shape s{1, 1, static_cast<std::size_t>(rng.integer(1, 12)), static_cast<std::size_t>(rng.integer(1, 12))};
    std::vector<T64> maps;
    const std::size_t count = rng.integer(1, 5);
    for (std::size_t m = 0; m < count; ++m)
      maps.push_back(T64::random_uniform(s, rng, 0.0, 1.0));
    const T64 f = fuse_scales(maps);
    for (std::size_t i = 0; i < f.size(); ++i) {
      double lo = maps[0][i], hi = maps[0][i];
      for (const auto &m : maps) {
        lo = std::min(lo, m[i]);
        hi = std::max(hi, m[i]);
      }
      violations += f[i] < lo || f[i] > hi;
    }
    std::vector<double> rhos{rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)};
    std::sort(rhos.begin(), rhos.end());
    for (std::size_t r = 1; r < rhos.size(); ++r) {
      const T64 lo = binarize(f, rhos[r - 1]), hi = binarize(f, rhos[r]);
      for (std::size_t i = 0; i < f.size(); ++i)
        violations += hi[i] > lo[i];
    }
  }
  return finish("scale fusion bounds and rho monotonicity", violations, 0.0, trials);
}

inline CheckResult restack_roundtrip(std::size_t trials = 30, std::uint64_t seed = 33) {
  Rng rng(seed);
  double failures = 0;
  for (std::size_t k = 0; k < trials; ++k) {
    const Dims d{static_cast<std::size_t>(rng.integer(1, 9)), static_cast<std::size_t>(rng.integer(1, 9)),
                 static_cast<std::size_t>(rng.integer(1, 9))};
    Volume v(d);
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<float>(rng.normal());
    for (Axis a : kAllAxes) {
      const auto slices = extract_slices<float>(v, a);
      failures += slices.size() != slice_geometry(d, a).count;
      failures += !(restack<Volume>(slices, d, a) == v);
    }
  }
  // Index mapping of voxel (2,3,5).
  Volume v({4, 6, 8});
  v(2, 3, 5) = 1.0f;
  failures += extract_slice<float>(v, Axis::axial, 5)(0, 0, 3, 2) != 1.0f;
  failures += extract_slice<float>(v, Axis::coronal, 2)(0, 0, 3, 5) != 1.0f;
  failures += extract_slice<float>(v, Axis::sagittal, 3)(0, 0, 2, 5) != 1.0f;
  return finish("extract/restack round trip (3 axes)", failures, 0.0, trials * 3);
}

// -------------------- DSC --------------------

inline CheckResult dsc_suite(std::size_t trials = 200, std::uint64_t seed = 34) {
  Rng rng(seed);
  double failures = 0;
  for (std::size_t k = 0; k < trials; ++k) {
    const Dims d{static_cast<std::size_t>(rng.integer(1, 6)), static_cast<std::size_t>(rng.integer(1, 6)),
                 static_cast<std::size_t>(rng.integer(1, 6))};
    const Mask a = random_mask(d, rng, rng.uniform()), b = random_mask(d, rng, rng.uniform());
    const double ab = dsc(a, b), ba = dsc(b, a);
    failures += ab != ba;
    failures += ab < 0.0 || ab > 1.0;
    failures += dsc(a, a) != 1.0;
    failures += ab != ref::dsc(a, b);
  }
  // |Y| = 4, |Z| = 6, overlap 3.
  Mask gt({10, 1, 1}), pred({10, 1, 1});
  for (std::size_t i : {0, 1, 2, 3})
    gt[i] = 1;
  for (std::size_t i : {1, 2, 3, 4, 5, 6})
    pred[i] = 1;
  failures += dsc(pred, gt) != 0.6;
  const Mask empty({3, 3, 3});
  failures += dsc(empty, empty) != 1.0;
  return finish("dsc symmetric, bounded, worked 0.6, both-empty 1.0", failures, 0.0, trials + 2);
}

// -------------------- driver --------------------

inline std::vector<CheckResult> run_all(std::ostream &os) {
  std::vector<CheckResult> all;
  auto emit = [&](CheckResult r) {
    os << r << "\n" << std::flush;
    all.push_back(std::move(r));
  };
  emit(conv_oracle());
  emit(attention_oracle());
  for (auto &r : gradient_suite())
    emit(std::move(r));
  emit(vote_truth_table());
  emit(fusion_properties());
  emit(restack_roundtrip());
  emit(dsc_suite());
  return all;
}

inline bool all_pass(const std::vector<CheckResult> &rs) {
  return std::all_of(rs.begin(), rs.end(), [](const CheckResult &r) { return r.pass; });
}

} // namespace msan::selftest
