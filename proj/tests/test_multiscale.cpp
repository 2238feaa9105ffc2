#include <algorithm>

#include <gtest/gtest.h>

#include "common.hpp"
#include "msan/multiscale.hpp"
#include "msan/selftest.hpp"

using namespace msan;
using testing_util::randn;
using testing_util::T64;

namespace {

// Model stub that ignores its input and returns a fixed probability.
SliceModel<double> constant_model(double p) {
  return {8, [p](const T64 &x) { return T64(Shape{x.n(), 1, x.h(), x.w()}, p); }};
}

struct TinyNet {
  MsanModel<double> model{selftest::tiny_msan_config(), 3};
  SliceModel<double> sm = slice_model(model);
  TinyNet() {
    auto &w = model.params().at("attention.w");
    w = randn(w.shape(), 4, 0.2);
  }
};

} // namespace

TEST(MultiScale, SingleUnitScaleEqualsDirectForward) {
  TinyNet net;
  Rng rng(1);
  const T64 x = T64::random_uniform({2, 1, 24, 32}, rng, 0, 255);
  InferenceConfig cfg;
  cfg.scales = {1.0};
  const auto r = infer_multiscale(net.sm, x, cfg);
  EXPECT_EQ(r.probability, net.model.foreground_probability(x));
}

TEST(MultiScale, IdenticalMapsFuseToThemselves) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const T64 m = T64::random_uniform({1, 1, 7, 9}, rng, 0, 1);
    EXPECT_EQ(fuse_scales<double>({m, m, m}), m);
    const Tensor<float> f = Tensor<float>::random_uniform({1, 1, 7, 9}, rng, 0, 1);
    EXPECT_EQ(fuse_scales<float>({f, f, f}), f);
  }
  InferenceConfig cfg;
  const auto r = infer_multiscale(constant_model(0.37), T64(Shape{1, 1, 20, 28}), cfg);
  for (double v : r.probability.span())
    EXPECT_EQ(v, 0.37);
}

TEST(MultiScale, BoundaryValueIsBackground) {
  // mean(0.2, 0.6, 0.7) = 0.5 and the rule is strictly greater than rho
  for (auto order : {std::vector<double>{0.2, 0.6, 0.7}, {0.7, 0.2, 0.6}, {0.6, 0.7, 0.2}}) {
    std::vector<T64> maps;
    for (double p : order)
      maps.emplace_back(Shape{1, 1, 1, 1}, p);
    const T64 fused = fuse_scales(maps);
    EXPECT_EQ(fused[0], 0.5);
    EXPECT_EQ(binarize(fused, 0.5)[0], 0.0);
    EXPECT_EQ(binarize(fused, 0.4999)[0], 1.0);
  }
  std::vector<Tensor<float>> fm;
  for (float p : {0.2f, 0.6f, 0.7f})
    fm.emplace_back(Shape{1, 1, 1, 1}, p);
  EXPECT_EQ(binarize(fuse_scales(fm), 0.5)[0], 0.0f);
}

TEST(MultiScale, FusedWithinPerScaleBounds) {
  TinyNet net;
  Rng rng(5);
  const T64 x = T64::random_uniform({2, 1, 24, 24}, rng, 0, 255);
  const std::vector<double> scales{1.0, 1.25, 1.5, 1.75};
  std::vector<T64> maps;
  for (double s : scales)
    maps.push_back(scale_probability(net.sm, x, s, PadPolicy::reflect));
  InferenceConfig cfg;
  cfg.scales = scales;
  const T64 p = infer_multiscale(net.sm, x, cfg).probability;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double lo = 1, hi = 0;
    for (const auto &m : maps) {
      lo = std::min(lo, m[i]);
      hi = std::max(hi, m[i]);
    }
    ASSERT_GE(p[i], lo - 1e-15);
    ASSERT_LE(p[i], hi + 1e-15);
  }
}

TEST(MultiScale, ScaleOrderDoesNotMatter) {
  TinyNet net;
  Rng rng(6);
  const T64 x = T64::random_uniform({1, 1, 24, 40}, rng, 0, 255);
  InferenceConfig a, b, c;
  a.scales = {1.25, 1.5, 1.75};
  b.scales = {1.75, 1.25, 1.5};
  c.scales = {1.5, 1.75, 1.25};
  const auto ra = infer_multiscale(net.sm, x, a);
  EXPECT_EQ(ra.probability, infer_multiscale(net.sm, x, b).probability);
  EXPECT_EQ(ra.probability, infer_multiscale(net.sm, x, c).probability);
  EXPECT_EQ(ra.mask, infer_multiscale(net.sm, x, c).mask);
}

TEST(MultiScale, ForegroundShrinksAsRhoGrows) {
  Rng rng(7);
  const T64 p = T64::random_uniform({1, 1, 16, 16}, rng, 0, 1);
  T64 prev = binarize(p, 0.05);
  for (double rho = 0.1; rho < 1.0; rho += 0.05) {
    const T64 cur = binarize(p, rho);
    for (std::size_t i = 0; i < p.size(); ++i)
      ASSERT_LE(cur[i], prev[i]);
    prev = cur;
  }
}

TEST(MultiScale, Errors) {
  TinyNet net;
  InferenceConfig cfg;
  cfg.scales = {0.05};
  // 24 * 0.05 rounds to one pixel: nothing left at the ASPP stride
  EXPECT_THROW(infer_multiscale(net.sm, randn({1, 1, 24, 24}, 8), cfg), ShapeError);
  cfg.scales = {};
  EXPECT_THROW(infer_multiscale(net.sm, randn({1, 1, 24, 24}, 8), cfg), ConfigError);
  cfg.scales = {1.0};
  cfg.rho = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(fuse_scales<double>({}), ValueError);
  EXPECT_THROW(fuse_scales<double>({T64(Shape{1, 1, 2, 2}), T64(Shape{1, 1, 2, 3})}), ShapeError);
}
