#include <gtest/gtest.h>

#include "common.hpp"
#include "msan/multiview.hpp"
#include "msan/reference.hpp"
#include "msan/selftest.hpp"

using namespace msan;
using testing_util::randn;

namespace {

Volume numbered(Dims d) {
  Volume v(d);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<float>(i);
  return v;
}

Mask random_mask(Dims d, std::uint64_t seed, double p = 0.4) {
  Rng rng(seed);
  Mask m(d);
  for (auto &v : m.voxels())
    v = rng.uniform() < p ? 1 : 0;
  return m;
}

// Reads the input back as a probability: slices windowed as mask * 255 give
// the mask itself.
SliceModel<float> echo_model() {
  return {8, [](const Tensor<float> &x) {
            Tensor<float> p(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i)
              p[i] = x[i] / 255.0f;
            return p;
          }};
}

SliceModel<float> zero_model() {
  return {8, [](const Tensor<float> &x) { return Tensor<float>(x.shape()); }};
}

Volume as_windowed(const Mask &m) {
  Volume v(m.dims());
  for (std::size_t i = 0; i < m.size(); ++i)
    v[i] = m[i] ? 255.0f : 0.0f;
  return v;
}

InferenceConfig unit_scale() {
  InferenceConfig c;
  c.scales = {1.0};
  c.batch = 5;
  return c;
}

} // namespace

TEST(Slices, CountsAndShapes) {
  const Dims d{4, 5, 6};
  const Volume v = numbered(d);
  const auto ax = extract_slices<float>(v, Axis::axial);
  ASSERT_EQ(ax.size(), 6u);
  EXPECT_EQ(ax[0].shape(), (Shape{1, 1, 5, 4}));
  const auto co = extract_slices<float>(v, Axis::coronal);
  ASSERT_EQ(co.size(), 4u);
  EXPECT_EQ(co[0].shape(), (Shape{1, 1, 5, 6}));
  const auto sa = extract_slices<float>(v, Axis::sagittal);
  ASSERT_EQ(sa.size(), 5u);
  EXPECT_EQ(sa[0].shape(), (Shape{1, 1, 4, 6}));
}

TEST(Slices, RestackRoundTrip) {
  const Dims d{3, 7, 5};
  const Volume v = numbered(d);
  const Mask m = random_mask(d, 1);
  for (Axis a : kAllAxes) {
    EXPECT_EQ(restack<Volume>(extract_slices<float>(v, a), d, a), v);
    EXPECT_EQ(restack<Mask>(extract_slices<float>(m, a), d, a), m);
  }
}

TEST(Slices, IndexMapping) {
  const Dims d{6, 7, 8};
  Volume v(d);
  v(2, 3, 5) = 42.0f;
  EXPECT_EQ(extract_slice<float>(v, Axis::axial, 5)(0, 0, 3, 2), 42.0f);
  EXPECT_EQ(extract_slice<float>(v, Axis::coronal, 2)(0, 0, 3, 5), 42.0f);
  EXPECT_EQ(extract_slice<float>(v, Axis::sagittal, 3)(0, 0, 2, 5), 42.0f);
  // exactly one hot voxel per view
  for (Axis a : kAllAxes) {
    double total = 0;
    for (const auto &s : extract_slices<float>(v, a))
      for (float x : s.span())
        total += x;
    EXPECT_EQ(total, 42.0);
  }
}

TEST(InferView, AllBackgroundGivesEmptyMask) {
  const Volume v = numbered({8, 9, 10});
  for (Axis a : kAllAxes) {
    const Mask m = infer_view(zero_model(), v, a, InferenceConfig{});
    EXPECT_EQ(m.dims(), v.dims());
    EXPECT_EQ(m.foreground(), 0u);
  }
}

TEST(InferView, EchoStubReproducesGroundTruth) {
  const Dims d{9, 12, 15};
  const Mask gt = random_mask(d, 2, 0.3);
  const Volume w = as_windowed(gt);
  for (Axis a : kAllAxes) {
    const Mask m = infer_view(echo_model(), w, a, unit_scale());
    EXPECT_EQ(m.dims(), d);
    EXPECT_EQ(m, gt) << axis_name(a);
  }
}

TEST(InferView, MatchesPerSliceMultiScale) {
  MsanModel<float> model(selftest::tiny_msan_config(), 9);
  const SliceModel<float> sm = slice_model(model);
  const Dims d{24, 32, 24};
  Rng rng(10);
  Volume w(d);
  for (auto &x : w.voxels())
    x = static_cast<float>(rng.uniform(0, 255));
  InferenceConfig cfg;
  cfg.scales = {1.5, 1.0};
  cfg.rho = 0.45;
  cfg.batch = 7;
  for (Axis a : kAllAxes) {
    const Mask m = infer_view(sm, w, a, cfg);
    const auto slices = extract_slices<float>(w, a);
    std::vector<Tensor<float>> per;
    for (const auto &s : slices)
      per.push_back(infer_multiscale(sm, s, cfg).mask);
    EXPECT_EQ(m, restack<Mask>(per, d, a)) << axis_name(a);
  }
}

TEST(InferVolume, StubsAndMissingAxis) {
  const Dims d{8, 10, 12};
  const Mask gt = random_mask(d, 3, 0.25);
  // HU volume whose window maps foreground to 255 and background to 0
  Volume hu(d);
  for (std::size_t i = 0; i < hu.size(); ++i)
    hu[i] = gt[i] ? 400.0f : -200.0f;
  std::map<Axis, SliceModel<float>> models;
  for (Axis a : kAllAxes)
    models.emplace(a, echo_model());
  EXPECT_EQ(infer_volume(models, hu, WindowSpec{}, unit_scale()), gt);
  models.erase(Axis::sagittal);
  EXPECT_THROW(infer_volume(models, hu, WindowSpec{}, unit_scale()), ConfigError);
}

TEST(Vote, Examples) {
  const Dims d{1, 1, 2};
  const Mask a(d, std::vector<std::uint8_t>{1, 1}), b(d, std::vector<std::uint8_t>{1, 0}),
      c(d, std::vector<std::uint8_t>{0, 0});
  const Mask v = majority_vote(a, b, c);
  EXPECT_EQ(v[0], 1);
  EXPECT_EQ(v[1], 0);
  const Mask r = random_mask({4, 4, 4}, 4);
  EXPECT_EQ(majority_vote(r, r, r), r);
}

TEST(Vote, TruthTableAndOrdering) {
  const Dims d{4, 4, 4};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Mask a = random_mask(d, 10 * s + 1), b = random_mask(d, 10 * s + 2), c = random_mask(d, 10 * s + 3);
    const Mask v = majority_vote(a, b, c);
    ASSERT_EQ(v, ref::vote(a, b, c));
    for (const auto &perm : {majority_vote(a, c, b), majority_vote(b, a, c), majority_vote(b, c, a),
                             majority_vote(c, a, b), majority_vote(c, b, a)})
      ASSERT_EQ(perm, v);
    for (std::size_t i = 0; i < v.size(); ++i) {
      ASSERT_LE(a[i] & b[i] & c[i], v[i]);
      ASSERT_LE(v[i], a[i] | b[i] | c[i]);
    }
  }
  // five views use the same strict-majority rule
  const Mask m1 = random_mask(d, 7), m2 = random_mask(d, 8);
  const Mask five = majority_vote({&m1, &m1, &m2, &m2, &m2});
  EXPECT_EQ(five, m2);
}

TEST(Vote, Errors) {
  const Mask a = random_mask({2, 2, 2}, 1), b = random_mask({2, 2, 3}, 2);
  EXPECT_THROW(majority_vote(a, a, b), ShapeError);
  EXPECT_THROW(majority_vote({&a, &a}), ValueError);
  EXPECT_THROW(majority_vote({}), ValueError);
  Mask bad = a;
  bad[0] = 2;
  EXPECT_THROW(majority_vote(a, a, bad), ValueError);
}
