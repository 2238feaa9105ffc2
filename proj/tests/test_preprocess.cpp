#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "common.hpp"
#include "msan/preprocess.hpp"

using namespace msan;
using testing_util::randn;
using testing_util::T64;

namespace {

Volume column(std::vector<float> v) {
  const std::size_t n = v.size();
  return Volume(Dims{1, 1, n}, std::move(v));
}

} // namespace

TEST(Window, Endpoints) {
  const Volume out = hu_window_normalize(column({-500, -80, 320, 1000, 120}), WindowSpec{});
  EXPECT_EQ(out[0], 0.0f);
  EXPECT_EQ(out[1], 0.0f);
  EXPECT_EQ(out[2], 255.0f);
  EXPECT_EQ(out[3], 255.0f);
  EXPECT_FLOAT_EQ(out[4], 127.5f);
}

TEST(Window, IdempotentOnWindowedRangeAndMonotone) {
  // Window where the output range is inside the input window, so applying it
  // twice is the identity on already-windowed values.
  const WindowSpec s{0.0, 255.0, 255.0};
  std::vector<float> hu;
  for (int v = -1200; v <= 1500; v += 7)
    hu.push_back(static_cast<float>(v));
  const Volume once = hu_window_normalize(column(hu), s);
  EXPECT_EQ(hu_window_normalize(once, s), once);

  const Volume w = hu_window_normalize(column(hu), WindowSpec{});
  for (std::size_t i = 1; i < w.size(); ++i)
    EXPECT_LE(w[i - 1], w[i]);
  for (float v : w.voxels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 255.0f);
  }
}

TEST(Window, Errors) {
  EXPECT_THROW(hu_window_normalize(column({0}), WindowSpec{10, 10, 255}), ConfigError);
  EXPECT_THROW(hu_window_normalize(column({0}), WindowSpec{0, 10, 0}), ConfigError);
  EXPECT_THROW(hu_window_normalize(column({std::nanf("")}), WindowSpec{}), NumericalError);
}

TEST(Rotation, ZeroAngleIsIdentity) {
  const T64 img = randn({1, 1, 9, 7}, 1);
  T64 mask(Shape{1, 1, 9, 7});
  mask(0, 0, 3, 4) = 1;
  const auto [ri, rm] = random_rotation(img, mask, 0.0);
  EXPECT_EQ(ri, img);
  EXPECT_EQ(rm, mask);
}

TEST(Rotation, ConstantImageStaysConstantInsideDisc) {
  const T64 img(Shape{1, 1, 21, 21}, 3.0);
  for (double a : {5.0, 12.5, 15.0, 37.0}) {
    const auto [ri, rm] = random_rotation(img, T64(Shape{1, 1, 21, 21}), a);
    const double c = 10.0;
    std::size_t zeros = 0;
    for (std::size_t r = 0; r < 21; ++r)
      for (std::size_t col = 0; col < 21; ++col) {
        const double d = std::hypot(r - c, col - c);
        if (d <= 10.0)
          EXPECT_NEAR(ri(0, 0, r, col), 3.0, 1e-12) << a << " " << r << "," << col;
        zeros += ri(0, 0, r, col) == 0.0;
      }
    EXPECT_GT(zeros, 0u) << "corners fall outside the rotated support at " << a;
  }
}

TEST(Rotation, NinetyDegreesIsIndexPermutation) {
  const T64 img(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const T64 mask(Shape{1, 1, 3, 3}, std::vector<double>{1, 1, 0, 0, 0, 0, 0, 0, 1});
  const auto [ri, rm] = random_rotation(img, mask, 90.0);
  // Counterclockwise as displayed: out(r, c) = in(c, n-1-r).
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(ri(0, 0, r, c), img(0, 0, c, 2 - r), 1e-12);
      EXPECT_EQ(rm(0, 0, r, c), mask(0, 0, c, 2 - r));
    }
}

TEST(Rotation, MaskStaysBinary) {
  Rng rng(2);
  T64 mask(Shape{1, 1, 32, 32});
  for (auto &v : mask.span())
    v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  for (double a = 0.5; a <= 15.0; a += 1.5) {
    const auto [ri, rm] = random_rotation(randn({1, 1, 32, 32}, 3), mask, a);
    for (double v : rm.span())
      ASSERT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(Rotation, ConvergesLinearlyAsAngleShrinks) {
  T64 img(Shape{1, 1, 33, 33});
  for (std::size_t r = 0; r < 33; ++r)
    for (std::size_t c = 0; c < 33; ++c)
      img(0, 0, r, c) = std::sin(0.2 * r) + std::cos(0.15 * c);
  auto err = [&](double a) {
    const auto [ri, rm] = random_rotation(img, T64(Shape{1, 1, 33, 33}), a);
    double m = 0;
    for (std::size_t r = 0; r < 33; ++r)
      for (std::size_t c = 0; c < 33; ++c)
        if (std::hypot(r - 16.0, c - 16.0) <= 14.0)
          m = std::max(m, std::abs(ri(0, 0, r, c) - img(0, 0, r, c)));
    return m;
  };
  const double e1 = err(0.4), e2 = err(0.2), e3 = err(0.1);
  EXPECT_GT(e1, 0.0);
  EXPECT_LT(e2, e1);
  EXPECT_LT(e3, e2);
  // halving the angle roughly halves the error
  EXPECT_NEAR(e1 / e2, 2.0, 0.35);
  EXPECT_NEAR(e2 / e3, 2.0, 0.35);
}

TEST(SampleScale, Singleton) {
  AugmentSpec s;
  s.train_scales = {1.5};
  Rng rng(4);
  for (int i = 0; i < 100; ++i)
    EXPECT_EQ(sample_scale(s, rng), 1.5);
}

TEST(SampleScale, UniformFrequencies) {
  const AugmentSpec s;
  Rng rng(5);
  std::map<double, int> freq;
  const int n = 30000;
  for (int i = 0; i < n; ++i)
    ++freq[sample_scale(s, rng)];
  ASSERT_EQ(freq.size(), 3u);
  for (auto [scale, count] : freq)
    EXPECT_NEAR(static_cast<double>(count) / n, 1.0 / 3.0, 0.02) << scale;
}

TEST(SampleScale, DeterministicAndErrors) {
  const AugmentSpec s;
  Rng a(6), b(6);
  for (int i = 0; i < 200; ++i)
    EXPECT_EQ(sample_scale(s, a), sample_scale(s, b));
  AugmentSpec empty;
  empty.train_scales.clear();
  EXPECT_THROW(sample_scale(empty, a), ConfigError);
  AugmentSpec bad;
  bad.rot_min_deg = 20;
  EXPECT_THROW(bad.validate(), ConfigError);
}
