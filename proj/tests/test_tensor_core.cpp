#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "common.hpp"
#include "msan/kernels.hpp"
#include "msan/reference.hpp"

using namespace msan;
using testing_util::randn;
using testing_util::T64;

namespace {

T64 conv(const T64 &x, const T64 &k, int rate, int stride, int pad, std::vector<double> bias = {}) {
  return conv2d_atrous(x, ConvSpec<double>{k, std::move(bias), {rate, stride, pad}});
}

} // namespace

TEST(Tensor, ShapeInvariants) {
  T64 t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_THROW(T64(Shape{0, 1, 1, 1}), ShapeError);
  EXPECT_THROW(T64(Shape{1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
  // width is the fastest axis
  t(1, 2, 3, 4) = 7;
  EXPECT_EQ(t[((1 * 3 + 2) * 4 + 3) * 5 + 4], 7);
}

TEST(Conv, IdentityKernel) {
  const T64 x = randn({2, 1, 5, 6}, 1);
  const T64 k(Shape{1, 1, 1, 1}, 1.0);
  EXPECT_EQ(conv(x, k, 1, 1, 0), x);
}

TEST(Conv, LeftTapShiftsRightByRate) {
  const T64 x = randn({1, 1, 7, 9}, 2);
  T64 k(Shape{1, 1, 3, 3});
  k(0, 0, 1, 0) = 1.0; // offset (0, -1)
  const T64 y = conv(x, k, 2, 1, 2);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j)
      EXPECT_EQ(y(0, 0, i, j), j >= 2 ? x(0, 0, i, j - 2) : 0.0);
}

TEST(Conv, MatchesDirectSumOracle) {
  const T64 x = randn({1, 2, 7, 7}, 3), k = randn({3, 2, 3, 3}, 4);
  const std::vector<double> b{0.1, -0.2, 0.3};
  EXPECT_LE(max_abs_diff(conv(x, k, 2, 1, 2, b), ref::conv2d(x, k, b, 2, 1, 2)), 1e-12);
}

TEST(Conv, RateOneEqualsStandardConvolutionOn100Shapes) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t kh = 2 * rng.integer(0, 2) + 1, kw = 2 * rng.integer(0, 1) + 1;
    const Shape s{static_cast<std::size_t>(rng.integer(1, 2)), static_cast<std::size_t>(rng.integer(1, 3)),
                  kh + static_cast<std::size_t>(rng.integer(0, 6)), kw + static_cast<std::size_t>(rng.integer(0, 6))};
    const T64 x = T64::random_normal(s, rng);
    const T64 k = T64::random_normal({static_cast<std::size_t>(rng.integer(1, 3)), s.c, kh, kw}, rng);
    const int stride = static_cast<int>(rng.integer(1, 2)), pad = static_cast<int>(rng.integer(0, 2));
    EXPECT_LE(max_abs_diff(conv(x, k, 1, stride, pad), ref::conv2d(x, k, {}, 1, stride, pad)), 1e-12);
  }
}

TEST(Conv, Linearity) {
  const T64 x1 = randn({2, 3, 8, 8}, 6), x2 = randn({2, 3, 8, 8}, 7), k = randn({2, 3, 3, 3}, 8);
  const double a = 0.7, b = -1.3;
  T64 mix = x1;
  mix *= a;
  T64 bx2 = x2;
  bx2 *= b;
  mix += bx2;
  T64 lhs = conv(mix, k, 3, 1, 3);
  T64 r1 = conv(x1, k, 3, 1, 3), r2 = conv(x2, k, 3, 1, 3);
  r1 *= a;
  r2 *= b;
  r1 += r2;
  EXPECT_LE(max_abs_diff(lhs, r1), 1e-10);
}

TEST(Conv, DeltaKernelTranslatesByRateTimesOffset) {
  const T64 x = randn({1, 1, 30, 30}, 9);
  for (int r : {1, 2, 3, 6, 12}) {
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T64 k(Shape{1, 1, 3, 3});
        k(0, 0, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx)) = 1.0;
        const T64 y = conv(x, k, r, 1, r);
        const int dy = (ky - 1) * r, dx = (kx - 1) * r;
        for (int i = 0; i < 30; ++i)
          for (int j = 0; j < 30; ++j) {
            const int si = i + dy, sj = j + dx;
            const double want = (si < 0 || sj < 0 || si >= 30 || sj >= 30)
                                    ? 0.0
                                    : x(0, 0, static_cast<std::size_t>(si), static_cast<std::size_t>(sj));
            ASSERT_EQ(y(0, 0, static_cast<std::size_t>(i), static_cast<std::size_t>(j)), want)
                << "rate " << r << " tap " << ky << "," << kx;
          }
      }
  }
}

TEST(Conv, Errors) {
  const T64 x = randn({1, 2, 5, 5}, 10);
  EXPECT_THROW(conv(x, randn({1, 3, 3, 3}, 11), 1, 1, 1), ShapeError); // channel mismatch
  EXPECT_THROW(conv(x, randn({1, 2, 3, 3}, 12), 4, 1, 0), ShapeError); // extent 9 > 5
  T64 bad = x;
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(conv(bad, randn({1, 2, 1, 1}, 13), 1, 1, 0), NumericalError);
  EXPECT_THROW(conv(x, randn({1, 2, 3, 3}, 14), 0, 1, 1), ShapeError);
}

TEST(Resize, IdentityAndConstants) {
  const T64 x = randn({1, 2, 4, 4}, 20);
  EXPECT_EQ(bilinear_resize(x, 4, 4, true), x);
  EXPECT_LE(max_abs_diff(bilinear_resize(x, 4, 4, false), x), 0.0);
  const T64 c(Shape{1, 1, 5, 3}, 2.5);
  for (bool ac : {true, false})
    for (auto [h, w] : {std::pair{1, 1}, {7, 2}, {13, 11}}) {
      const T64 y = bilinear_resize(c, static_cast<std::size_t>(h), static_cast<std::size_t>(w), ac);
      for (double v : y.span())
        EXPECT_NEAR(v, 2.5, 1e-15);
    }
}

TEST(Resize, TwoByTwoToThreeByThree) {
  const T64 x(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  const T64 y = bilinear_resize(x, 3, 3, true);
  EXPECT_DOUBLE_EQ(y(0, 0, 1, 1), 1.5);
  EXPECT_LE(max_abs_diff(y, ref::bilinear(x, 3, 3, true)), 1e-15);
  for (bool ac : {true, false})
    EXPECT_LE(max_abs_diff(bilinear_resize(randn({2, 2, 5, 7}, 21), 9, 4, ac),
                           ref::bilinear(randn({2, 2, 5, 7}, 21), 9, 4, ac)),
              1e-14);
}

TEST(Resize, RampSurvivesUpThenDown) {
  T64 x(Shape{1, 1, 6, 9});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 9; ++j)
      x(0, 0, i, j) = 0.5 * static_cast<double>(i) - 1.25 * static_cast<double>(j) + 3.0;
  const T64 up = bilinear_resize(x, 11, 17, true);
  EXPECT_LE(max_abs_diff(bilinear_resize(up, 6, 9, true), x), 1e-10);
}

TEST(Resize, Errors) {
  EXPECT_THROW(bilinear_resize(randn({1, 1, 2, 2}, 1), 0, 3, true), ShapeError);
}

TEST(BatchNorm, EvalWithIdentityStatistics) {
  const T64 x = randn({2, 3, 4, 4}, 30);
  std::vector<double> g(3, 1.0), b(3, 0.0), rm(3, 0.0), rv(3, 1.0);
  const double eps = 1e-5;
  const T64 y = batchnorm2d<double>(x, g, b, rm, rv, Mode::eval, 0.1, eps, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + eps), 1e-15);
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  const T64 x(Shape{2, 2, 3, 3}, 4.0);
  std::vector<double> g{1.5, 0.5}, b{0.25, -2.0}, rm(2, 0.0), rv(2, 1.0);
  const T64 y = batchnorm2d<double>(x, g, b, rm, rv, Mode::train, 0.1, 1e-5, nullptr);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 9; ++i)
        EXPECT_EQ(y.plane(n, c)[i], b[c]);
}

TEST(BatchNorm, WorkedExample) {
  const T64 x(Shape{1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  std::vector<double> g{1}, b{0}, rm{0}, rv{1};
  const T64 y = batchnorm2d<double>(x, g, b, rm, rv, Mode::train, 0.1, 1e-5, nullptr);
  // mean 2.5, biased variance 1.25
  const double s = std::sqrt(1.25 + 1e-5);
  const double want[4] = {-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s};
  for (int i = 0; i < 4; ++i)
    EXPECT_NEAR(y[static_cast<std::size_t>(i)], want[i], 1e-12);
  EXPECT_NEAR(y[0], -1.3416, 1e-4);
  EXPECT_NEAR(y[1], -0.4472, 1e-4);
  EXPECT_LE(max_abs_diff(y, ref::batchnorm_train(x, g, b, 1e-5)), 1e-14);
  // running stats moved towards the batch statistics
  EXPECT_NEAR(rm[0], 0.25, 1e-15);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-15);
}

TEST(BatchNorm, Errors) {
  const T64 x = randn({1, 2, 2, 2}, 31);
  std::vector<double> g(2, 1.0), b(2, 0.0), rm(2, 0.0), rv(2, 1.0), g3(3, 1.0);
  EXPECT_THROW(batchnorm2d<double>(x, g, b, rm, rv, Mode::train, 0.1, 0.0, nullptr), ValueError);
  EXPECT_THROW(batchnorm2d<double>(x, g3, b, rm, rv, Mode::train, 0.1, 1e-5, nullptr), ShapeError);
}

TEST(Activations, ReluSoftmaxPoolConcat) {
  const T64 r = relu(T64(Shape{1, 1, 1, 2}, std::vector<double>{-1, 2}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);

  const T64 p = softmax_channels(T64(Shape{1, 2, 3, 3}));
  for (double v : p.span())
    EXPECT_EQ(v, 0.5);

  Rng rng(40);
  const T64 logits = T64::random_normal({3, 4, 5, 5}, rng, 50.0);
  const T64 sm = softmax_channels(logits);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 25; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c)
        s += sm.plane(n, c)[i];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }

  EXPECT_EQ(global_avg_pool(T64(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}))[0], 2.5);

  const T64 a = randn({2, 1, 3, 3}, 41), b = randn({2, 2, 3, 3}, 42);
  const T64 cat = concat_channels<double>(std::vector<T64>{a, b});
  EXPECT_EQ(cat.shape(), (Shape{2, 3, 3, 3}));
  EXPECT_EQ(cat(1, 0, 2, 1), a(1, 0, 2, 1));
  EXPECT_EQ(cat(1, 2, 0, 2), b(1, 1, 0, 2));
  EXPECT_THROW(concat_channels<double>(std::vector<T64>{a, randn({2, 1, 3, 4}, 43)}), ShapeError);
  EXPECT_THROW(concat_channels<double>(std::vector<T64>{a, randn({1, 1, 3, 3}, 44)}), ShapeError);
}

TEST(Padding, ReflectAndCrop) {
  const T64 x(Shape{1, 1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const T64 z = pad_bottom_right(x, 4, 5, PadPolicy::zero);
  EXPECT_EQ(z(0, 0, 3, 4), 0.0);
  const T64 r = pad_bottom_right(x, 3, 5, PadPolicy::reflect);
  EXPECT_EQ(r(0, 0, 0, 3), 2.0); // mirrors column 1
  EXPECT_EQ(r(0, 0, 2, 0), 1.0); // mirrors row 0
  EXPECT_EQ(crop_top_left(r, 2, 3), x);
}
