#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <gtest/gtest.h>

#include "msan/phantom.hpp"
#include "msan/selftest.hpp"
#include "msan/train.hpp"

using namespace msan;

namespace {

std::vector<TrainingCase> phantom_cases(std::uint64_t first, std::uint64_t last) {
  std::vector<TrainingCase> out;
  const PhantomConfig pc;
  for (std::uint64_t s = first; s <= last; ++s) {
    const Phantom ph = generate_phantom(pc, s);
    out.push_back({std::to_string(s), hu_window_normalize(ph.volume, WindowSpec{}), ph.mask});
  }
  return out;
}

double window_mean(const std::vector<TrainLogRow> &log, std::size_t from, std::size_t n) {
  double s = 0;
  for (std::size_t k = from; k < from + n; ++k)
    s += log.at(k).loss;
  return s / static_cast<double>(n);
}

} // namespace

TEST(Train, LossHalvesOnDefaultPhantomSet) {
  const auto cases = phantom_cases(0, 44);
  TrainConfig tc;
  tc.max_iter = 500;
  MsanModel<float> model(desk_model(), init_seed(tc, Axis::axial));
  const auto log = train_model(model, cases, Axis::axial, tc, AugmentSpec{});
  ASSERT_EQ(log.size(), 500u);
  const double first = window_mean(log, 0, 50), last = window_mean(log, 450, 50);
  std::printf("loss window means: first %.6f last %.6f ratio %.4f\n", first, last, last / first);
  EXPECT_LE(last, 0.5 * first);
  // regression value from the first run
  EXPECT_NEAR(last / first, 0.2294, 0.02);
  for (const auto &r : log) {
    ASSERT_TRUE(std::isfinite(r.loss));
    ASSERT_GE(r.loss, 0.0);
  }
}

TEST(Train, LrColumnFollowsPolySchedule) {
  const auto cases = phantom_cases(0, 1);
  TrainConfig tc;
  tc.max_iter = 6;
  tc.batch_size = 1;
  MsanModel<float> model(selftest::tiny_msan_config(), 1);
  const auto log = train_model(model, cases, Axis::coronal, tc, AugmentSpec{});
  ASSERT_EQ(log.size(), 6u);
  for (std::size_t k = 0; k < log.size(); ++k) {
    EXPECT_EQ(log[k].iter, static_cast<std::int64_t>(k));
    const double expect = 0.05 * std::pow(1.0 - static_cast<double>(k) / 6.0, 0.9);
    EXPECT_NEAR(log[k].lr, expect, 1e-15);
  }
  const std::string csv = train_log_csv(log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,loss,lr");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Train, ZeroIterationsLeavesInitialWeights) {
  const auto cases = phantom_cases(0, 0);
  TrainConfig tc;
  tc.max_iter = 0;
  MsanModel<float> model(selftest::tiny_msan_config(), 5);
  const MsanModel<float> fresh(selftest::tiny_msan_config(), 5);
  EXPECT_TRUE(train_model(model, cases, Axis::axial, tc, AugmentSpec{}).empty());
  const auto &a = model.params().entries(), &b = fresh.params().entries();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    EXPECT_EQ(a[k].value, b[k].value) << a[k].name;
}

TEST(Train, RepeatableRun) {
  const auto cases = phantom_cases(3, 4);
  TrainConfig tc;
  tc.max_iter = 4;
  tc.batch_size = 2;
  auto run = [&] {
    MsanModel<float> m(selftest::tiny_msan_config(), init_seed(tc, Axis::sagittal));
    return train_log_csv(train_model(m, cases, Axis::sagittal, tc, AugmentSpec{}));
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, SeedStreamsAreDistinct) {
  TrainConfig tc;
  std::set<std::uint64_t> seen;
  for (Axis a : kAllAxes) {
    seen.insert(init_seed(tc, a));
    seen.insert(sampling_seed(tc, a));
  }
  EXPECT_EQ(seen.size(), 6u);
  tc.seed = 1;
  EXPECT_NE(init_seed(tc, Axis::axial), init_seed(TrainConfig{}, Axis::axial));
}

TEST(Train, SamplerPrefersForegroundSlices) {
  const auto cases = phantom_cases(0, 2);
  const SliceSampler s(cases, Axis::axial);
  EXPECT_EQ(s.size(), 3u * 64);
  ASSERT_GT(s.foreground_count(), 0u);
  ASSERT_LT(s.foreground_count(), s.size());
  Rng rng(4);
  std::size_t fg = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const SliceRef r = s.sample(rng, 0.7);
    const auto &c = cases[r.case_index];
    bool any = false;
    for (std::size_t h = 0; h < 64 && !any; ++h)
      for (std::size_t w = 0; w < 64 && !any; ++w)
        any = c.mask(w, h, r.slice) != 0;
    fg += any;
  }
  // P(fg) = 0.7 + 0.3 * (share of foreground slices)
  const double share = static_cast<double>(s.foreground_count()) / s.size();
  EXPECT_NEAR(static_cast<double>(fg) / n, 0.7 + 0.3 * share, 0.015);
}

TEST(Train, BatchShapesAndPadding) {
  const auto cases = phantom_cases(0, 0);
  const SliceSampler s(cases, Axis::coronal);
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const auto b = make_batch<float>(cases, s, Axis::coronal, 3, 8, AugmentSpec{}, 0.7, rng);
    const std::size_t ext = scaled_extent(64, b.scale);
    EXPECT_EQ(b.images.shape(), (Shape{3, 1, round_up(ext, 8), round_up(ext, 8)}));
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t r = 0; r < b.images.h(); ++r)
        for (std::size_t c = 0; c < b.images.w(); ++c) {
          const float y = b.targets(k, 0, r, c);
          ASSERT_TRUE(y == 0.0f || y == 1.0f);
          if (r >= ext || c >= ext) {
            ASSERT_EQ(b.images(k, 0, r, c), 0.0f);
            ASSERT_EQ(y, 0.0f);
          }
        }
  }
}

TEST(Train, Errors) {
  EXPECT_THROW(SliceSampler({}, Axis::axial), DataError);
  auto cases = phantom_cases(0, 1);
  cases[1].mask = Mask(Dims{64, 64, 32});
  EXPECT_THROW(SliceSampler(cases, Axis::axial), DataError);
  TrainConfig tc;
  tc.batch_size = 0;
  MsanModel<float> m(selftest::tiny_msan_config(), 1);
  EXPECT_THROW(train_model(m, phantom_cases(0, 0), Axis::axial, tc, AugmentSpec{}), ConfigError);
}
