#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "msan/rng.hpp"
#include "msan/tensor.hpp"

namespace testing_util {

using msan::Shape;
using T64 = msan::Tensor<double>;

inline T64 randn(Shape s, std::uint64_t seed, double sigma = 1.0) {
  msan::Rng rng(seed);
  return T64::random_normal(s, rng, sigma);
}

// Fresh scratch directory under the system temp dir, named after the test.
inline std::filesystem::path scratch_dir() {
  const auto *info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "msan_tests" /
             (std::string(info->test_suite_name()) + "." + info->name());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace testing_util
