#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "swlora/schedule.hpp"

using namespace swlora;

TEST(Schedule, ThetaGivesOneThirdAtRatio) {
  for (std::uint64_t total : {100u, 2000u, 50000u}) {
    for (double ratio : {0.05, 0.1, 0.5}) {
      const double theta = calibrate_theta(total, ratio);
      EXPECT_DOUBLE_EQ(theta, std::log(3.0) / (ratio * static_cast<double>(total)));
      const auto at = static_cast<std::uint64_t>(std::llround(ratio * static_cast<double>(total)));
      EXPECT_NEAR(expected_switches(at, 8, 40.0, theta) / expected_switches(0, 8, 40.0, theta), 1.0 / 3.0, 1e-12);
    }
  }
  EXPECT_THROW(calibrate_theta(0, 0.1), std::invalid_argument);
  EXPECT_THROW(calibrate_theta(10, 0.0), std::invalid_argument);
}

TEST(Schedule, ExpectedSwitchesClosedForm) {
  EXPECT_DOUBLE_EQ(expected_switches(0, 8, 40.0, 0.1), 0.2);
  EXPECT_DOUBLE_EQ(expected_switches(10, 8, 40.0, 0.1), 0.2 / std::exp(1.0));
  EXPECT_EQ(expected_switches(0, 8, std::numeric_limits<double>::infinity(), 0.1), 0.0);
  const SwitchSchedule s = SwitchSchedule::calibrated(40.0, 0.1, 1000, 8);
  EXPECT_DOUBLE_EQ(s.expected(100), expected_switches(100, 8, 40.0, s.theta));
}

TEST(Schedule, SwitchNumMeanAndSupport) {
  Rng rng(3);
  for (double s : {0.5, 1.0, 3.2, 12.8}) {
    const std::size_t r = 16;
    const double interval0 = static_cast<double>(r) / s;
    double sum = 0.0;
    const int draws = 100000;
    for (int k = 0; k < draws; ++k) {
      const std::size_t v = switch_num(rng, 0, r, interval0, 0.0);
      ASSERT_GE(static_cast<double>(v), std::floor(s));
      ASSERT_LE(static_cast<double>(v), std::floor(s) + 1);
      sum += static_cast<double>(v);
    }
    EXPECT_NEAR(sum / draws, s, 0.02 * s);
  }
}

TEST(Schedule, SwitchNumAlwaysConsumesOneDraw) {
  Rng rng(4);
  switch_num(rng, 0, 4, std::numeric_limits<double>::infinity(), 0.0);
  EXPECT_EQ(rng.state().position, 1u);
  switch_num(rng, 0, 4, 2.0, 0.0);  // s = 2 exactly
  EXPECT_EQ(rng.state().position, 2u);
}

TEST(Schedule, DrawIndicesDistinctAndUniform) {
  Rng rng(5);
  std::map<std::size_t, int> hits;
  for (int t = 0; t < 20000; ++t) {
    const auto idx = draw_indices(rng, 3, 8);
    ASSERT_EQ(idx.size(), 3u);
    ASSERT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 3u);
    for (auto i : idx) {
      ASSERT_LT(i, 8u);
      ++hits[i];
    }
  }
  for (const auto& [i, c] : hits) EXPECT_NEAR(c, 20000 * 3 / 8.0, 400);
  EXPECT_TRUE(draw_indices(rng, 0, 8).empty());
  EXPECT_EQ(draw_indices(rng, 8, 8).size(), 8u);
  EXPECT_THROW(draw_indices(rng, 9, 8), std::invalid_argument);
}
