#include "mtr/core.hpp"
#include "mtr/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace mtr {
namespace {

RegimeSchedule three_by_hundred() { return RegimeSchedule::staged(100, 100, 100); }

TEST(Schedule, PhaseOfStagedSegments) {
  const auto s = three_by_hundred();
  EXPECT_EQ(phase_of(50, s), (Regime{0, Phase::Clean}));
  EXPECT_EQ(phase_of(150, s), (Regime{1, Phase::Corrupt}));
  EXPECT_EQ(phase_of(299, s), (Regime{0, Phase::Recovery}));
  EXPECT_THROW(phase_of(300, s), std::out_of_range);
  EXPECT_THROW(phase_of(-1, s), std::out_of_range);
}

TEST(Schedule, SegmentBoundaries) {
  const auto s = three_by_hundred();
  EXPECT_EQ(phase_of(99, s).phase, Phase::Clean);
  EXPECT_EQ(phase_of(100, s).phase, Phase::Corrupt);
  EXPECT_EQ(s.steps_into_segment(100), 0);
  EXPECT_EQ(s.steps_into_segment(199), 99);
  EXPECT_EQ(s.total_steps(), 300);
}

TEST(Schedule, RejectsGapsAndShortSegments) {
  EXPECT_THROW(RegimeSchedule({{0, 10, 0, Phase::Clean}, {11, 10, 1, Phase::Corrupt}}), std::invalid_argument);
  EXPECT_THROW(RegimeSchedule::staged(100, 50, 100, 80), std::invalid_argument);
  EXPECT_THROW(RegimeSchedule(std::vector<Segment>{}), std::invalid_argument);
  EXPECT_THROW(RegimeSchedule({{0, 10, 2, Phase::Clean}}), std::invalid_argument);
}

TEST(Schedule, AlternatingLabels) {
  const auto s = RegimeSchedule::alternating(500, 4);
  EXPECT_EQ(s.total_steps(), 2000);
  EXPECT_EQ(phase_of(499, s).rho, 0);
  EXPECT_EQ(phase_of(500, s).rho, 1);
  EXPECT_EQ(phase_of(1500, s).phase, Phase::Corrupt);
}

TEST(Schedule, PhaseNamesRoundTrip) {
  for (auto p : {Phase::Clean, Phase::Corrupt, Phase::Recovery}) EXPECT_EQ(phase_from_string(to_string(p)), p);
  EXPECT_THROW(phase_from_string("clean"), std::invalid_argument);
}

TEST(TrajectoryBufferTest, PushIntoEmpty) {
  TrajectoryBuffer b(3);
  push_step(b, 1.0, 0.0, 0.0);
  EXPECT_EQ(b.size(), 1u);
}

TEST(TrajectoryBufferTest, FifoEviction) {
  TrajectoryBuffer b(3);
  for (double x : {1.0, 2.0, 3.0, 4.0}) b.push(x, 0.0, 0.0);
  EXPECT_EQ(b.increments(), (std::vector<double>{2.0, 3.0, 4.0}));
  EXPECT_TRUE(b.full());
}

TEST(TrajectoryBufferTest, RejectsNegativeIncrement) {
  TrajectoryBuffer b(3);
  EXPECT_THROW(b.push(-0.1, 0.0, 0.0), std::invalid_argument);
  EXPECT_TRUE(b.empty());
  EXPECT_THROW(TrajectoryBuffer(0), std::invalid_argument);
}

std::vector<std::uint64_t> draws(std::uint64_t seed, std::uint64_t stream, int n = 100) {
  RngStream r(seed, stream);
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(r());
  return out;
}

TEST(Rng, SameKeySameSequence) { EXPECT_EQ(draws(42, 0), draws(42, 0)); }
TEST(Rng, StreamsDiffer) { EXPECT_NE(draws(42, 0), draws(42, 1)); }
TEST(Rng, SeedsDiffer) { EXPECT_NE(draws(42, 0), draws(43, 0)); }

TEST(Rng, UniformMoments) {
  RngStream r(7, 3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  // mean 1/2, variance 1/12; 5 standard errors.
  EXPECT_NEAR(sum / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 2e-3);
}

TEST(Rng, NormalMoments) {
  RngStream r(11, 1);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, UniformIntCoversRange) {
  RngStream r(5, 0);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.uniform_int(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  EXPECT_EQ(r.uniform_int(1), 0u);
}

TEST(Stats, QuantileType7) {
  EXPECT_DOUBLE_EQ(detail::quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(detail::quantile({5}, 0.9), 5.0);
  EXPECT_DOUBLE_EQ(detail::stddev({1, 3}), std::sqrt(2.0));
}

}  // namespace
}  // namespace mtr
