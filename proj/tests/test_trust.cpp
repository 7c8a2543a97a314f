#include "mtr/rng.hpp"
#include "mtr/trust.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace mtr {
namespace {

TEST(Calibration, ConstantSamples) {
  const std::vector<double> xs(12, 2.0);
  EXPECT_EQ(calibrate_baseline(xs), 2.0);
}

TEST(Calibration, MedianIgnoresOutlier) {
  // Each value doubled: same median as {1, 2, 3, 4, 100} while meeting the sample floor.
  const std::vector<double> xs = {1, 2, 3, 4, 100, 100, 4, 3, 2, 1};
  EXPECT_EQ(calibrate_baseline(xs), 3.0);
  const std::vector<double> five = {1, 2, 3, 4, 100};
  EXPECT_THROW(calibrate_baseline(five), std::invalid_argument);
}

TEST(Calibration, OddCountMedian) {
  const std::vector<double> xs = {9, 1, 8, 2, 7, 3, 6, 4, 5, 0, 10};
  EXPECT_EQ(calibrate_baseline(xs), 5.0);
}

TEST(Calibration, ZeroSamplesFloorAtEpsilon) {
  const std::vector<double> xs(20, 0.0);
  EXPECT_EQ(calibrate_baseline(xs, 1e-9), 1e-9);
}

TEST(Calibration, RejectsNonFinite) {
  std::vector<double> xs(20, 1.0);
  xs[3] = std::nan("");
  EXPECT_THROW(calibrate_baseline(xs), std::invalid_argument);
}

TrustState unit_state(double beta = 0.01, double lambda = 2.0) {
  TrustParams p;
  p.beta = beta;
  p.lambda = lambda;
  return TrustState::from(p, 1.0);
}

TEST(UpdateTrust, AtBaselineTargetIsOne) {
  auto s = unit_state();
  s.tau = 0.5;
  const auto next = update_trust(s, 1.0);
  EXPECT_NEAR(next.tau, 0.99 * 0.5 + 0.01, 1e-12);
  EXPECT_GT(next.tau, s.tau);
}

TEST(UpdateTrust, ThreeTimesBaseline) {
  const auto next = update_trust(unit_state(), 3.0);
  // z = 3 (epsilon negligible), target = exp(-4).
  EXPECT_NEAR(next.tau, 0.99 + 0.01 * std::exp(-4.0), 1e-12);
  EXPECT_NEAR(next.tau, 0.9902, 5e-5);
}

TEST(UpdateTrust, AbsentLeavesTau) {
  auto s = unit_state();
  s.tau = 0.42;
  EXPECT_EQ(update_trust(s, std::nullopt).tau, 0.42);
}

TEST(UpdateTrust, NegativeRejected) { EXPECT_THROW(update_trust(unit_state(), -1.0), std::invalid_argument); }

TEST(UpdateTrust, FloorHolds) {
  auto s = unit_state(0.05, 10.0);
  for (int i = 0; i < 2000; ++i) s = update_trust(s, 1e6);
  EXPECT_EQ(s.tau, s.tau_min);
}

TEST(UpdateTrust, BoundsStepSizeAndMonotoneResponse) {
  RngStream rng(17, 0);
  for (int trial = 0; trial < 50; ++trial) {
    auto lo = unit_state(0.03, 3.0);
    auto hi = lo;
    for (int t = 0; t < 500; ++t) {
      const double s = 3.0 * rng.uniform();
      const double s_larger = s + 2.0 * rng.uniform();
      const auto next = update_trust(lo, s);
      ASSERT_LE(std::abs(next.tau - lo.tau), lo.beta + 1e-15);
      ASSERT_GE(next.tau, lo.tau_min);
      ASSERT_LE(next.tau, 1.0);
      lo = next;
      hi = update_trust(hi, s_larger);
      ASSERT_LE(hi.tau, lo.tau);
    }
  }
}

TEST(EffectiveGain, Examples) {
  auto s = unit_state();
  EXPECT_DOUBLE_EQ(effective_gain(s, 0.1), 0.1);
  s.tau = 0.5;
  EXPECT_DOUBLE_EQ(effective_gain(s, 0.1), 0.05);
  s.tau = s.tau_min;
  EXPECT_DOUBLE_EQ(effective_gain(s, 0.1), 0.005);
  EXPECT_THROW(effective_gain(s, 0.0), std::invalid_argument);
}

TEST(Params, Validation) {
  TrustParams p;
  EXPECT_NO_THROW(p.validate());
  p.beta = 0.06;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.tau_min = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.calibration_samples = 5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Estimator, CalibratesThenTracks) {
  TrustParams p;
  p.calibration_samples = 10;
  p.calibration_start = 5;
  TrustEstimator est(p);
  // Warm-up and pre-start samples are ignored.
  est.observe(0, std::nullopt);
  for (int t = 1; t < 5; ++t) est.observe(t, 100.0);
  EXPECT_FALSE(est.calibrated());
  for (int t = 5; t < 15; ++t) est.observe(t, 2.0);
  EXPECT_TRUE(est.calibrated());
  EXPECT_EQ(est.state().s_ref, 2.0);
  EXPECT_EQ(est.tau(), 1.0);
  est.observe(15, 6.0);
  EXPECT_NEAR(est.tau(), 0.99 + 0.01 * std::exp(-4.0), 1e-6);
}

TEST(Estimator, ReferenceInstabilitySkipsCalibration) {
  TrustParams p;
  p.reference_instability = 0.5;
  TrustEstimator est(p);
  EXPECT_TRUE(est.calibrated());
  est.observe(0, 1.5);
  EXPECT_NEAR(est.tau(), 0.99 + 0.01 * std::exp(-4.0), 1e-9);
}

}  // namespace
}  // namespace mtr
