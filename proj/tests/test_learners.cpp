#include "mtr/harness.hpp"
#include "mtr/learners.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace mtr {
namespace {

LearnerConfig config_of(LearnerKind kind, double eta) {
  LearnerConfig c;
  c.kind = kind;
  c.eta = eta;
  return c;
}

Vector scalar(double x) { return Vector::Constant(1, x); }

TEST(BaselineStep, Formula) {
  auto s = LearnerState::make(scalar(1.0), config_of(LearnerKind::BaselineGD, 0.1));
  baseline_step(s, scalar(1.0), 0.1);
  EXPECT_DOUBLE_EQ(s.theta[0], 0.9);
  ASSERT_EQ(s.buffer.size(), 1u);
  EXPECT_NEAR(s.buffer.increments().front(), 0.01, 1e-15);
}

TEST(BaselineStep, ZeroGradientIsFixedPoint) {
  auto s = LearnerState::make(scalar(1.0), config_of(LearnerKind::BaselineGD, 0.1));
  baseline_step(s, scalar(0.0), 0.1);
  EXPECT_EQ(s.theta[0], 1.0);
  EXPECT_EQ(s.buffer.increments().front(), 0.0);
}

TEST(BaselineStep, NonFiniteGradient) {
  auto s = LearnerState::make(scalar(1.0), config_of(LearnerKind::BaselineGD, 0.1));
  EXPECT_THROW(baseline_step(s, scalar(std::nan("")), 0.1), NonFiniteError);
  EXPECT_THROW(baseline_step(s, Vector::Zero(2), 0.1), std::invalid_argument);
}

TEST(BaselineStep, BiasedQuadraticFixedPoint) {
  QuadraticEnv env;  // theta* = 0, b = 0.5, sigma = 0
  RunSpec spec{env, {}, scalar(0.0)};
  const auto out = run_learner_full(spec, config_of(LearnerKind::BaselineGD, 0.1), RegimeSchedule::constant(1000, 1), 0);
  EXPECT_NEAR(out.final_theta[0], -0.5, 1e-6);
}

TEST(MomentumStep, ZeroMomentumMatchesBaseline) {
  auto a = LearnerState::make(scalar(1.0), config_of(LearnerKind::BaselineGD, 0.1));
  auto b = a;
  for (int i = 0; i < 5; ++i) {
    baseline_step(a, a.theta, 0.1);
    momentum_step(b, b.theta, 0.1, 0.0);
  }
  EXPECT_EQ(a.theta, b.theta);
}

TEST(MomentumStep, Accumulates) {
  auto s = LearnerState::make(scalar(0.0), config_of(LearnerKind::MomentumGD, 0.1));
  momentum_step(s, scalar(1.0), 0.1, 0.9);
  momentum_step(s, scalar(1.0), 0.1, 0.9);
  // v1 = 1, v2 = 1.9
  EXPECT_NEAR(s.theta[0], -0.1 - 0.19, 1e-15);
}

LearnerConfig trust_config(double tau0) {
  auto c = config_of(LearnerKind::TrustGD, 0.1);
  c.trust.tau_initial = tau0;
  c.trust.reference_instability = 1.0;
  return c;
}

TEST(TrustStep, FullTrustMatchesBaseline) {
  auto t = LearnerState::make(scalar(1.0), trust_config(1.0));
  auto b = LearnerState::make(scalar(1.0), config_of(LearnerKind::BaselineGD, 0.1));
  trust_step(t, scalar(1.0), 0.1);
  baseline_step(b, scalar(1.0), 0.1);
  EXPECT_EQ(t.theta, b.theta);
}

TEST(TrustStep, HalfTrust) {
  auto t = LearnerState::make(scalar(1.0), trust_config(0.5));
  trust_step(t, scalar(1.0), 0.1);
  EXPECT_DOUBLE_EQ(t.theta[0], 0.95);
}

TEST(TrustStep, RequiresTrustState) {
  auto s = LearnerState::make(scalar(1.0), config_of(LearnerKind::BaselineGD, 0.1));
  EXPECT_THROW(trust_step(s, scalar(1.0), 0.1), std::invalid_argument);
}

TEST(BanditValueStep, Examples) {
  Vector q = Vector::Zero(4);
  bandit_value_step(q, 2, 0, 1, 1.0, 1.0);
  EXPECT_EQ(q[1], 1.0);
  Vector r = Vector::Zero(4);
  bandit_value_step(r, 2, 1, 0, 1.0, 0.5);
  EXPECT_EQ(r[2], 0.5);
  Vector u = Vector::Constant(4, 0.3);
  bandit_value_step(u, 2, 1, 1, 0.3, 0.7);
  EXPECT_EQ(u, Vector::Constant(4, 0.3));
}

TEST(BanditValueStep, Errors) {
  Vector q = Vector::Zero(4);
  EXPECT_THROW(bandit_value_step(q, 2, 2, 0, 1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(bandit_value_step(q, 2, 0, 2, 1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(bandit_value_step(q, 2, 0, 0, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(bandit_value_step(q, 2, 0, 0, 1.0, 1.5), std::invalid_argument);
}

Trajectory single_step(int s, int a, double adv) {
  Trajectory t;
  t.states = {s};
  t.actions = {a};
  t.rewards = {adv};
  t.advantages = {adv};
  return t;
}

TEST(PolicyGradient, ZeroAdvantagesLeaveLogits) {
  Vector logits = (Vector(4) << 0.1, -0.3, 0.7, 0.2).finished();
  const Vector before = logits;
  const std::vector<Trajectory> batch = {single_step(0, 1, 0.0), single_step(1, 0, 0.0)};
  policy_gradient_step(logits, batch, 2, 1.0);
  EXPECT_EQ(logits, before);
}

TEST(PolicyGradient, GradientSigns) {
  Vector logits = Vector::Zero(6);  // 2 states x 3 actions
  const Vector before = logits;
  const std::vector<Trajectory> batch = {single_step(1, 2, 1.0)};
  policy_gradient_step(logits, batch, 3, 1.0);
  EXPECT_GT(logits[5], before[5]);
  EXPECT_LT(logits[3], before[3]);
  EXPECT_LT(logits[4], before[4]);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(logits[i], 0.0);
}

TEST(PolicyGradient, NonFiniteAdvantage) {
  Vector logits = Vector::Zero(4);
  const std::vector<Trajectory> batch = {single_step(0, 0, std::numeric_limits<double>::infinity())};
  EXPECT_THROW(policy_gradient_step(logits, batch, 2, 1.0), NonFiniteError);
  EXPECT_THROW(policy_gradient_step(logits, std::vector<Trajectory>{}, 2, 1.0), std::invalid_argument);
}

double log_pi(const Vector& logits, int s, int a, int n_actions) {
  return std::log(softmax_row(logits, s, n_actions)[a]);
}

TEST(PolicyGradient, LogPolicyGradientMatchesFiniteDifferences) {
  // 2-state chain with 2 actions per state.
  RngStream rng(31, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector logits(4);
    for (auto& x : logits) x = 2.0 * rng.normal();
    for (int s = 0; s < 2; ++s) {
      for (int a = 0; a < 2; ++a) {
        const Vector g = log_policy_gradient(logits, s, a, 2);
        for (int i = 0; i < 4; ++i) {
          Vector up = logits, down = logits;
          up[i] += 1e-6;
          down[i] -= 1e-6;
          const double fd = (log_pi(up, s, a, 2) - log_pi(down, s, a, 2)) / 2e-6;
          EXPECT_NEAR(g[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}

QuadraticEnv noisy_plane() {
  QuadraticEnv env;
  env.theta_star = Vector::Zero(2);
  env.bias = (Vector(2) << 0.6, 0.8).finished();
  env.noise_sigma = 0.1;
  return env;
}

TEST(RunLearner, CleanConvexDescentIsMonotone) {
  QuadraticEnv env;
  RunSpec spec{env, {}, scalar(2.0)};
  const auto rec = run_learner(spec, config_of(LearnerKind::BaselineGD, 0.1), RegimeSchedule::constant(500, 0), 0);
  for (std::size_t t = 1; t < rec.size(); ++t) ASSERT_LE(rec.theta_error[t], rec.theta_error[t - 1]);
  EXPECT_LT(rec.theta_error.back(), 1e-12);
}

TEST(RunLearner, CorruptPlateauAndRecovery) {
  QuadraticEnv env;
  RunSpec spec{env, {}, {}};
  const auto schedule = RegimeSchedule::staged(500, 500, 500);
  const auto rec = run_learner(spec, config_of(LearnerKind::BaselineGD, 0.1), schedule, 0);
  ASSERT_EQ(rec.size(), 1500u);
  EXPECT_NEAR(rec.theta_error[999], 0.5, 1e-9);
  EXPECT_LT(rec.theta_error.back(), 1e-9);
  EXPECT_EQ(rec.phase[999], Phase::Corrupt);
  EXPECT_EQ(rec.rho[1000], 0);
}

TEST(RunLearner, TrustDropsUnderCorruption) {
  RunSpec spec{noisy_plane(), {CorruptionKind::FeatureNoise, 0.5, 0.5}, {}};
  const auto schedule = RegimeSchedule::staged(2000, 2000, 2000);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto rec = run_learner(spec, config_of(LearnerKind::TrustGD, 0.05), schedule, seed);
    const auto m = trust_phase_means(rec);
    ASSERT_TRUE(m);
    EXPECT_LT(m->corrupt, m->clean) << "seed " << seed;
  }
}

TEST(RunLearner, TrustLimitsCorruptExcursion) {
  // Offsets share a gain-independent fixed point, so compare excursion and final recovery error.
  RunSpec spec{noisy_plane(), {CorruptionKind::FeatureNoise, 0.5, 0.5}, {}};
  const auto schedule = RegimeSchedule::staged(2000, 2000, 2000);
  double base_exc = 0.0, trust_exc = 0.0, base_final = 0.0, trust_final = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto b = run_learner(spec, config_of(LearnerKind::BaselineGD, 0.05), schedule, seed);
    const auto t = run_learner(spec, config_of(LearnerKind::TrustGD, 0.05), schedule, seed);
    for (std::size_t i = 2000; i < 4000; ++i) {
      base_exc += b.theta_error[i];
      trust_exc += t.theta_error[i];
    }
    for (std::size_t i = 5500; i < 6000; ++i) {
      base_final += b.theta_error[i];
      trust_final += t.theta_error[i];
    }
  }
  EXPECT_LT(trust_exc, base_exc);
  EXPECT_LE(trust_final, base_final);
}

TEST(RunLearner, ZeroBetaTrustIsBaseline) {
  auto trust = config_of(LearnerKind::TrustGD, 0.05);
  trust.trust.beta = 0.0;
  RunSpec spec{noisy_plane(), {CorruptionKind::FeatureNoise, 0.5, 0.5}, {}};
  const auto schedule = RegimeSchedule::staged(300, 300, 300);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    EXPECT_EQ(run_learner(spec, trust, schedule, seed),
              run_learner(spec, config_of(LearnerKind::BaselineGD, 0.05), schedule, seed));
  }
}

TEST(RunLearner, DeterministicInSeed) {
  RunSpec spec{make_chain_task({}), {CorruptionKind::AdvantageSignFlip, 0.7, 0.0}, {}};
  auto cfg = config_of(LearnerKind::TrustPolicyGradient, 1.0);
  cfg.trust.calibration_start = 100;
  const auto schedule = RegimeSchedule::staged(300, 300, 300);
  EXPECT_EQ(run_learner(spec, cfg, schedule, 4), run_learner(spec, cfg, schedule, 4));
  EXPECT_NE(run_learner(spec, cfg, schedule, 4), run_learner(spec, cfg, schedule, 5));
}

TEST(RunLearner, DivergenceGuardKeepsPartialRecord) {
  QuadraticEnv env;
  RunSpec spec{env, {}, scalar(1.0)};
  try {
    run_learner(spec, config_of(LearnerKind::BaselineGD, 3.0), RegimeSchedule::constant(200, 0), 0);
    FAIL() << "expected divergence";
  } catch (const RunError& e) {
    EXPECT_TRUE(e.diverged());
    // |theta| doubles each step from 1; the guard trips once it passes 1e6.
    EXPECT_EQ(e.step(), 19);
    EXPECT_EQ(e.partial().size(), 19u);
    EXPECT_NE(std::string(e.what()).find("step 19"), std::string::npos);
  }
}

TEST(RunLearner, FamilyMismatchIsConfigError) {
  RunSpec spec{BanditEnv{}, {}, {}};
  EXPECT_THROW(run_learner(spec, config_of(LearnerKind::BaselineGD, 0.1), RegimeSchedule::constant(10, 0), 0),
               std::invalid_argument);
}

TEST(RunLearner, BanditTrustReactsToReversals) {
  BanditEnv env;
  RunSpec spec{env, {}, {}};
  auto cfg = config_of(LearnerKind::TrustBanditQ, 0.3);
  const auto schedule = RegimeSchedule::alternating(1000, 6);
  const auto rec = run_learner(spec, cfg, schedule, 2);
  const auto gains = block_gains(rec, cfg.eta);
  EXPECT_LT(gains.volatile_, gains.stable);
  for (double tau : rec.tau) ASSERT_LE(tau, 1.0);
}

TEST(Config, Validation) {
  auto c = config_of(LearnerKind::BanditQ, 1.5);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = config_of(LearnerKind::MomentumGD, 0.1);
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.momentum = 0.9;
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(config_of(LearnerKind::BaselineGD, 0.0).validate(), std::invalid_argument);
}

TEST(Kinds, NamesRoundTrip) {
  for (auto k : {LearnerKind::BaselineGD, LearnerKind::MomentumGD, LearnerKind::TrustGD, LearnerKind::BanditQ,
                 LearnerKind::TrustBanditQ, LearnerKind::PolicyGradient, LearnerKind::TrustPolicyGradient}) {
    EXPECT_EQ(learner_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(learner_kind_from_string("Adam"), std::invalid_argument);
}

}  // namespace
}  // namespace mtr
