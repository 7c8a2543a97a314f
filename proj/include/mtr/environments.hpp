#pragma once

#include "mtr/core.hpp"
#include "mtr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtr {

// ---------------------------------------------------------------------------
// Quadratic objective with a regime-gated persistent gradient bias.
// ---------------------------------------------------------------------------

struct QuadraticEnv {
  Vector theta_star = Vector::Zero(1);
  Vector bias = Vector::Constant(1, 0.5);
  double noise_sigma = 0.0;
  bool bias_always_on = false;

  void validate() const {
    if (theta_star.size() < 1) throw std::invalid_argument("quadratic: theta_star must be non-empty");
    if (bias.size() != theta_star.size()) {
      throw std::invalid_argument("quadratic: bias has dimension " + std::to_string(bias.size()) +
                                  ", theta_star has " + std::to_string(theta_star.size()));
    }
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("quadratic: noise_sigma must be >= 0");
  }

  bool bias_active(int rho) const { return bias_always_on || rho == 1; }
};

// (theta - theta*) + [bias active] * b + noise_sigma * N(0, I)
inline Vector quadratic_gradient(const Vector& theta, const QuadraticEnv& env, int rho, RngStream& rng) {
  if (theta.size() != env.theta_star.size()) {
    throw std::invalid_argument("quadratic_gradient: theta has dimension " + std::to_string(theta.size()) +
                                ", expected " + std::to_string(env.theta_star.size()));
  }
  Vector g = theta - env.theta_star;
  if (env.bias_active(rho)) g += env.bias;
  if (env.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] += env.noise_sigma * rng.normal();
  }
  return g;
}

// Loss whose gradient the learner actually observes (noise-free part).
inline double quadratic_observed_loss(const Vector& theta, const QuadraticEnv& env, int rho) {
  Vector r = theta - env.theta_star;
  if (env.bias_active(rho)) r += env.bias;
  return 0.5 * r.squaredNorm();
}

inline double quadratic_true_loss(const Vector& theta, const QuadraticEnv& env) {
  return 0.5 * (theta - env.theta_star).squaredNorm();
}

// ---------------------------------------------------------------------------
// Corruption operators.
// ---------------------------------------------------------------------------

enum class CorruptionKind { None, AdvantageSignFlip, FeatureNoise, LabelFlip };

inline std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::None: return "None";
    case CorruptionKind::AdvantageSignFlip: return "AdvantageSignFlip";
    case CorruptionKind::FeatureNoise: return "FeatureNoise";
    case CorruptionKind::LabelFlip: return "LabelFlip";
  }
  return "None";
}

inline CorruptionKind corruption_kind_from_string(std::string_view text) {
  if (text == "None") return CorruptionKind::None;
  if (text == "AdvantageSignFlip") return CorruptionKind::AdvantageSignFlip;
  if (text == "FeatureNoise") return CorruptionKind::FeatureNoise;
  if (text == "LabelFlip") return CorruptionKind::LabelFlip;
  throw std::invalid_argument("unknown corruption kind '" + std::string(text) + "'");
}

struct CorruptionConfig {
  CorruptionKind kind = CorruptionKind::None;
  double probability_p = 0.0;
  double feature_noise_scale = 0.0;

  void validate() const {
    if (!(probability_p >= 0.0 && probability_p <= 1.0)) {
      throw std::invalid_argument("corruption probability " + std::to_string(probability_p) +
                                  " outside [0, 1]");
    }
    if (!(feature_noise_scale >= 0.0)) throw std::invalid_argument("feature_noise_scale must be >= 0");
  }

  bool active() const { return kind != CorruptionKind::None && probability_p > 0.0; }

  bool operator==(const CorruptionConfig&) const = default;
};

// With probability p apply the configured transform to a gradient:
// sign/label flips negate it (the residual factor of a residual-times-feature
// gradient changes sign), feature noise adds scale * N(0, I).
inline Vector corrupt_gradient(const Vector& g, const CorruptionConfig& cfg, RngStream& rng) {
  if (!cfg.active()) return g;
  if (!rng.bernoulli(cfg.probability_p)) return g;
  switch (cfg.kind) {
    case CorruptionKind::AdvantageSignFlip:
    case CorruptionKind::LabelFlip:
      return -g;
    case CorruptionKind::FeatureNoise: {
      Vector out = g;
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += cfg.feature_noise_scale * rng.normal();
      return out;
    }
    case CorruptionKind::None:
      break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Regression / classification stream with a latent label shift or trigger.
// ---------------------------------------------------------------------------

enum class BiasMode { LabelShift, ClassTrigger };

inline std::string_view to_string(BiasMode mode) {
  return mode == BiasMode::LabelShift ? "LabelShift" : "ClassTrigger";
}

inline BiasMode bias_mode_from_string(std::string_view text) {
  if (text == "LabelShift") return BiasMode::LabelShift;
  if (text == "ClassTrigger") return BiasMode::ClassTrigger;
  throw std::invalid_argument("unknown bias mode '" + std::string(text) + "'");
}

// LabelShift: x ~ N(m 1, I), y = x'w + label_noise * eps + rho * drift.
// ClassTrigger: y ~ Bernoulli(1/2), x ~ N(m 1 + (y - 1/2) w, I); during rho = 1
// every sample of trigger_class is offset by drift * u for a fixed unit u.
struct RegressionEnv {
  int dim = 5;
  Vector true_weights;  // empty -> 1/sqrt(dim) in every coordinate
  double label_noise = 1.0;
  double drift_strength = 0.0;
  BiasMode bias_mode = BiasMode::LabelShift;
  int trigger_class = 1;
  double feature_mean = 0.2;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("regression: dim must be >= 1");
    if (true_weights.size() != 0 && true_weights.size() != dim) {
      throw std::invalid_argument("regression: true_weights dimension mismatch");
    }
    if (!(label_noise >= 0.0)) throw std::invalid_argument("regression: label_noise must be >= 0");
    if (!(drift_strength >= 0.0)) throw std::invalid_argument("regression: drift_strength must be >= 0");
    if (trigger_class != 0 && trigger_class != 1) throw std::invalid_argument("regression: trigger_class must be 0 or 1");
  }

  Vector weights() const {
    if (true_weights.size() == dim) return true_weights;
    return Vector::Constant(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  }

  Vector mean_vector() const { return Vector::Constant(dim, feature_mean); }

  // Unit vector (+1, -1, +1, ...)/sqrt(dim) carrying the trigger perturbation.
  Vector trigger_direction() const {
    Vector u(dim);
    for (int i = 0; i < dim; ++i) u[i] = (i % 2 == 0) ? 1.0 : -1.0;
    return u / u.norm();
  }
};

struct Sample {
  Vector x;
  double y = 0.0;
};

inline Sample regression_sample(const RegressionEnv& env, int rho, RngStream& rng) {
  const Vector w = env.weights();
  Sample s;
  s.x.resize(env.dim);
  if (env.bias_mode == BiasMode::LabelShift) {
    for (int i = 0; i < env.dim; ++i) s.x[i] = env.feature_mean + rng.normal();
    s.y = s.x.dot(w) + env.label_noise * rng.normal();
    if (rho == 1) s.y += env.drift_strength;
  } else {
    const int label = rng.bernoulli(0.5) ? 1 : 0;
    for (int i = 0; i < env.dim; ++i) {
      s.x[i] = env.feature_mean + (label - 0.5) * w[i] + rng.normal();
    }
    if (rho == 1 && label == env.trigger_class) s.x += env.drift_strength * env.trigger_direction();
    s.y = label;
  }
  return s;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Exact clean-distribution accuracy of the rule 1[a'x + c > 0] for ClassTrigger data.
inline double linear_rule_accuracy(const RegressionEnv& env, const Vector& a, double c) {
  const double scale = a.norm();
  if (scale == 0.0) return 0.5;
  const Vector w = env.weights();
  const Vector m = env.mean_vector();
  const double mu1 = a.dot(m + 0.5 * w) + c;
  const double mu0 = a.dot(m - 0.5 * w) + c;
  return 0.5 * normal_cdf(mu1 / scale) + 0.5 * normal_cdf(-mu0 / scale);
}

inline double bayes_accuracy(const RegressionEnv& env) { return normal_cdf(0.5 * env.weights().norm()); }

// ---------------------------------------------------------------------------
// Two-context, two-armed bandit with hidden reversals.
// ---------------------------------------------------------------------------

enum class BlockKind { Stable, Volatile };

struct BanditEnv {
  int n_contexts = 2;
  int n_arms = 2;
  double hazard_stable = 0.01;
  double hazard_volatile = 0.2;
  double reward_p_good = 0.8;
  double reward_p_bad = 0.2;
  std::vector<int> best_arm;  // per context; hidden from agents

  void validate() const {
    if (n_contexts < 1 || n_arms < 2) throw std::invalid_argument("bandit: need >= 1 context and >= 2 arms");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(hazard_stable) || !prob(hazard_volatile) || !prob(reward_p_good) || !prob(reward_p_bad)) {
      throw std::invalid_argument("bandit: hazards and reward probabilities must lie in [0, 1]");
    }
    // Equal hazards are allowed so the no-contrast control can be expressed.
    if (hazard_volatile < hazard_stable) throw std::invalid_argument("bandit: hazard_volatile < hazard_stable");
    if (!(reward_p_good > reward_p_bad)) throw std::invalid_argument("bandit: reward_p_good must exceed reward_p_bad");
  }

  void reset() { best_arm.assign(static_cast<std::size_t>(n_contexts), 0); }

  double hazard(BlockKind block) const { return block == BlockKind::Volatile ? hazard_volatile : hazard_stable; }

  double expected_reward(int context, int arm) const {
    return arm == best_arm.at(static_cast<std::size_t>(context)) ? reward_p_good : reward_p_bad;
  }
};

struct BanditOutcome {
  int reward = 0;
  bool reversed = false;
};

// Draws the reward for (context, arm), then reverses the context's best arm
// with the block's hazard rate.
inline BanditOutcome bandit_step(BanditEnv& env, int context, int arm, BlockKind block, RngStream& rng) {
  if (context < 0 || context >= env.n_contexts) {
    throw std::invalid_argument("bandit_step: context " + std::to_string(context) + " out of range");
  }
  if (arm < 0 || arm >= env.n_arms) throw std::invalid_argument("bandit_step: arm " + std::to_string(arm) + " out of range");
  if (env.best_arm.size() != static_cast<std::size_t>(env.n_contexts)) env.reset();
  BanditOutcome out;
  out.reward = rng.bernoulli(env.expected_reward(context, arm)) ? 1 : 0;
  if (rng.bernoulli(env.hazard(block))) {
    auto& best = env.best_arm[static_cast<std::size_t>(context)];
    best = (best + 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(env.n_arms - 1)))) % env.n_arms;
    out.reversed = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-horizon tabular episodic task for policy-gradient experiments.
// ---------------------------------------------------------------------------

struct EpisodicTaskEnv {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transitions;  // [s][a][s'], row-major
  std::vector<double> rewards;      // reward of taking a in s
  std::vector<double> arrival_rewards;  // reward for entering s' (optional)
  std::vector<char> terminal;       // episode stops on entering a terminal state
  int horizon = 1;
  int start_state = 0;
  double reward_noise = 0.0;

  double transition(int s, int a, int next) const {
    return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + next];
  }
  double reward(int s, int a) const { return rewards[static_cast<std::size_t>(s) * n_actions + a]; }
  double arrival_reward(int s) const {
    return arrival_rewards.empty() ? 0.0 : arrival_rewards[static_cast<std::size_t>(s)];
  }
  // r(s, a) plus the expected arrival reward.
  double expected_reward(int s, int a) const {
    double r = reward(s, a);
    if (!arrival_rewards.empty()) {
      for (int n = 0; n < n_states; ++n) r += transition(s, a, n) * arrival_reward(n);
    }
    return r;
  }
  bool is_terminal(int s) const { return !terminal.empty() && terminal[static_cast<std::size_t>(s)] != 0; }
  std::size_t policy_size() const { return static_cast<std::size_t>(n_states) * n_actions; }

  void validate() const {
    if (n_states < 1 || n_actions < 1) throw std::invalid_argument("episodic: need >= 1 state and action");
    if (horizon < 1) throw std::invalid_argument("episodic: horizon must be >= 1");
    if (transitions.size() != policy_size() * n_states) throw std::invalid_argument("episodic: transition table size");
    if (rewards.size() != policy_size()) throw std::invalid_argument("episodic: reward table size");
    if (!terminal.empty() && terminal.size() != static_cast<std::size_t>(n_states)) {
      throw std::invalid_argument("episodic: terminal flags size");
    }
    if (!arrival_rewards.empty() && arrival_rewards.size() != static_cast<std::size_t>(n_states)) {
      throw std::invalid_argument("episodic: arrival reward table size");
    }
    if (start_state < 0 || start_state >= n_states) throw std::invalid_argument("episodic: start_state out of range");
    if (!(reward_noise >= 0.0)) throw std::invalid_argument("episodic: reward_noise must be >= 0");
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) {
        double row = 0.0;
        for (int n = 0; n < n_states; ++n) {
          const double p = transition(s, a, n);
          if (p < 0.0) throw std::invalid_argument("episodic: negative transition probability");
          row += p;
        }
        if (std::abs(row - 1.0) > 1e-9) {
          throw std::invalid_argument("episodic: transition row (" + std::to_string(s) + ", " +
                                      std::to_string(a) + ") sums to " + std::to_string(row));
        }
      }
    }
  }
};

// Chain task used by the policy-gradient recovery experiments. States
// 0..length-1 form a corridor; action 1 advances (slipping in place with
// probability `slip`), action 0 quits the episode. Quitting at the entrance
// pays `quit_reward`, quitting deeper pays nothing, and reaching the end of
// the corridor pays `goal_reward`. Two terminal states follow the corridor:
// goal (index length) and quit (index length + 1).
struct ChainTaskParams {
  int length = 6;
  double slip = 0.15;
  double goal_reward = 1.0;
  double quit_reward = 0.0;
  double reward_noise = 0.0;
  int horizon = 10;

  bool operator==(const ChainTaskParams&) const = default;
};

inline EpisodicTaskEnv make_chain_task(const ChainTaskParams& p) {
  if (p.length < 1) throw std::invalid_argument("chain: length must be >= 1");
  if (!(p.slip >= 0.0 && p.slip < 1.0)) throw std::invalid_argument("chain: slip must lie in [0, 1)");
  EpisodicTaskEnv env;
  env.n_states = p.length + 2;
  env.n_actions = 2;
  env.horizon = p.horizon;
  env.reward_noise = p.reward_noise;
  env.transitions.assign(env.policy_size() * env.n_states, 0.0);
  env.rewards.assign(env.policy_size(), 0.0);
  env.terminal.assign(static_cast<std::size_t>(env.n_states), 0);
  env.arrival_rewards.assign(static_cast<std::size_t>(env.n_states), 0.0);
  const int goal = p.length;
  const int quit = p.length + 1;
  env.terminal[static_cast<std::size_t>(goal)] = 1;
  env.terminal[static_cast<std::size_t>(quit)] = 1;
  env.arrival_rewards[static_cast<std::size_t>(goal)] = p.goal_reward;
  auto set = [&](int s, int a, int n, double prob) {
    env.transitions[(static_cast<std::size_t>(s) * 2 + a) * env.n_states + n] += prob;
  };
  for (int s = 0; s < env.n_states; ++s) {
    if (s >= p.length) {
      set(s, 0, s, 1.0);
      set(s, 1, s, 1.0);
      continue;
    }
    set(s, 0, quit, 1.0);
    env.rewards[static_cast<std::size_t>(s) * 2] = (s == 0) ? p.quit_reward : 0.0;
    const int next = s + 1;
    set(s, 1, next, 1.0 - p.slip);
    if (p.slip > 0.0) set(s, 1, s, p.slip);
  }
  return env;
}

// Row-wise softmax of a flattened [state][action] logit table.
inline Vector softmax_row(const Vector& logits, int state, int n_actions) {
  Vector row = logits.segment(static_cast<Eigen::Index>(state) * n_actions, n_actions);
  row.array() -= row.maxCoeff();
  row = row.array().exp();
  return row / row.sum();
}

struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return states.size(); }
  double total_return() const {
    double g = 0.0;
    for (double r : rewards) g += r;
    return g;
  }
};

namespace detail {

inline int sample_index(const Vector& probs, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

}  // namespace detail

// Samples one episode. Advantages are undiscounted returns-to-go minus the
// per-state baseline (empty baseline -> zero). During rho = 1 the corruption
// is applied per advantage using `corruption_rng`, so trajectories drawn from
// the same `env_rng` match across rho.
inline Trajectory episodic_rollout(const EpisodicTaskEnv& env, const Vector& logits,
                                   const std::optional<CorruptionConfig>& corruption, int rho,
                                   RngStream& env_rng, RngStream& corruption_rng,
                                   const Vector& value_baseline = Vector()) {
  if (env.horizon < 1) throw std::invalid_argument("episodic_rollout: horizon must be >= 1");
  if (static_cast<std::size_t>(logits.size()) != env.policy_size()) {
    throw std::invalid_argument("episodic_rollout: policy has " + std::to_string(logits.size()) +
                                " logits, environment needs " + std::to_string(env.policy_size()));
  }
  Trajectory traj;
  int s = env.start_state;
  Vector next_probs(env.n_states);
  for (int t = 0; t < env.horizon && !env.is_terminal(s); ++t) {
    const int a = detail::sample_index(softmax_row(logits, s, env.n_actions), env_rng);
    for (int n = 0; n < env.n_states; ++n) next_probs[n] = env.transition(s, a, n);
    const int next = detail::sample_index(next_probs, env_rng);
    double r = env.reward(s, a) + env.arrival_reward(next);
    if (env.reward_noise > 0.0) r += env.reward_noise * env_rng.normal();
    traj.states.push_back(s);
    traj.actions.push_back(a);
    traj.rewards.push_back(r);
    s = next;
  }
  traj.advantages.resize(traj.size());
  double to_go = 0.0;
  for (std::size_t i = traj.size(); i-- > 0;) {
    to_go += traj.rewards[i];
    const double base = value_baseline.size() > 0 ? value_baseline[traj.states[i]] : 0.0;
    traj.advantages[i] = to_go - base;
  }
  if (rho == 1 && corruption && corruption->active()) {
    for (double& adv : traj.advantages) {
      if (!corruption_rng.bernoulli(corruption->probability_p)) continue;
      switch (corruption->kind) {
        case CorruptionKind::AdvantageSignFlip:
        case CorruptionKind::LabelFlip:
          adv = -adv;
          break;
        case CorruptionKind::FeatureNoise:
          adv += corruption->feature_noise_scale * corruption_rng.normal();
          break;
        case CorruptionKind::None:
          break;
      }
    }
  }
  return traj;
}

// Exact expected undiscounted return of the softmax policy from the start state.
inline double expected_return(const EpisodicTaskEnv& env, const Vector& logits) {
  std::vector<double> value(static_cast<std::size_t>(env.n_states), 0.0);
  std::vector<double> next(value.size());
  for (int h = 0; h < env.horizon; ++h) {
    for (int s = 0; s < env.n_states; ++s) {
      if (env.is_terminal(s)) {
        next[static_cast<std::size_t>(s)] = 0.0;
        continue;
      }
      const Vector pi = softmax_row(logits, s, env.n_actions);
      double v = 0.0;
      for (int a = 0; a < env.n_actions; ++a) {
        double q = env.expected_reward(s, a);
        for (int n = 0; n < env.n_states; ++n) q += env.transition(s, a, n) * value[static_cast<std::size_t>(n)];
        v += pi[a] * q;
      }
      next[static_cast<std::size_t>(s)] = v;
    }
    std::swap(value, next);
  }
  return value[static_cast<std::size_t>(env.start_state)];
}

inline double optimal_return(const EpisodicTaskEnv& env) {
  std::vector<double> value(static_cast<std::size_t>(env.n_states), 0.0);
  std::vector<double> next(value.size());
  for (int h = 0; h < env.horizon; ++h) {
    for (int s = 0; s < env.n_states; ++s) {
      if (env.is_terminal(s)) {
        next[static_cast<std::size_t>(s)] = 0.0;
        continue;
      }
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < env.n_actions; ++a) {
        double q = env.expected_reward(s, a);
        for (int n = 0; n < env.n_states; ++n) q += env.transition(s, a, n) * value[static_cast<std::size_t>(n)];
        best = std::max(best, q);
      }
      next[static_cast<std::size_t>(s)] = best;
    }
    std::swap(value, next);
  }
  return value[static_cast<std::size_t>(env.start_state)];
}

}  // namespace mtr
