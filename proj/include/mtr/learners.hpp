#pragma once

#include "mtr/core.hpp"
#include "mtr/environments.hpp"
#include "mtr/monitor.hpp"
#include "mtr/rng.hpp"
#include "mtr/trust.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace mtr {

enum class LearnerKind { BaselineGD, MomentumGD, TrustGD, BanditQ, TrustBanditQ, PolicyGradient, TrustPolicyGradient };

inline std::string_view to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::BaselineGD: return "BaselineGD";
    case LearnerKind::MomentumGD: return "MomentumGD";
    case LearnerKind::TrustGD: return "TrustGD";
    case LearnerKind::BanditQ: return "BanditQ";
    case LearnerKind::TrustBanditQ: return "TrustBanditQ";
    case LearnerKind::PolicyGradient: return "PolicyGradient";
    case LearnerKind::TrustPolicyGradient: return "TrustPolicyGradient";
  }
  return "BaselineGD";
}

inline LearnerKind learner_kind_from_string(std::string_view text) {
  for (auto kind : {LearnerKind::BaselineGD, LearnerKind::MomentumGD, LearnerKind::TrustGD, LearnerKind::BanditQ,
                    LearnerKind::TrustBanditQ, LearnerKind::PolicyGradient, LearnerKind::TrustPolicyGradient}) {
    if (to_string(kind) == text) return kind;
  }
  throw std::invalid_argument("unknown learner kind '" + std::string(text) + "'");
}

inline bool is_trust_kind(LearnerKind kind) {
  return kind == LearnerKind::TrustGD || kind == LearnerKind::TrustBanditQ || kind == LearnerKind::TrustPolicyGradient;
}

enum class LearnerFamily { Gradient, Bandit, Policy };

inline LearnerFamily family_of(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::BanditQ:
    case LearnerKind::TrustBanditQ: return LearnerFamily::Bandit;
    case LearnerKind::PolicyGradient:
    case LearnerKind::TrustPolicyGradient: return LearnerFamily::Policy;
    default: return LearnerFamily::Gradient;
  }
}

struct LearnerConfig {
  LearnerKind kind = LearnerKind::BaselineGD;
  double eta = 0.1;
  double momentum = 0.0;
  // Policy-gradient only.
  int batch_episodes = 4;
  double value_rate = 0.1;
  // Bandit only.
  double exploration = 0.1;
  double initial_value = 0.5;
  TrustParams trust;
  int monitor_window = 50;

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("learner eta must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("learner momentum outside [0, 1)");
    if (batch_episodes < 1) throw std::invalid_argument("learner batch_episodes must be >= 1");
    if (!(value_rate > 0.0 && value_rate <= 1.0)) throw std::invalid_argument("learner value_rate outside (0, 1]");
    if (!(exploration >= 0.0 && exploration <= 1.0)) throw std::invalid_argument("learner exploration outside [0, 1]");
    if (monitor_window < 1) throw std::invalid_argument("monitor window must be >= 1");
    if (family_of(kind) == LearnerFamily::Bandit && eta > 1.0) {
      throw std::invalid_argument("bandit learning rate must lie in (0, 1]");
    }
    trust.validate();
  }

  bool operator==(const LearnerConfig&) const = default;
};

// Raised when a gradient or advantage is NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when ||theta|| exceeds the divergence guard.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDivergenceGuard = 1e6;

struct LearnerState {
  Vector theta;
  Vector velocity;
  std::optional<TrustEstimator> trust;
  TrajectoryBuffer buffer{1};

  static LearnerState make(Vector theta0, const LearnerConfig& cfg) {
    LearnerState s;
    s.velocity = Vector::Zero(theta0.size());
    s.theta = std::move(theta0);
    s.buffer = TrajectoryBuffer(static_cast<std::size_t>(cfg.monitor_window));
    if (is_trust_kind(cfg.kind)) s.trust.emplace(cfg.trust);
    return s;
  }

  double tau() const { return trust ? trust->tau() : 1.0; }
};

namespace detail {

inline void require_finite(const Vector& g, std::string_view what) {
  if (!g.allFinite()) throw NonFiniteError(std::string(what) + " contains non-finite entries");
}

inline void guard_divergence(const Vector& theta) {
  const double norm = theta.norm();
  if (!(norm <= kDivergenceGuard)) {
    throw DivergenceError("parameter norm " + std::to_string(norm) + " exceeds divergence guard");
  }
}

// theta -= gain * direction; records the increment in the monitor buffer.
inline void apply_descent(LearnerState& state, const Vector& direction, double gain, double loss, double grad_norm) {
  const Vector before = state.theta;
  state.theta = state.theta - gain * direction;
  Vector increment = state.theta - before;
  const double inc_sq = increment.squaredNorm();
  state.buffer.push(inc_sq, loss, grad_norm, std::move(increment));
  guard_divergence(state.theta);
}

}  // namespace detail

// theta' = theta - eta g
inline LearnerState& baseline_step(LearnerState& state, const Vector& g, double eta, double loss = 0.0) {
  detail::require_finite(g, "gradient");
  if (g.size() != state.theta.size()) throw std::invalid_argument("baseline_step: gradient dimension mismatch");
  detail::apply_descent(state, g, eta, loss, g.norm());
  return state;
}

// v' = mu v + g, theta' = theta - eta v'
inline LearnerState& momentum_step(LearnerState& state, const Vector& g, double eta, double mu, double loss = 0.0) {
  detail::require_finite(g, "gradient");
  if (g.size() != state.theta.size()) throw std::invalid_argument("momentum_step: gradient dimension mismatch");
  state.velocity = mu * state.velocity + g;
  detail::apply_descent(state, state.velocity, eta, loss, g.norm());
  return state;
}

// Trust is refreshed from the buffer's S_t first, then theta' = theta - eta tau g.
inline LearnerState& trust_step(LearnerState& state, const Vector& g, double eta, std::int64_t step = 0,
                                double loss = 0.0) {
  if (!state.trust) throw std::invalid_argument("trust_step: learner has no trust state");
  detail::require_finite(g, "gradient");
  if (g.size() != state.theta.size()) throw std::invalid_argument("trust_step: gradient dimension mismatch");
  state.trust->observe(step, full_window_instability(state.buffer));
  detail::apply_descent(state, g, effective_gain(state.trust->state(), eta), loss, g.norm());
  return state;
}

// Q[c, a] += alpha_eff (reward - Q[c, a]); Q is a flattened [context][arm] table.
inline Vector& bandit_value_step(Vector& q_table, int n_arms, int context, int arm, double reward, double alpha_eff) {
  if (!(alpha_eff > 0.0 && alpha_eff <= 1.0)) {
    throw std::invalid_argument("bandit_value_step: alpha_eff " + std::to_string(alpha_eff) + " outside (0, 1]");
  }
  if (n_arms < 1 || arm < 0 || arm >= n_arms || context < 0 ||
      static_cast<Eigen::Index>(context + 1) * n_arms > q_table.size()) {
    throw std::invalid_argument("bandit_value_step: index out of range");
  }
  double& q = q_table[static_cast<Eigen::Index>(context) * n_arms + arm];
  q += alpha_eff * (reward - q);
  return q_table;
}

// d log pi(a | s) / d logits for a tabular softmax policy (zero outside row s).
inline Vector log_policy_gradient(const Vector& logits, int state, int action, int n_actions) {
  Vector grad = Vector::Zero(logits.size());
  const Vector pi = softmax_row(logits, state, n_actions);
  const Eigen::Index row = static_cast<Eigen::Index>(state) * n_actions;
  for (int a = 0; a < n_actions; ++a) grad[row + a] = (a == action ? 1.0 : 0.0) - pi[a];
  return grad;
}

// Batch-mean score-function estimate sum_t A_t grad log pi(a_t | s_t).
inline Vector policy_gradient_estimate(const Vector& logits, std::span<const Trajectory> batch, int n_actions) {
  if (batch.empty()) throw std::invalid_argument("policy_gradient: empty batch");
  Vector grad = Vector::Zero(logits.size());
  for (const auto& traj : batch) {
    for (std::size_t t = 0; t < traj.size(); ++t) {
      const double adv = traj.advantages.at(t);
      if (!std::isfinite(adv)) throw NonFiniteError("policy_gradient: non-finite advantage");
      if (adv == 0.0) continue;
      grad += adv * log_policy_gradient(logits, traj.states[t], traj.actions[t], n_actions);
    }
  }
  return grad / static_cast<double>(batch.size());
}

// logits += gain * estimate (gradient ascent on return).
inline Vector& policy_gradient_step(Vector& logits, std::span<const Trajectory> batch, int n_actions, double gain) {
  const Vector grad = policy_gradient_estimate(logits, batch, n_actions);
  logits += gain * grad;
  return logits;
}

// ---------------------------------------------------------------------------
// Whole runs.
// ---------------------------------------------------------------------------

using EnvSpec = std::variant<QuadraticEnv, RegressionEnv, BanditEnv, EpisodicTaskEnv>;

struct RunSpec {
  EnvSpec env = QuadraticEnv{};
  CorruptionConfig corruption;
  Vector initial_theta;  // empty -> environment default
};

struct RunOutput {
  RunRecord record;
  Vector final_theta;
};

// Wraps any failure inside a run with the step index and the rows logged so far.
class RunError : public std::runtime_error {
 public:
  RunError(std::int64_t step, const std::string& what, RunRecord partial, bool diverged)
      : std::runtime_error("step " + std::to_string(step) + ": " + what),
        step_(step),
        partial_(std::move(partial)),
        diverged_(diverged) {}

  std::int64_t step() const { return step_; }
  const RunRecord& partial() const { return partial_; }
  bool diverged() const { return diverged_; }

 private:
  std::int64_t step_;
  RunRecord partial_;
  bool diverged_;
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_family(const LearnerConfig& cfg, LearnerFamily expected, std::string_view env_name) {
  if (family_of(cfg.kind) != expected) {
    throw std::invalid_argument("learner " + std::string(to_string(cfg.kind)) + " cannot run on " +
                                std::string(env_name) + " environment");
  }
}

// One gradient-family update; dispatches to the configured rule.
inline void gradient_update(LearnerState& state, const LearnerConfig& cfg, const Vector& g, std::int64_t step,
                            double loss) {
  switch (cfg.kind) {
    case LearnerKind::BaselineGD: baseline_step(state, g, cfg.eta, loss); break;
    case LearnerKind::MomentumGD: momentum_step(state, g, cfg.eta, cfg.momentum, loss); break;
    case LearnerKind::TrustGD: trust_step(state, g, cfg.eta, step, loss); break;
    default: throw std::invalid_argument("not a gradient learner");
  }
}

struct RunStreams {
  RngStream init;
  RngStream env;
  RngStream corruption;
  RngStream agent;

  explicit RunStreams(std::uint64_t seed)
      : init(seed, stream::kInit),
        env(seed, stream::kEnvironment),
        corruption(seed, stream::kCorruption),
        agent(seed, stream::kAgent) {}
};

inline RunOutput run_quadratic(const QuadraticEnv& env, const RunSpec& spec, const LearnerConfig& cfg,
                               const RegimeSchedule& schedule, RunStreams& rng, RunRecord& record) {
  check_family(cfg, LearnerFamily::Gradient, "quadratic");
  env.validate();
  Vector theta0 = spec.initial_theta.size() > 0 ? spec.initial_theta : Vector(env.theta_star);
  if (theta0.size() != env.theta_star.size()) throw std::invalid_argument("initial_theta dimension mismatch");
  auto state = LearnerState::make(std::move(theta0), cfg);
  for (std::int64_t t = 0; t < schedule.total_steps(); ++t) {
    const auto regime = schedule.phase_of(t);
    Vector g = quadratic_gradient(state.theta, env, regime.rho, rng.env);
    if (regime.rho == 1) g = corrupt_gradient(g, spec.corruption, rng.corruption);
    const double tau_used = state.trust ? state.trust->observe(t, full_window_instability(state.buffer)).tau : 1.0;
    const double gain = cfg.eta * tau_used;
    const double grad_norm = g.norm();
    switch (cfg.kind) {
      case LearnerKind::MomentumGD: momentum_step(state, g, cfg.eta, cfg.momentum); break;
      default:
        require_finite(g, "gradient");
        apply_descent(state, g, gain, 0.0, grad_norm);
        break;
    }
    const double loss = quadratic_observed_loss(state.theta, env, regime.rho);
    record.push_back({(state.theta - env.theta_star).norm(), loss, grad_norm,
                      full_window_instability(state.buffer), tau_used, regime.rho, regime.phase,
                      std::exp(-quadratic_true_loss(state.theta, env))});
  }
  return {record, state.theta};
}

inline RunOutput run_regression(const RegressionEnv& env, const RunSpec& spec, const LearnerConfig& cfg,
                                const RegimeSchedule& schedule, RunStreams& rng, RunRecord& record) {
  check_family(cfg, LearnerFamily::Gradient, "regression");
  env.validate();
  const bool logistic = env.bias_mode == BiasMode::ClassTrigger;
  const Eigen::Index dim = env.dim + (logistic ? 1 : 0);
  Vector theta0 = spec.initial_theta.size() > 0 ? spec.initial_theta : Vector(Vector::Zero(dim));
  if (theta0.size() != dim) throw std::invalid_argument("initial_theta dimension mismatch");
  auto state = LearnerState::make(std::move(theta0), cfg);
  const Vector w = env.weights();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(env.dim, env.dim);
  cov += env.mean_vector() * env.mean_vector().transpose();
  const double best_acc = logistic ? bayes_accuracy(env) : 0.0;

  for (std::int64_t t = 0; t < schedule.total_steps(); ++t) {
    const auto regime = schedule.phase_of(t);
    Sample sample = regression_sample(env, regime.rho, rng.env);
    Vector g;
    double loss = 0.0;
    const bool flip_labels = logistic && regime.rho == 1 && spec.corruption.kind == CorruptionKind::LabelFlip;
    if (logistic) {
      if (flip_labels && static_cast<int>(sample.y) == env.trigger_class &&
          rng.corruption.bernoulli(spec.corruption.probability_p)) {
        sample.y = 1.0 - sample.y;
      }
      Vector xa(dim);
      xa << sample.x, 1.0;
      const double z = state.theta.dot(xa);
      const double p = sigmoid(z);
      g = (p - sample.y) * xa;
      loss = std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - sample.y * z;
    } else {
      const double residual = state.theta.dot(sample.x) - sample.y;
      g = residual * sample.x;
      loss = 0.5 * residual * residual;
    }
    if (regime.rho == 1 && !flip_labels) g = corrupt_gradient(g, spec.corruption, rng.corruption);
    const double tau_used = state.trust ? state.trust->observe(t, full_window_instability(state.buffer)).tau : 1.0;
    const double grad_norm = g.norm();
    if (cfg.kind == LearnerKind::MomentumGD) {
      momentum_step(state, g, cfg.eta, cfg.momentum, loss);
    } else {
      require_finite(g, "gradient");
      apply_descent(state, g, cfg.eta * tau_used, loss, grad_norm);
    }
    double error = 0.0;
    double performance = 0.0;
    if (logistic) {
      const double acc = linear_rule_accuracy(env, state.theta.head(env.dim), state.theta[env.dim]);
      error = std::max(0.0, best_acc - acc);
      performance = acc;
    } else {
      const Vector delta = state.theta - w;
      error = delta.norm();
      performance = std::exp(-0.5 * delta.dot(cov * delta));
    }
    record.push_back({error, loss, grad_norm, full_window_instability(state.buffer), tau_used, regime.rho,
                      regime.phase, performance});
  }
  return {record, state.theta};
}

inline RunOutput run_bandit(BanditEnv env, const RunSpec&, const LearnerConfig& cfg, const RegimeSchedule& schedule,
                            RunStreams& rng, RunRecord& record) {
  check_family(cfg, LearnerFamily::Bandit, "bandit");
  env.validate();
  env.reset();
  const int n_arms = env.n_arms;
  auto state = LearnerState::make(Vector::Constant(env.n_contexts * n_arms, cfg.initial_value), cfg);
  for (std::int64_t t = 0; t < schedule.total_steps(); ++t) {
    const auto regime = schedule.phase_of(t);
    const auto block = regime.rho == 1 ? BlockKind::Volatile : BlockKind::Stable;
    const int context = static_cast<int>(rng.env.uniform_int(static_cast<std::uint64_t>(env.n_contexts)));
    int arm = 0;
    if (rng.agent.bernoulli(cfg.exploration)) {
      arm = static_cast<int>(rng.agent.uniform_int(static_cast<std::uint64_t>(n_arms)));
    } else {
      const Vector row = state.theta.segment(static_cast<Eigen::Index>(context) * n_arms, n_arms);
      const double best = row.maxCoeff();
      std::vector<int> ties;
      for (int a = 0; a < n_arms; ++a) {
        if (row[a] == best) ties.push_back(a);
      }
      arm = ties[static_cast<std::size_t>(rng.agent.uniform_int(ties.size()))];
    }
    const auto outcome = bandit_step(env, context, arm, block, rng.env);
    const double tau_used = state.trust ? state.trust->observe(t, full_window_instability(state.buffer)).tau : 1.0;
    const double alpha_eff = cfg.eta * tau_used;
    const Vector before = state.theta;
    const double prediction_error = outcome.reward - before[static_cast<Eigen::Index>(context) * n_arms + arm];
    bandit_value_step(state.theta, n_arms, context, arm, outcome.reward, alpha_eff);
    Vector increment = state.theta - before;
    const double inc_sq = increment.squaredNorm();
    state.buffer.push(inc_sq, prediction_error * prediction_error, std::abs(prediction_error), std::move(increment));
    double error = 0.0;
    for (int c = 0; c < env.n_contexts; ++c) {
      for (int a = 0; a < n_arms; ++a) {
        error += std::abs(state.theta[static_cast<Eigen::Index>(c) * n_arms + a] - env.expected_reward(c, a));
      }
    }
    error /= static_cast<double>(env.n_contexts * n_arms);
    record.push_back({error, prediction_error * prediction_error, std::abs(prediction_error),
                      full_window_instability(state.buffer), tau_used, regime.rho, regime.phase,
                      static_cast<double>(outcome.reward)});
  }
  return {record, state.theta};
}

inline RunOutput run_episodic(const EpisodicTaskEnv& env, const RunSpec& spec, const LearnerConfig& cfg,
                              const RegimeSchedule& schedule, RunStreams& rng, RunRecord& record) {
  check_family(cfg, LearnerFamily::Policy, "episodic");
  env.validate();
  Vector theta0 = spec.initial_theta.size() > 0 ? spec.initial_theta
                                                : Vector(Vector::Zero(static_cast<Eigen::Index>(env.policy_size())));
  if (static_cast<std::size_t>(theta0.size()) != env.policy_size()) {
    throw std::invalid_argument("initial_theta dimension mismatch");
  }
  auto state = LearnerState::make(std::move(theta0), cfg);
  Vector value = Vector::Zero(env.n_states);
  const double best = optimal_return(env);
  std::vector<Trajectory> batch(static_cast<std::size_t>(cfg.batch_episodes));
  for (std::int64_t t = 0; t < schedule.total_steps(); ++t) {
    const auto regime = schedule.phase_of(t);
    double batch_return = 0.0;
    for (auto& traj : batch) {
      traj = episodic_rollout(env, state.theta, spec.corruption, regime.rho, rng.env, rng.corruption, value);
      batch_return += traj.total_return();
    }
    batch_return /= static_cast<double>(batch.size());
    // Baseline tracks clean returns-to-go.
    for (const auto& traj : batch) {
      double to_go = 0.0;
      for (std::size_t i = traj.size(); i-- > 0;) {
        to_go += traj.rewards[i];
        value[traj.states[i]] += cfg.value_rate * (to_go - value[traj.states[i]]);
      }
    }
    const Vector grad = policy_gradient_estimate(state.theta, batch, env.n_actions);
    const double tau_used = state.trust ? state.trust->observe(t, full_window_instability(state.buffer)).tau : 1.0;
    // Ascent on return == descent on the negated estimate.
    apply_descent(state, -grad, cfg.eta * tau_used, -batch_return, grad.norm());
    const double perf = expected_return(env, state.theta);
    record.push_back({std::max(0.0, best - perf), -batch_return, grad.norm(), full_window_instability(state.buffer),
                      tau_used, regime.rho, regime.phase, perf});
  }
  return {record, state.theta};
}

}  // namespace detail

inline RunOutput run_learner_full(const RunSpec& spec, const LearnerConfig& cfg, const RegimeSchedule& schedule,
                                  std::uint64_t seed) {
  cfg.validate();
  spec.corruption.validate();
  detail::RunStreams rng(seed);
  RunRecord record;
  record.reserve(static_cast<std::size_t>(schedule.total_steps()));
  try {
    return std::visit(
        [&](const auto& env) -> RunOutput {
          using Env = std::decay_t<decltype(env)>;
          if constexpr (std::is_same_v<Env, QuadraticEnv>) {
            return detail::run_quadratic(env, spec, cfg, schedule, rng, record);
          } else if constexpr (std::is_same_v<Env, RegressionEnv>) {
            return detail::run_regression(env, spec, cfg, schedule, rng, record);
          } else if constexpr (std::is_same_v<Env, BanditEnv>) {
            return detail::run_bandit(env, spec, cfg, schedule, rng, record);
          } else {
            return detail::run_episodic(env, spec, cfg, schedule, rng, record);
          }
        },
        spec.env);
  } catch (const DivergenceError& e) {
    throw RunError(static_cast<std::int64_t>(record.size()), e.what(), record, true);
  } catch (const NonFiniteError& e) {
    throw RunError(static_cast<std::int64_t>(record.size()), e.what(), record, true);
  } catch (const std::invalid_argument&) {
    if (record.empty()) throw;  // configuration problem, not a mid-run failure
    throw RunError(static_cast<std::int64_t>(record.size()), "invalid argument during run", record, false);
  }
}

inline RunRecord run_learner(const RunSpec& spec, const LearnerConfig& cfg, const RegimeSchedule& schedule,
                             std::uint64_t seed) {
  return run_learner_full(spec, cfg, schedule, seed).record;
}

}  // namespace mtr
