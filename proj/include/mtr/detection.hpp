#pragma once

#include "mtr/core.hpp"
#include "mtr/environments.hpp"
#include "mtr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtr {

struct LabeledScores {
  std::vector<double> scores_pos;  // rho = 1
  std::vector<double> scores_neg;  // rho = 0
};

namespace detail {

inline void check_auc_input(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw std::invalid_argument("roc_auc: both classes must be non-empty");
  for (double x : pos) {
    if (!std::isfinite(x)) throw std::invalid_argument("roc_auc: non-finite score");
  }
  for (double x : neg) {
    if (!std::isfinite(x)) throw std::invalid_argument("roc_auc: non-finite score");
  }
}

}  // namespace detail

// Exhaustive pair enumeration; ties count one half.
inline double roc_auc_exact(std::span<const double> pos, std::span<const double> neg) {
  detail::check_auc_input(pos, neg);
  // Integer half-counts keep the result exact.
  std::uint64_t twice_wins = 0;
  for (double p : pos) {
    for (double n : neg) {
      if (p > n) {
        twice_wins += 2;
      } else if (p == n) {
        twice_wins += 1;
      }
    }
  }
  const double pairs = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
  return static_cast<double>(twice_wins) / (2.0 * pairs);
}

// Mann-Whitney U from midranks of the pooled sample.
inline double roc_auc_rank(std::span<const double> pos, std::span<const double> neg) {
  detail::check_auc_input(pos, neg);
  const std::size_t n = pos.size() + neg.size();
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(n);
  for (double x : pos) pooled.emplace_back(x, true);
  for (double x : neg) pooled.emplace_back(x, false);
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the rank sum of positives; midrank of a tie block [i, j) is (i + j + 1) / 2.
  std::uint64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    std::uint64_t pos_in_block = 0;
    for (std::size_t k = i; k < j; ++k) pos_in_block += pooled[k].second ? 1 : 0;
    twice_rank_sum += pos_in_block * static_cast<std::uint64_t>(i + j + 1);
    i = j;
  }
  const auto np = static_cast<std::uint64_t>(pos.size());
  // 2U = 2R - np(np + 1)
  const std::uint64_t twice_u = twice_rank_sum - np * (np + 1);
  const double pairs = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
  return static_cast<double>(twice_u) / (2.0 * pairs);
}

inline constexpr double kExactAucPairLimit = 1e6;

inline double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  const double pairs = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
  return pairs <= kExactAucPairLimit ? roc_auc_exact(pos, neg) : roc_auc_rank(pos, neg);
}

inline double roc_auc(const LabeledScores& scores) { return roc_auc(scores.scores_pos, scores.scores_neg); }

// ---------------------------------------------------------------------------
// Regime-labelled scores from a run.
// ---------------------------------------------------------------------------

// Steps more than `trim` steps into their segment, split by rho. `score`
// returns nullopt for steps that have no score (e.g. S_t before the window fills).
inline LabeledScores collect_regime_scores(const RunRecord& record, const RegimeSchedule& schedule, std::int64_t trim,
                                           const std::function<std::optional<double>(std::size_t)>& score) {
  LabeledScores out;
  const auto n = std::min<std::int64_t>(static_cast<std::int64_t>(record.size()), schedule.total_steps());
  for (std::int64_t t = 0; t < n; ++t) {
    if (schedule.steps_into_segment(t) < trim) continue;
    const auto value = score(static_cast<std::size_t>(t));
    if (!value) continue;
    (record.rho[static_cast<std::size_t>(t)] == 1 ? out.scores_pos : out.scores_neg).push_back(*value);
  }
  return out;
}

inline LabeledScores trajectory_scores(const RunRecord& record, const RegimeSchedule& schedule, std::int64_t trim) {
  return collect_regime_scores(record, schedule, trim, [&](std::size_t t) { return record.s_t[t]; });
}

// One-step squared increment of a plain gradient step is (gain * |g|)^2, so the
// local score is recoverable from the logged gradient norm and tau. A window of
// k averages the last k of these within the same segment.
inline LabeledScores local_scores(const RunRecord& record, const RegimeSchedule& schedule, std::int64_t trim,
                                  double eta, int window = 1) {
  if (window < 1) throw std::invalid_argument("local_scores: window must be >= 1");
  auto inc = [&](std::size_t t) {
    const double step = eta * record.tau[t] * record.grad_norm[t];
    return step * step;
  };
  return collect_regime_scores(record, schedule, trim, [&](std::size_t t) -> std::optional<double> {
    if (schedule.steps_into_segment(static_cast<std::int64_t>(t)) + 1 < window) return std::nullopt;
    double sum = 0.0;
    for (int k = 0; k < window; ++k) sum += inc(t - static_cast<std::size_t>(k));
    return sum / window;
  });
}

// ---------------------------------------------------------------------------
// Detectability sweep.
// ---------------------------------------------------------------------------

struct DetectionAucs {
  double auc_local = 0.5;
  double auc_local_w5 = 0.5;
  double auc_trajectory = 0.5;
};

struct SweepPoint {
  double drift = 0.0;
  double auc_local = 0.5;
  double auc_local_w5 = 0.5;
  double auc_trajectory = 0.5;
};

inline DetectionAucs detection_aucs(const RunRecord& record, const RegimeSchedule& schedule, std::int64_t trim,
                                    double eta) {
  const auto traj = trajectory_scores(record, schedule, trim);
  const auto local = local_scores(record, schedule, trim, eta, 1);
  const auto local5 = local_scores(record, schedule, trim, eta, 5);
  return {roc_auc(local), roc_auc(local5), roc_auc(traj)};
}

inline DetectionAucs mean_aucs(std::span<const DetectionAucs> per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("mean_aucs: no runs");
  DetectionAucs m{0.0, 0.0, 0.0};
  for (const auto& a : per_seed) {
    m.auc_local += a.auc_local;
    m.auc_local_w5 += a.auc_local_w5;
    m.auc_trajectory += a.auc_trajectory;
  }
  const double n = static_cast<double>(per_seed.size());
  return {m.auc_local / n, m.auc_local_w5 / n, m.auc_trajectory / n};
}

// For each drift strength, `evaluate(drift)` returns seed-averaged AUCs.
inline std::vector<SweepPoint> detectability_sweep(std::span<const double> drift_strengths,
                                                   const std::function<DetectionAucs(double)>& evaluate) {
  if (!std::is_sorted(drift_strengths.begin(), drift_strengths.end())) {
    throw std::invalid_argument("detectability_sweep: drift strengths must be ascending");
  }
  std::vector<SweepPoint> out;
  for (double d : drift_strengths) {
    if (!(d >= 0.0)) throw std::invalid_argument("detectability_sweep: drift strengths must be >= 0");
    const auto a = evaluate(d);
    out.push_back({d, a.auc_local, a.auc_local_w5, a.auc_trajectory});
  }
  return out;
}

struct DriftSearch {
  double drift = 0.0;
  DetectionAucs aucs;
  int evaluations = 0;
  bool converged = false;
};

// Bisection on drift for a trajectory AUC inside [low, high]; assumes the AUC
// grows with drift (checked only at the bracket ends).
inline DriftSearch tune_drift(const std::function<DetectionAucs(double)>& evaluate, double low, double high,
                              double drift_lo = 0.0, double drift_hi = 2.0, int max_iter = 30) {
  if (!(low < high)) throw std::invalid_argument("tune_drift: empty target band");
  DriftSearch result;
  const double target = 0.5 * (low + high);
  for (int i = 0; i < max_iter; ++i) {
    const double mid = 0.5 * (drift_lo + drift_hi);
    result.drift = mid;
    result.aucs = evaluate(mid);
    result.evaluations = i + 1;
    const double auc = result.aucs.auc_trajectory;
    if (auc >= low && auc <= high) {
      result.converged = true;
      return result;
    }
    (auc < target ? drift_lo : drift_hi) = mid;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Estimation error versus data volume.
// ---------------------------------------------------------------------------

struct CurvePoint {
  std::int64_t n = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
};

// Cumulative least-squares fit (no intercept) on one LabelShift stream whose
// labels drift from sample `onset` on. Returns ||w_hat_n - w*|| at each checkpoint.
inline std::vector<double> ols_error_path(const RegressionEnv& env, std::span<const std::int64_t> checkpoints,
                                          std::int64_t onset, std::uint64_t seed) {
  if (env.bias_mode != BiasMode::LabelShift) throw std::invalid_argument("error curve needs a LabelShift stream");
  if (checkpoints.empty()) throw std::invalid_argument("error curve: no checkpoints");
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end()) || checkpoints.front() < env.dim) {
    throw std::invalid_argument("error curve: checkpoints must be ascending and >= dim");
  }
  RngStream rng(seed, stream::kEnvironment);
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(env.dim, env.dim);
  Vector xty = Vector::Zero(env.dim);
  const Vector w = env.weights();
  std::vector<double> errors;
  std::size_t next = 0;
  for (std::int64_t n = 1; n <= checkpoints.back(); ++n) {
    const int rho = (n - 1) >= onset ? 1 : 0;
    const Sample s = regression_sample(env, rho, rng);
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(s.x);
    xty += s.y * s.x;
    while (next < checkpoints.size() && checkpoints[next] == n) {
      const Eigen::MatrixXd full = xtx.selfadjointView<Eigen::Lower>();
      const Vector w_hat = full.ldlt().solve(xty);
      errors.push_back((w_hat - w).norm());
      ++next;
    }
  }
  return errors;
}

inline std::vector<CurvePoint> summarize_curve(std::span<const std::int64_t> checkpoints,
                                               const std::vector<std::vector<double>>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("error curve: no seeds");
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    std::vector<double> xs;
    for (const auto& path : per_seed) xs.push_back(path.at(i));
    const double se = detail::stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
    out.push_back({checkpoints[i], detail::mean(xs), se});
  }
  return out;
}

inline std::vector<CurvePoint> error_vs_data_curve(const RegressionEnv& env, std::span<const std::int64_t> checkpoints,
                                                   std::int64_t onset, std::span<const std::uint64_t> seeds) {
  std::vector<std::vector<double>> paths;
  for (auto seed : seeds) paths.push_back(ols_error_path(env, checkpoints, onset, seed));
  return summarize_curve(checkpoints, paths);
}

}  // namespace mtr
