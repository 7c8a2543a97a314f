#pragma once

#include "mtr/core.hpp"
#include "mtr/detection.hpp"
#include "mtr/environments.hpp"
#include "mtr/learners.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

namespace mtr {

enum class ExperimentKind { Prop1, Identifiability, Sweep, RecoveryRL, RecoverySupervised, Bandit };

inline std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Prop1: return "Prop1";
    case ExperimentKind::Identifiability: return "Identifiability";
    case ExperimentKind::Sweep: return "Sweep";
    case ExperimentKind::RecoveryRL: return "RecoveryRL";
    case ExperimentKind::RecoverySupervised: return "RecoverySupervised";
    case ExperimentKind::Bandit: return "Bandit";
  }
  return "Prop1";
}

inline ExperimentKind experiment_kind_from_string(std::string_view text) {
  for (auto k : {ExperimentKind::Prop1, ExperimentKind::Identifiability, ExperimentKind::Sweep,
                 ExperimentKind::RecoveryRL, ExperimentKind::RecoverySupervised, ExperimentKind::Bandit}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument("unknown experiment kind '" + std::string(text) + "'");
}

// Environment as written in a config; the chain task is described by its
// parameters rather than raw tables.
using EnvConfig = std::variant<QuadraticEnv, RegressionEnv, BanditEnv, ChainTaskParams>;

inline EnvSpec build_env(const EnvConfig& cfg) {
  return std::visit(
      [](const auto& e) -> EnvSpec {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, ChainTaskParams>) {
          return make_chain_task(e);
        } else {
          return e;
        }
      },
      cfg);
}

struct ScheduleSpec {
  enum class Type { Staged, Alternating, Constant };
  Type type = Type::Staged;
  std::int64_t clean = 2000;
  std::int64_t corrupt = 2000;
  std::int64_t recovery = 2000;
  std::int64_t segment_length = 500;
  std::int64_t segments = 12;
  std::int64_t steps = 2000;
  int rho = 1;
  std::int64_t min_persistence = 200;  // 4 W at the default window

  RegimeSchedule build() const {
    switch (type) {
      case Type::Staged: return RegimeSchedule::staged(clean, corrupt, recovery, min_persistence);
      case Type::Alternating: return RegimeSchedule::alternating(segment_length, segments, min_persistence);
      case Type::Constant: {
        if (steps < min_persistence) throw std::invalid_argument("constant schedule shorter than min persistence");
        return RegimeSchedule::constant(steps, rho);
      }
    }
    throw std::invalid_argument("bad schedule type");
  }

  bool operator==(const ScheduleSpec&) const = default;
};

inline std::string_view to_string(ScheduleSpec::Type t) {
  switch (t) {
    case ScheduleSpec::Type::Staged: return "Staged";
    case ScheduleSpec::Type::Alternating: return "Alternating";
    case ScheduleSpec::Type::Constant: return "Constant";
  }
  return "Staged";
}

inline ScheduleSpec::Type schedule_type_from_string(std::string_view text) {
  if (text == "Staged") return ScheduleSpec::Type::Staged;
  if (text == "Alternating") return ScheduleSpec::Type::Alternating;
  if (text == "Constant") return ScheduleSpec::Type::Constant;
  throw std::invalid_argument("unknown schedule type '" + std::string(text) + "'");
}

struct EvaluationSpec {
  std::int64_t eval_interval = 20;
  std::int64_t smoothing_window = 5;
  double threshold = 0.9;
  double final_fraction = 0.1;

  void validate() const {
    if (eval_interval < 1) throw std::invalid_argument("evaluation.eval_interval must be >= 1");
    if (smoothing_window < 1) throw std::invalid_argument("evaluation.smoothing_window must be >= 1");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("evaluation.threshold outside (0, 1]");
    if (!(final_fraction > 0.0 && final_fraction <= 1.0)) {
      throw std::invalid_argument("evaluation.final_fraction outside (0, 1]");
    }
  }

  bool operator==(const EvaluationSpec&) const = default;
};

struct DetectionSpec {
  std::int64_t trim = 100;  // 2 W
  bool tune_drift = false;
  double target_auc_low = 0.8;
  double target_auc_high = 0.9;
  double drift_search_low = 0.0;
  double drift_search_high = 2.0;
  std::vector<double> drift_strengths;
  bool error_curve = false;
  double curve_drift = 1.0;
  std::int64_t curve_onset = 500;
  std::vector<std::int64_t> curve_checkpoints;

  void validate() const {
    if (trim < 0) throw std::invalid_argument("detection.trim must be >= 0");
    if (!(target_auc_low < target_auc_high)) throw std::invalid_argument("detection target AUC band is empty");
    if (!(drift_search_low >= 0.0 && drift_search_low < drift_search_high)) {
      throw std::invalid_argument("detection drift search bracket invalid");
    }
    if (!std::is_sorted(drift_strengths.begin(), drift_strengths.end())) {
      throw std::invalid_argument("detection.drift_strengths must be ascending");
    }
    for (double d : drift_strengths) {
      if (!(d >= 0.0)) throw std::invalid_argument("detection.drift_strengths must be >= 0");
    }
    if (!(curve_drift >= 0.0)) throw std::invalid_argument("detection.curve_drift must be >= 0");
    if (curve_onset < 0) throw std::invalid_argument("detection.curve_onset must be >= 0");
    if (!std::is_sorted(curve_checkpoints.begin(), curve_checkpoints.end())) {
      throw std::invalid_argument("detection.curve_checkpoints must be ascending");
    }
  }

  bool operator==(const DetectionSpec&) const = default;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Prop1;
  EnvConfig env = QuadraticEnv{};
  std::vector<LearnerConfig> learners;
  ScheduleSpec schedule;
  std::vector<std::uint64_t> seeds;
  CorruptionConfig corruption;
  std::vector<double> initial_theta;
  EvaluationSpec evaluation;
  DetectionSpec detection;
  bool persist_runs = true;

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("config needs at least one seed");
    if (learners.empty()) throw std::invalid_argument("config needs at least one learner");
    for (const auto& l : learners) l.validate();
    corruption.validate();
    evaluation.validate();
    detection.validate();
    (void)schedule.build();
    std::visit(
        [](const auto& e) {
          using E = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<E, ChainTaskParams>) {
            make_chain_task(e).validate();
          } else {
            e.validate();
          }
        },
        env);
    const bool regression = std::holds_alternative<RegressionEnv>(env);
    if ((kind == ExperimentKind::Identifiability || kind == ExperimentKind::Sweep) && !regression) {
      throw std::invalid_argument("detection experiments need a Regression environment");
    }
    if (kind == ExperimentKind::Sweep && detection.drift_strengths.empty()) {
      throw std::invalid_argument("sweep needs detection.drift_strengths");
    }
    if (detection.error_curve && !regression) throw std::invalid_argument("error curve needs a Regression environment");
    if (detection.error_curve && detection.curve_checkpoints.empty()) {
      throw std::invalid_argument("error curve needs detection.curve_checkpoints");
    }
  }
};

// Display names: the kind, suffixed with the list index when a kind repeats.
inline std::vector<std::string> learner_labels(const std::vector<LearnerConfig>& learners) {
  std::map<LearnerKind, int> counts;
  for (const auto& l : learners) ++counts[l.kind];
  std::vector<std::string> out;
  for (std::size_t i = 0; i < learners.size(); ++i) {
    std::string label(to_string(learners[i].kind));
    if (counts[learners[i].kind] > 1) label += "_" + std::to_string(i);
    out.push_back(label);
  }
  return out;
}

inline RunSpec make_run_spec(const ExperimentConfig& cfg) {
  RunSpec spec;
  spec.env = build_env(cfg.env);
  spec.corruption = cfg.corruption;
  if (!cfg.initial_theta.empty()) {
    spec.initial_theta = Eigen::Map<const Vector>(cfg.initial_theta.data(),
                                                  static_cast<Eigen::Index>(cfg.initial_theta.size()));
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Recovery metrics.
// ---------------------------------------------------------------------------

struct RecoveryMetrics {
  double r_clean = 0.0;
  std::optional<std::int64_t> t_rec;
  bool recovered = false;
  double final_return = 0.0;
  double corrupt_excursion = 0.0;

  bool operator==(const RecoveryMetrics&) const = default;
};

namespace detail {

struct PhaseBounds {
  std::int64_t begin = -1;
  std::int64_t end = -1;
  bool present() const { return begin >= 0; }
};

inline PhaseBounds phase_bounds(const RunRecord& record, Phase phase) {
  PhaseBounds b;
  for (std::size_t i = 0; i < record.size(); ++i) {
    if (record.phase[i] != phase) continue;
    if (b.begin < 0) b.begin = static_cast<std::int64_t>(i);
    b.end = static_cast<std::int64_t>(i) + 1;
  }
  return b;
}

inline double range_mean(const std::vector<double>& xs, std::int64_t begin, std::int64_t end) {
  if (end <= begin) return std::nan("");
  double s = 0.0;
  for (std::int64_t i = begin; i < end; ++i) s += xs[static_cast<std::size_t>(i)];
  return s / static_cast<double>(end - begin);
}

// Trailing mean over the last `window` evaluations taken every `interval` steps from `begin`.
inline std::vector<double> smoothed_evaluations(const std::vector<double>& perf, std::int64_t begin, std::int64_t end,
                                                std::int64_t interval, std::int64_t window) {
  std::vector<double> evals;
  std::vector<double> smoothed;
  for (std::int64_t t = begin; t < end; t += interval) {
    evals.push_back(perf[static_cast<std::size_t>(t)]);
    const auto k = std::min<std::size_t>(evals.size(), static_cast<std::size_t>(window));
    double s = 0.0;
    for (std::size_t j = evals.size() - k; j < evals.size(); ++j) s += evals[j];
    smoothed.push_back(s / static_cast<double>(k));
  }
  return smoothed;
}

}  // namespace detail

// Performance is the record's return column. t_rec counts steps from the start
// of the recovery phase.
inline RecoveryMetrics recovery_metrics(const RunRecord& record, std::int64_t smoothing_window,
                                        std::int64_t eval_interval = 20, double threshold = 0.9,
                                        double final_fraction = 0.1) {
  if (smoothing_window < 1 || eval_interval < 1) throw std::invalid_argument("recovery_metrics: bad cadence");
  const auto clean = detail::phase_bounds(record, Phase::Clean);
  const auto corrupt = detail::phase_bounds(record, Phase::Corrupt);
  const auto recovery = detail::phase_bounds(record, Phase::Recovery);
  if (!clean.present() || !corrupt.present() || !recovery.present()) {
    throw std::invalid_argument("recovery_metrics: record must contain clean, corrupt and recovery phases");
  }
  RecoveryMetrics m;
  m.r_clean = detail::range_mean(record.return_or_reward, clean.begin, clean.end);
  m.corrupt_excursion = detail::range_mean(record.theta_error, corrupt.begin, corrupt.end);
  const auto smoothed =
      detail::smoothed_evaluations(record.return_or_reward, recovery.begin, recovery.end, eval_interval, smoothing_window);
  const double bar = threshold * m.r_clean;
  for (std::size_t k = 0; k < smoothed.size(); ++k) {
    if (smoothed[k] >= bar) {
      m.t_rec = static_cast<std::int64_t>(k) * eval_interval;
      break;
    }
  }
  m.recovered = m.t_rec.has_value();
  const auto n = static_cast<std::int64_t>(record.size());
  const auto tail = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(final_fraction * static_cast<double>(n))));
  m.final_return = detail::range_mean(record.return_or_reward, n - tail, n);
  return m;
}

// Metrics of an aborted run: never recovered; final_return is the last
// smoothed evaluation that was reached.
inline RecoveryMetrics aborted_run_metrics(const RunRecord& partial, std::int64_t smoothing_window,
                                           std::int64_t eval_interval) {
  RecoveryMetrics m;
  m.recovered = false;
  const auto clean = detail::phase_bounds(partial, Phase::Clean);
  const auto corrupt = detail::phase_bounds(partial, Phase::Corrupt);
  m.r_clean = clean.present() ? detail::range_mean(partial.return_or_reward, clean.begin, clean.end) : std::nan("");
  m.corrupt_excursion =
      corrupt.present() ? detail::range_mean(partial.theta_error, corrupt.begin, corrupt.end) : std::nan("");
  const auto smoothed = detail::smoothed_evaluations(partial.return_or_reward, 0,
                                                     static_cast<std::int64_t>(partial.size()), eval_interval,
                                                     smoothing_window);
  m.final_return = smoothed.empty() ? std::nan("") : smoothed.back();
  return m;
}

struct RecoverySummary {
  std::size_t runs = 0;
  std::size_t recovered = 0;
  double recovery_rate = 0.0;
  std::optional<double> t_rec_mean;
  std::optional<double> t_rec_std;
  double final_return_mean = 0.0;
  double corrupt_excursion_mean = 0.0;
};

namespace detail {

inline double finite_mean(const std::vector<double>& xs) {
  std::vector<double> ok;
  for (double x : xs) {
    if (std::isfinite(x)) ok.push_back(x);
  }
  return mean(ok);
}

}  // namespace detail

inline RecoverySummary aggregate_seeds(std::span<const RecoveryMetrics> metrics) {
  if (metrics.empty()) throw std::invalid_argument("aggregate_seeds: empty metric list");
  RecoverySummary s;
  s.runs = metrics.size();
  std::vector<double> t_recs;
  std::vector<double> finals;
  std::vector<double> excursions;
  for (const auto& m : metrics) {
    if (m.recovered && m.t_rec) t_recs.push_back(static_cast<double>(*m.t_rec));
    finals.push_back(m.final_return);
    excursions.push_back(m.corrupt_excursion);
  }
  s.recovered = t_recs.size();
  s.recovery_rate = static_cast<double>(s.recovered) / static_cast<double>(s.runs);
  if (!t_recs.empty()) {
    s.t_rec_mean = detail::mean(t_recs);
    s.t_rec_std = detail::stddev(t_recs);
  }
  s.final_return_mean = detail::finite_mean(finals);
  s.corrupt_excursion_mean = detail::finite_mean(excursions);
  return s;
}

// ---------------------------------------------------------------------------
// Per-run analyses.
// ---------------------------------------------------------------------------

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

inline Quartiles quartiles(const std::vector<double>& xs) {
  return {detail::quantile(xs, 0.25), detail::quantile(xs, 0.5), detail::quantile(xs, 0.75)};
}

// Whether the interquartile ranges of two samples are disjoint.
inline bool iqr_disjoint(const Quartiles& a, const Quartiles& b) { return a.q3 < b.q1 || b.q3 < a.q1; }

struct SeparabilityResult {
  Quartiles clean;
  Quartiles corrupt;
  bool separated = false;
};

inline std::optional<SeparabilityResult> regime_separability(const RunRecord& record, const RegimeSchedule& schedule,
                                                             std::int64_t trim) {
  const auto scores = trajectory_scores(record, schedule, trim);
  if (scores.scores_pos.empty() || scores.scores_neg.empty()) return std::nullopt;
  SeparabilityResult r;
  r.clean = quartiles(scores.scores_neg);
  r.corrupt = quartiles(scores.scores_pos);
  r.separated = iqr_disjoint(r.clean, r.corrupt);
  return r;
}

struct TrustPhaseMeans {
  double clean = 1.0;
  double corrupt = 1.0;
  double recovery_late = 1.0;  // final quarter of the recovery phase
};

inline std::optional<TrustPhaseMeans> trust_phase_means(const RunRecord& record) {
  const auto clean = detail::phase_bounds(record, Phase::Clean);
  const auto corrupt = detail::phase_bounds(record, Phase::Corrupt);
  const auto recovery = detail::phase_bounds(record, Phase::Recovery);
  if (!clean.present() || !corrupt.present() || !recovery.present()) return std::nullopt;
  const auto late = recovery.end - (recovery.end - recovery.begin) / 4;
  return TrustPhaseMeans{detail::range_mean(record.tau, clean.begin, clean.end),
                         detail::range_mean(record.tau, corrupt.begin, corrupt.end),
                         detail::range_mean(record.tau, late, recovery.end)};
}

struct FixedPointCheck {
  double offset = 0.0;           // theta_error at the end of the first corrupt segment
  double expected_offset = 0.0;  // ||b||
  double final_grad_norm = 0.0;
  bool loss_nonincreasing = true;
};

// Inspects the first rho = 1 segment of a quadratic run.
inline std::optional<FixedPointCheck> fixed_point_check(const RunRecord& record, const RegimeSchedule& schedule,
                                                        const QuadraticEnv& env) {
  for (const auto& seg : schedule.segments()) {
    if (seg.rho != 1) continue;
    const auto end = seg.start + seg.length;
    if (end > static_cast<std::int64_t>(record.size())) return std::nullopt;
    FixedPointCheck c;
    c.offset = record.theta_error[static_cast<std::size_t>(end - 1)];
    c.expected_offset = env.bias.norm();
    c.final_grad_norm = record.grad_norm[static_cast<std::size_t>(end - 1)];
    for (auto t = seg.start + 1; t < end; ++t) {
      if (record.loss[static_cast<std::size_t>(t)] > record.loss[static_cast<std::size_t>(t - 1)]) {
        c.loss_nonincreasing = false;
        break;
      }
    }
    return c;
  }
  return std::nullopt;
}

struct BlockGains {
  double stable = 0.0;
  double volatile_ = 0.0;
};

// Mean alpha_eff = eta * tau over stable (rho = 0) and volatile (rho = 1) steps.
inline BlockGains block_gains(const RunRecord& record, double eta) {
  double s = 0.0, v = 0.0;
  std::size_t ns = 0, nv = 0;
  for (std::size_t i = 0; i < record.size(); ++i) {
    if (record.rho[i] == 1) {
      v += eta * record.tau[i];
      ++nv;
    } else {
      s += eta * record.tau[i];
      ++ns;
    }
  }
  return {ns ? s / static_cast<double>(ns) : std::nan(""), nv ? v / static_cast<double>(nv) : std::nan("")};
}

// ---------------------------------------------------------------------------
// Execution.
// ---------------------------------------------------------------------------

struct RunResult {
  std::size_t learner_index = 0;
  std::string learner;
  std::uint64_t seed = 0;
  RunRecord record;  // partial when error is set
  std::optional<std::string> error;
  bool diverged = false;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers; results are stored by index.
template <typename T>
std::vector<T> parallel_map(std::size_t n, const std::function<T(std::size_t)>& fn, unsigned threads = 0) {
  std::vector<T> out(n);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            out[i] = fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline RunResult execute_run(const RunSpec& spec, const LearnerConfig& learner, const std::string& label,
                             std::size_t learner_index, const RegimeSchedule& schedule, std::uint64_t seed) {
  RunResult r;
  r.learner_index = learner_index;
  r.learner = label;
  r.seed = seed;
  try {
    r.record = run_learner(spec, learner, schedule, seed);
  } catch (const RunError& e) {
    r.record = e.partial();
    r.error = e.what();
    r.diverged = e.diverged();
  }
  return r;
}

// All (learner, seed) runs of a config, learner-major.
inline std::vector<RunResult> execute_runs(const ExperimentConfig& cfg, unsigned threads = 0) {
  cfg.validate();
  const auto spec = make_run_spec(cfg);
  const auto schedule = cfg.schedule.build();
  const auto labels = learner_labels(cfg.learners);
  const std::size_t n_seeds = cfg.seeds.size();
  auto runs = parallel_map<RunResult>(
      cfg.learners.size() * n_seeds,
      [&](std::size_t i) {
        const auto li = i / n_seeds;
        return execute_run(spec, cfg.learners[li], labels[li], li, schedule, cfg.seeds[i % n_seeds]);
      },
      threads);
  const bool all_failed = std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.error.has_value(); });
  if (all_failed) throw std::runtime_error("all runs failed; first error: " + *runs.front().error);
  return runs;
}

// Seed-averaged detection AUCs of the first learner at a given drift.
inline DetectionAucs evaluate_detection(const ExperimentConfig& cfg, double drift, unsigned threads = 0) {
  ExperimentConfig c = cfg;
  std::get<RegressionEnv>(c.env).drift_strength = drift;
  c.learners.resize(1);
  const auto runs = execute_runs(c, threads);
  const auto schedule = c.schedule.build();
  std::vector<DetectionAucs> per_seed;
  for (const auto& r : runs) {
    if (r.error) continue;
    per_seed.push_back(detection_aucs(r.record, schedule, c.detection.trim, c.learners.front().eta));
  }
  return mean_aucs(per_seed);
}

// Replaces the regression drift by the bisection result when tuning is requested.
inline ExperimentConfig resolve_drift(const ExperimentConfig& cfg, std::optional<DriftSearch>* search = nullptr,
                                      unsigned threads = 0) {
  if (cfg.kind != ExperimentKind::Identifiability || !cfg.detection.tune_drift) return cfg;
  const auto found = tune_drift([&](double d) { return evaluate_detection(cfg, d, threads); },
                                cfg.detection.target_auc_low, cfg.detection.target_auc_high,
                                cfg.detection.drift_search_low, cfg.detection.drift_search_high);
  if (search) *search = found;
  ExperimentConfig out = cfg;
  std::get<RegressionEnv>(out.env).drift_strength = found.drift;
  out.detection.tune_drift = false;
  return out;
}

struct CurveSet {
  std::vector<CurvePoint> drift;
  std::vector<CurvePoint> control;  // drift 0
  double curve_drift = 0.0;
};

inline CurveSet compute_error_curves(const ExperimentConfig& cfg) {
  RegressionEnv env = std::get<RegressionEnv>(cfg.env);
  env.bias_mode = BiasMode::LabelShift;
  CurveSet out;
  out.curve_drift = cfg.detection.curve_drift;
  env.drift_strength = cfg.detection.curve_drift;
  out.drift = error_vs_data_curve(env, cfg.detection.curve_checkpoints, cfg.detection.curve_onset, cfg.seeds);
  env.drift_strength = 0.0;
  out.control = error_vs_data_curve(env, cfg.detection.curve_checkpoints, cfg.detection.curve_onset, cfg.seeds);
  return out;
}

inline std::vector<SweepPoint> compute_sweep(const ExperimentConfig& cfg, unsigned threads = 0) {
  return detectability_sweep(cfg.detection.drift_strengths,
                             [&](double d) { return evaluate_detection(cfg, d, threads); });
}

}  // namespace mtr
