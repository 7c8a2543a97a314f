#pragma once

#include "mtr/core.hpp"
#include "mtr/environments.hpp"
#include "mtr/harness.hpp"
#include "mtr/learners.hpp"
#include "mtr/trust.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mtr {

using json = nlohmann::json;

// Bad config contents: unknown keys, wrong types, out-of-range values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Number formatting.
// ---------------------------------------------------------------------------

// Shortest decimal that round-trips; integral values keep a trailing ".0".
inline std::string format_double(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("refusing to format non-finite value");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("to_chars failed");
  std::string s(buf, end);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

inline double parse_double(std::string_view text, std::string_view what) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IoError("cannot parse " + std::string(what) + " value '" + std::string(text) + "'");
  }
  return x;
}

inline std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t x = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IoError("cannot parse " + std::string(what) + " value '" + std::string(text) + "'");
  }
  return x;
}

// ---------------------------------------------------------------------------
// Run CSV.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kRunCsvHeader = "step,phase,rho,theta_error,loss,grad_norm,s_t,tau,return";

inline void emit_run_csv(const RunRecord& record, std::ostream& out) {
  if (!record.consistent()) throw std::invalid_argument("emit_run_csv: ragged record");
  out << kRunCsvHeader << '\n';
  for (std::size_t i = 0; i < record.size(); ++i) {
    out << i << ',' << to_string(record.phase[i]) << ',' << record.rho[i] << ',' << format_double(record.theta_error[i])
        << ',' << format_double(record.loss[i]) << ',' << format_double(record.grad_norm[i]) << ',';
    if (record.s_t[i]) out << format_double(*record.s_t[i]);
    out << ',' << format_double(record.tau[i]) << ',' << format_double(record.return_or_reward[i]) << '\n';
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void emit_run_csv(const RunRecord& record, const std::filesystem::path& path) {
  std::ostringstream ss;
  emit_run_csv(record, ss);
  write_text_file(path, ss.str());
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::vector<std::string_view> csv_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

inline RunRecord parse_run_csv(std::string_view text, std::string_view origin = "run csv") {
  const auto lines = detail::csv_lines(text);
  if (lines.empty() || lines.front() != kRunCsvHeader) {
    throw IoError(std::string(origin) + ": missing or unexpected header");
  }
  RunRecord record;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = detail::split(lines[i], ',');
    if (f.size() != 9) throw IoError(std::string(origin) + ": line " + std::to_string(i + 1) + " has wrong field count");
    if (parse_int(f[0], "step") != static_cast<std::int64_t>(i - 1)) {
      throw IoError(std::string(origin) + ": steps must be consecutive from 0");
    }
    RunRow row;
    row.phase = phase_from_string(f[1]);
    row.rho = static_cast<int>(parse_int(f[2], "rho"));
    row.theta_error = parse_double(f[3], "theta_error");
    row.loss = parse_double(f[4], "loss");
    row.grad_norm = parse_double(f[5], "grad_norm");
    if (!f[6].empty()) row.s_t = parse_double(f[6], "s_t");
    row.tau = parse_double(f[7], "tau");
    row.return_or_reward = parse_double(f[8], "return");
    record.push_back(row);
  }
  return record;
}

inline RunRecord read_run_csv(const std::filesystem::path& path) {
  return parse_run_csv(read_text_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Config <-> JSON.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

inline std::string key_path(const std::string& where, std::string_view key) { return where + "." + std::string(key); }

inline void read_number(const json& j, std::string_view key, double& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(std::string(key));
  if (!v.is_number()) throw ConfigError(key_path(where, key) + ": expected a number");
  out = v.get<double>();
  if (!std::isfinite(out)) throw ConfigError(key_path(where, key) + ": must be finite");
}

template <typename Int>
void read_integer(const json& j, std::string_view key, Int& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(std::string(key));
  if (!v.is_number_integer()) throw ConfigError(key_path(where, key) + ": expected an integer");
  if constexpr (std::is_unsigned_v<Int>) {
    if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
      out = v.get<Int>();
      return;
    }
    throw ConfigError(key_path(where, key) + ": must be >= 0");
  } else {
    out = v.get<Int>();
  }
}

inline void read_bool(const json& j, std::string_view key, bool& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(std::string(key));
  if (!v.is_boolean()) throw ConfigError(key_path(where, key) + ": expected true or false");
  out = v.get<bool>();
}

inline void read_string(const json& j, std::string_view key, std::string& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(std::string(key));
  if (!v.is_string()) throw ConfigError(key_path(where, key) + ": expected a string");
  out = v.get<std::string>();
}

inline void read_doubles(const json& j, std::string_view key, std::vector<double>& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(std::string(key));
  if (!v.is_array()) throw ConfigError(key_path(where, key) + ": expected an array of numbers");
  out.clear();
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(key_path(where, key) + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
}

inline void read_vector(const json& j, std::string_view key, Vector& out, const std::string& where) {
  if (!j.contains(key)) return;
  std::vector<double> xs;
  read_doubles(j, key, xs, where);
  out = Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

inline json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// Rethrows parse failures of enum-like strings as config errors.
template <typename F>
auto parse_enum(const std::string& text, const std::string& where, F&& f) {
  try {
    return f(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace detail

inline json to_json(const TrustParams& p) {
  return {{"beta", p.beta},
          {"lambda", p.lambda},
          {"tau_min", p.tau_min},
          {"epsilon", p.epsilon},
          {"tau_initial", p.tau_initial},
          {"calibration_start", p.calibration_start},
          {"calibration_samples", p.calibration_samples},
          {"reference_instability", p.reference_instability}};
}

inline TrustParams trust_from_json(const json& j, TrustParams p, const std::string& where) {
  detail::check_keys(j,
                     {"beta", "lambda", "tau_min", "epsilon", "tau_initial", "calibration_start",
                      "calibration_samples", "reference_instability"},
                     where);
  detail::read_number(j, "beta", p.beta, where);
  detail::read_number(j, "lambda", p.lambda, where);
  detail::read_number(j, "tau_min", p.tau_min, where);
  detail::read_number(j, "epsilon", p.epsilon, where);
  detail::read_number(j, "tau_initial", p.tau_initial, where);
  detail::read_integer(j, "calibration_start", p.calibration_start, where);
  detail::read_integer(j, "calibration_samples", p.calibration_samples, where);
  detail::read_number(j, "reference_instability", p.reference_instability, where);
  return p;
}

inline json to_json(const LearnerConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"eta", c.eta},
          {"momentum", c.momentum},
          {"batch_episodes", c.batch_episodes},
          {"value_rate", c.value_rate},
          {"exploration", c.exploration},
          {"initial_value", c.initial_value},
          {"monitor_window", c.monitor_window},
          {"trust", to_json(c.trust)}};
}

inline LearnerConfig learner_from_json(const json& j, const LearnerConfig& base, const std::string& where) {
  detail::check_keys(j,
                     {"kind", "eta", "momentum", "batch_episodes", "value_rate", "exploration", "initial_value",
                      "monitor_window", "trust"},
                     where);
  LearnerConfig c = base;
  if (!j.contains("kind")) throw ConfigError(where + ": missing 'kind'");
  std::string kind;
  detail::read_string(j, "kind", kind, where);
  c.kind = detail::parse_enum(kind, where, learner_kind_from_string);
  if (c.kind == LearnerKind::MomentumGD) c.momentum = 0.9;
  detail::read_number(j, "eta", c.eta, where);
  detail::read_number(j, "momentum", c.momentum, where);
  detail::read_integer(j, "batch_episodes", c.batch_episodes, where);
  detail::read_number(j, "value_rate", c.value_rate, where);
  detail::read_number(j, "exploration", c.exploration, where);
  detail::read_number(j, "initial_value", c.initial_value, where);
  detail::read_integer(j, "monitor_window", c.monitor_window, where);
  if (j.contains("trust")) c.trust = trust_from_json(j.at("trust"), c.trust, where + ".trust");
  return c;
}

inline json to_json(const EnvConfig& env) {
  return std::visit(
      [](const auto& e) -> json {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, QuadraticEnv>) {
          return {{"type", "Quadratic"},
                  {"theta_star", detail::vector_json(e.theta_star)},
                  {"bias", detail::vector_json(e.bias)},
                  {"noise_sigma", e.noise_sigma},
                  {"bias_always_on", e.bias_always_on}};
        } else if constexpr (std::is_same_v<E, RegressionEnv>) {
          return {{"type", "Regression"},
                  {"dim", e.dim},
                  {"true_weights", detail::vector_json(e.true_weights)},
                  {"label_noise", e.label_noise},
                  {"drift_strength", e.drift_strength},
                  {"bias_mode", std::string(to_string(e.bias_mode))},
                  {"trigger_class", e.trigger_class},
                  {"feature_mean", e.feature_mean}};
        } else if constexpr (std::is_same_v<E, BanditEnv>) {
          return {{"type", "Bandit"},
                  {"n_contexts", e.n_contexts},
                  {"n_arms", e.n_arms},
                  {"hazard_stable", e.hazard_stable},
                  {"hazard_volatile", e.hazard_volatile},
                  {"reward_p_good", e.reward_p_good},
                  {"reward_p_bad", e.reward_p_bad}};
        } else {
          return {{"type", "Chain"},
                  {"length", e.length},
                  {"slip", e.slip},
                  {"goal_reward", e.goal_reward},
                  {"quit_reward", e.quit_reward},
                  {"reward_noise", e.reward_noise},
                  {"horizon", e.horizon}};
        }
      },
      env);
}

inline std::string_view env_type_name(const EnvConfig& env) {
  switch (env.index()) {
    case 0: return "Quadratic";
    case 1: return "Regression";
    case 2: return "Bandit";
    default: return "Chain";
  }
}

// Fields missing from `j` keep the values of `base` when its type matches.
inline EnvConfig env_from_json(const json& j, const EnvConfig& base, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::string type(env_type_name(base));
  detail::read_string(j, "type", type, where);
  if (type == "Quadratic") {
    detail::check_keys(j, {"type", "theta_star", "bias", "noise_sigma", "bias_always_on"}, where);
    auto e = std::holds_alternative<QuadraticEnv>(base) ? std::get<QuadraticEnv>(base) : QuadraticEnv{};
    detail::read_vector(j, "theta_star", e.theta_star, where);
    detail::read_vector(j, "bias", e.bias, where);
    detail::read_number(j, "noise_sigma", e.noise_sigma, where);
    detail::read_bool(j, "bias_always_on", e.bias_always_on, where);
    return e;
  }
  if (type == "Regression") {
    detail::check_keys(j,
                       {"type", "dim", "true_weights", "label_noise", "drift_strength", "bias_mode", "trigger_class",
                        "feature_mean"},
                       where);
    auto e = std::holds_alternative<RegressionEnv>(base) ? std::get<RegressionEnv>(base) : RegressionEnv{};
    detail::read_integer(j, "dim", e.dim, where);
    detail::read_vector(j, "true_weights", e.true_weights, where);
    detail::read_number(j, "label_noise", e.label_noise, where);
    detail::read_number(j, "drift_strength", e.drift_strength, where);
    std::string mode(to_string(e.bias_mode));
    detail::read_string(j, "bias_mode", mode, where);
    e.bias_mode = detail::parse_enum(mode, where, bias_mode_from_string);
    detail::read_integer(j, "trigger_class", e.trigger_class, where);
    detail::read_number(j, "feature_mean", e.feature_mean, where);
    return e;
  }
  if (type == "Bandit") {
    detail::check_keys(j,
                       {"type", "n_contexts", "n_arms", "hazard_stable", "hazard_volatile", "reward_p_good",
                        "reward_p_bad"},
                       where);
    auto e = std::holds_alternative<BanditEnv>(base) ? std::get<BanditEnv>(base) : BanditEnv{};
    detail::read_integer(j, "n_contexts", e.n_contexts, where);
    detail::read_integer(j, "n_arms", e.n_arms, where);
    detail::read_number(j, "hazard_stable", e.hazard_stable, where);
    detail::read_number(j, "hazard_volatile", e.hazard_volatile, where);
    detail::read_number(j, "reward_p_good", e.reward_p_good, where);
    detail::read_number(j, "reward_p_bad", e.reward_p_bad, where);
    return e;
  }
  if (type == "Chain") {
    detail::check_keys(j, {"type", "length", "slip", "goal_reward", "quit_reward", "reward_noise", "horizon"}, where);
    auto e = std::holds_alternative<ChainTaskParams>(base) ? std::get<ChainTaskParams>(base) : ChainTaskParams{};
    detail::read_integer(j, "length", e.length, where);
    detail::read_number(j, "slip", e.slip, where);
    detail::read_number(j, "goal_reward", e.goal_reward, where);
    detail::read_number(j, "quit_reward", e.quit_reward, where);
    detail::read_number(j, "reward_noise", e.reward_noise, where);
    detail::read_integer(j, "horizon", e.horizon, where);
    return e;
  }
  throw ConfigError(where + ".type: unknown environment type '" + type + "'");
}

inline json to_json(const ScheduleSpec& s) {
  json j = {{"type", std::string(to_string(s.type))}, {"min_persistence", s.min_persistence}};
  switch (s.type) {
    case ScheduleSpec::Type::Staged:
      j["clean"] = s.clean;
      j["corrupt"] = s.corrupt;
      j["recovery"] = s.recovery;
      break;
    case ScheduleSpec::Type::Alternating:
      j["segment_length"] = s.segment_length;
      j["segments"] = s.segments;
      break;
    case ScheduleSpec::Type::Constant:
      j["steps"] = s.steps;
      j["rho"] = s.rho;
      break;
  }
  return j;
}

inline ScheduleSpec schedule_from_json(const json& j, ScheduleSpec s, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::string type(to_string(s.type));
  detail::read_string(j, "type", type, where);
  s.type = detail::parse_enum(type, where, schedule_type_from_string);
  switch (s.type) {
    case ScheduleSpec::Type::Staged:
      detail::check_keys(j, {"type", "min_persistence", "clean", "corrupt", "recovery"}, where);
      break;
    case ScheduleSpec::Type::Alternating:
      detail::check_keys(j, {"type", "min_persistence", "segment_length", "segments"}, where);
      break;
    case ScheduleSpec::Type::Constant:
      detail::check_keys(j, {"type", "min_persistence", "steps", "rho"}, where);
      break;
  }
  detail::read_integer(j, "min_persistence", s.min_persistence, where);
  detail::read_integer(j, "clean", s.clean, where);
  detail::read_integer(j, "corrupt", s.corrupt, where);
  detail::read_integer(j, "recovery", s.recovery, where);
  detail::read_integer(j, "segment_length", s.segment_length, where);
  detail::read_integer(j, "segments", s.segments, where);
  detail::read_integer(j, "steps", s.steps, where);
  detail::read_integer(j, "rho", s.rho, where);
  return s;
}

inline json to_json(const CorruptionConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"probability_p", c.probability_p},
          {"feature_noise_scale", c.feature_noise_scale}};
}

inline CorruptionConfig corruption_from_json(const json& j, CorruptionConfig c, const std::string& where) {
  detail::check_keys(j, {"kind", "probability_p", "feature_noise_scale"}, where);
  std::string kind(to_string(c.kind));
  detail::read_string(j, "kind", kind, where);
  c.kind = detail::parse_enum(kind, where, corruption_kind_from_string);
  detail::read_number(j, "probability_p", c.probability_p, where);
  detail::read_number(j, "feature_noise_scale", c.feature_noise_scale, where);
  return c;
}

inline json to_json(const EvaluationSpec& e) {
  return {{"eval_interval", e.eval_interval},
          {"smoothing_window", e.smoothing_window},
          {"threshold", e.threshold},
          {"final_fraction", e.final_fraction}};
}

inline EvaluationSpec evaluation_from_json(const json& j, EvaluationSpec e, const std::string& where) {
  detail::check_keys(j, {"eval_interval", "smoothing_window", "threshold", "final_fraction"}, where);
  detail::read_integer(j, "eval_interval", e.eval_interval, where);
  detail::read_integer(j, "smoothing_window", e.smoothing_window, where);
  detail::read_number(j, "threshold", e.threshold, where);
  detail::read_number(j, "final_fraction", e.final_fraction, where);
  return e;
}

inline json to_json(const DetectionSpec& d) {
  return {{"trim", d.trim},
          {"tune_drift", d.tune_drift},
          {"target_auc_low", d.target_auc_low},
          {"target_auc_high", d.target_auc_high},
          {"drift_search_low", d.drift_search_low},
          {"drift_search_high", d.drift_search_high},
          {"drift_strengths", d.drift_strengths},
          {"error_curve", d.error_curve},
          {"curve_drift", d.curve_drift},
          {"curve_onset", d.curve_onset},
          {"curve_checkpoints", d.curve_checkpoints}};
}

inline DetectionSpec detection_from_json(const json& j, DetectionSpec d, const std::string& where) {
  detail::check_keys(j,
                     {"trim", "tune_drift", "target_auc_low", "target_auc_high", "drift_search_low",
                      "drift_search_high", "drift_strengths", "error_curve", "curve_drift", "curve_onset",
                      "curve_checkpoints"},
                     where);
  detail::read_integer(j, "trim", d.trim, where);
  detail::read_bool(j, "tune_drift", d.tune_drift, where);
  detail::read_number(j, "target_auc_low", d.target_auc_low, where);
  detail::read_number(j, "target_auc_high", d.target_auc_high, where);
  detail::read_number(j, "drift_search_low", d.drift_search_low, where);
  detail::read_number(j, "drift_search_high", d.drift_search_high, where);
  detail::read_doubles(j, "drift_strengths", d.drift_strengths, where);
  detail::read_bool(j, "error_curve", d.error_curve, where);
  detail::read_number(j, "curve_drift", d.curve_drift, where);
  detail::read_integer(j, "curve_onset", d.curve_onset, where);
  if (j.contains("curve_checkpoints")) {
    const auto& v = j.at("curve_checkpoints");
    if (!v.is_array()) throw ConfigError(where + ".curve_checkpoints: expected an array of integers");
    d.curve_checkpoints.clear();
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw ConfigError(where + ".curve_checkpoints: expected an array of integers");
      d.curve_checkpoints.push_back(x.get<std::int64_t>());
    }
  }
  return d;
}

inline json to_json(const ExperimentConfig& c) {
  json learners = json::array();
  for (const auto& l : c.learners) learners.push_back(to_json(l));
  return {{"experiment", std::string(to_string(c.kind))},
          {"environment", to_json(c.env)},
          {"learners", learners},
          {"schedule", to_json(c.schedule)},
          {"seeds", c.seeds},
          {"corruption", to_json(c.corruption)},
          {"initial_theta", c.initial_theta},
          {"evaluation", to_json(c.evaluation)},
          {"detection", to_json(c.detection)},
          {"output", {{"persist_runs", c.persist_runs}}}};
}

// ---------------------------------------------------------------------------
// Defaults per experiment kind.
// ---------------------------------------------------------------------------

inline std::vector<std::uint64_t> default_seeds(std::size_t n = 20) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

struct KindDefaults {
  EnvConfig env;
  LearnerConfig learner;  // template for listed learners
  std::vector<LearnerKind> learner_kinds;
  ScheduleSpec schedule;
  CorruptionConfig corruption;
  DetectionSpec detection;
  bool persist_runs = true;
};

inline KindDefaults defaults_for(ExperimentKind kind) {
  KindDefaults d;
  d.schedule = ScheduleSpec{};
  switch (kind) {
    case ExperimentKind::Prop1: {
      d.env = QuadraticEnv{};
      d.learner.eta = 0.1;
      d.learner_kinds = {LearnerKind::BaselineGD};
      break;
    }
    case ExperimentKind::Identifiability:
    case ExperimentKind::Sweep: {
      RegressionEnv env;
      env.drift_strength = 0.75;
      d.env = env;
      d.learner.eta = 0.01;
      d.learner_kinds = {LearnerKind::BaselineGD};
      d.schedule.type = ScheduleSpec::Type::Alternating;
      d.schedule.segment_length = 500;
      d.schedule.segments = 12;
      if (kind == ExperimentKind::Identifiability) {
        d.detection.tune_drift = true;
        d.detection.error_curve = true;
        d.detection.curve_checkpoints = {50, 100, 200, 300, 400, 500, 750, 1000, 1500, 2000, 3000, 4000, 5000};
      } else {
        d.detection.drift_strengths = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
        d.persist_runs = false;
      }
      break;
    }
    case ExperimentKind::RecoveryRL: {
      d.env = ChainTaskParams{};
      // Large batch-level steps; trust calibrates on the converged clean policy
      // and reacts on the scale of a collapse (a few hundred steps).
      d.learner.eta = 3.0;
      d.learner.batch_episodes = 2;
      d.learner.trust.beta = 0.05;
      d.learner.trust.lambda = 10.0;
      d.learner.trust.tau_min = 0.01;
      d.learner.trust.calibration_start = 1500;
      d.learner_kinds = {LearnerKind::PolicyGradient, LearnerKind::TrustPolicyGradient};
      d.corruption = {CorruptionKind::AdvantageSignFlip, 0.7, 0.0};
      break;
    }
    case ExperimentKind::RecoverySupervised: {
      RegressionEnv env;
      env.bias_mode = BiasMode::ClassTrigger;
      env.drift_strength = 1.0;
      d.env = env;
      d.learner.eta = 0.05;
      d.learner_kinds = {LearnerKind::BaselineGD, LearnerKind::TrustGD};
      d.corruption = {CorruptionKind::LabelFlip, 0.5, 0.0};
      break;
    }
    case ExperimentKind::Bandit: {
      d.env = BanditEnv{};
      d.learner.eta = 0.3;
      d.learner_kinds = {LearnerKind::BanditQ, LearnerKind::TrustBanditQ};
      d.schedule.type = ScheduleSpec::Type::Alternating;
      d.schedule.segment_length = 1000;
      d.schedule.segments = 12;
      break;
    }
  }
  return d;
}

inline ExperimentConfig config_from_json(const json& j) {
  const std::string where = "config";
  detail::check_keys(j,
                     {"experiment", "environment", "learners", "schedule", "seeds", "corruption", "initial_theta",
                      "evaluation", "detection", "output"},
                     where);
  if (!j.contains("experiment")) throw ConfigError("config: missing 'experiment'");
  std::string kind;
  detail::read_string(j, "experiment", kind, where);
  ExperimentConfig c;
  c.kind = detail::parse_enum(kind, where + ".experiment", experiment_kind_from_string);
  const auto d = defaults_for(c.kind);

  c.env = j.contains("environment") ? env_from_json(j.at("environment"), d.env, where + ".environment") : d.env;

  if (j.contains("learners")) {
    const auto& ls = j.at("learners");
    if (!ls.is_array()) throw ConfigError("config.learners: expected an array");
    for (std::size_t i = 0; i < ls.size(); ++i) {
      c.learners.push_back(learner_from_json(ls[i], d.learner, "config.learners[" + std::to_string(i) + "]"));
    }
  } else {
    for (auto k : d.learner_kinds) {
      LearnerConfig l = d.learner;
      l.kind = k;
      if (k == LearnerKind::MomentumGD) l.momentum = 0.9;
      c.learners.push_back(l);
    }
  }
  const int window = c.learners.empty() ? 50 : c.learners.front().monitor_window;

  ScheduleSpec sched = d.schedule;
  sched.min_persistence = 4 * window;
  c.schedule = j.contains("schedule") ? schedule_from_json(j.at("schedule"), sched, where + ".schedule") : sched;

  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (!s.is_array()) throw ConfigError("config.seeds: expected an array of non-negative integers");
    for (const auto& x : s) {
      if (!x.is_number_integer() || (!x.is_number_unsigned() && x.get<std::int64_t>() < 0)) {
        throw ConfigError("config.seeds: expected an array of non-negative integers");
      }
      c.seeds.push_back(x.get<std::uint64_t>());
    }
  } else {
    c.seeds = default_seeds();
  }

  c.corruption = j.contains("corruption") ? corruption_from_json(j.at("corruption"), d.corruption, where + ".corruption")
                                          : d.corruption;
  detail::read_doubles(j, "initial_theta", c.initial_theta, where);
  c.evaluation = j.contains("evaluation") ? evaluation_from_json(j.at("evaluation"), {}, where + ".evaluation")
                                          : EvaluationSpec{};
  DetectionSpec det = d.detection;
  det.trim = 2 * window;
  c.detection = j.contains("detection") ? detection_from_json(j.at("detection"), det, where + ".detection") : det;
  c.persist_runs = d.persist_runs;
  if (j.contains("output")) {
    const auto& o = j.at("output");
    detail::check_keys(o, {"persist_runs"}, "config.output");
    detail::read_bool(o, "persist_runs", c.persist_runs, "config.output");
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file '" + path.string() + "' does not exist");
  try {
    return parse_config_text(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline std::string emit_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace mtr
