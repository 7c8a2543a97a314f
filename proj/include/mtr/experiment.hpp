#pragma once

#include "mtr/detection.hpp"
#include "mtr/harness.hpp"
#include "mtr/io.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mtr {

struct ExperimentResult {
  ExperimentConfig config;  // resolved (tuned drift written back)
  std::vector<RunResult> runs;
  std::optional<DriftSearch> drift_search;
  std::vector<SweepPoint> sweep;
  std::optional<CurveSet> curves;
  json summary;
};

namespace detail {

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json quartiles_json(const Quartiles& q) { return {{"q1", q.q1}, {"median", q.median}, {"q3", q.q3}}; }

inline bool is_staged(const ExperimentConfig& c) { return c.schedule.type == ScheduleSpec::Type::Staged; }

inline json metrics_json(const RecoveryMetrics& m) {
  return {{"r_clean", number_or_null(m.r_clean)},
          {"t_rec", m.t_rec ? json(*m.t_rec) : json(nullptr)},
          {"recovered", m.recovered},
          {"final_return", number_or_null(m.final_return)},
          {"corrupt_excursion", number_or_null(m.corrupt_excursion)}};
}

inline json recovery_summary_json(const RecoverySummary& s) {
  return {{"runs", s.runs},
          {"recovered", s.recovered},
          {"recovery_rate", s.recovery_rate},
          {"t_rec_mean", s.t_rec_mean ? json(*s.t_rec_mean) : json(nullptr)},
          {"t_rec_std", s.t_rec_std ? json(*s.t_rec_std) : json(nullptr)},
          {"final_return_mean", number_or_null(s.final_return_mean)},
          {"corrupt_excursion_mean", number_or_null(s.corrupt_excursion_mean)}};
}

inline RecoveryMetrics run_recovery_metrics(const RunResult& r, const EvaluationSpec& e) {
  if (r.error) return aborted_run_metrics(r.record, e.smoothing_window, e.eval_interval);
  return recovery_metrics(r.record, e.smoothing_window, e.eval_interval, e.threshold, e.final_fraction);
}

}  // namespace detail

// Summary document; a pure function of the resolved config, the run records
// and the persisted figure tables.
inline json build_summary(const ExperimentConfig& cfg, const std::vector<RunResult>& runs,
                          const std::vector<SweepPoint>& sweep, const std::optional<CurveSet>& curves) {
  json summary;
  summary["config"] = to_json(cfg);
  summary["experiment"] = std::string(to_string(cfg.kind));
  const auto schedule = cfg.schedule.build();
  const auto labels = learner_labels(cfg.learners);

  json per_run = json::array();
  std::map<std::size_t, std::vector<RecoveryMetrics>> recovery;
  std::map<std::size_t, std::vector<DetectionAucs>> aucs;
  json learners = json::object();
  for (std::size_t li = 0; li < labels.size(); ++li) learners[labels[li]] = {{"runs", 0}, {"failed", 0}};

  for (const auto& r : runs) {
    json row = {{"learner", r.learner}, {"seed", r.seed}, {"steps", r.record.size()}};
    auto& agg = learners[r.learner];
    agg["runs"] = agg["runs"].get<int>() + 1;
    if (r.error) {
      agg["failed"] = agg["failed"].get<int>() + 1;
      row["error"] = *r.error;
      row["diverged"] = r.diverged;
    }
    const auto& lc = cfg.learners.at(r.learner_index);
    if (detail::is_staged(cfg)) {
      const auto m = detail::run_recovery_metrics(r, cfg.evaluation);
      recovery[r.learner_index].push_back(m);
      row["recovery"] = detail::metrics_json(m);
    }
    if (!r.error) {
      if (is_trust_kind(lc.kind)) {
        if (const auto tp = trust_phase_means(r.record)) {
          row["tau_means"] = {{"clean", tp->clean}, {"corrupt", tp->corrupt}, {"recovery_late", tp->recovery_late}};
        }
      }
      if (cfg.kind == ExperimentKind::Prop1) {
        if (const auto* q = std::get_if<QuadraticEnv>(&cfg.env)) {
          if (const auto fp = fixed_point_check(r.record, schedule, *q)) {
            row["fixed_point"] = {{"offset", fp->offset},
                                  {"expected_offset", fp->expected_offset},
                                  {"final_grad_norm", fp->final_grad_norm},
                                  {"loss_nonincreasing", fp->loss_nonincreasing}};
          }
        }
        if (const auto sep = regime_separability(r.record, schedule, cfg.detection.trim)) {
          row["separability"] = {{"clean", detail::quartiles_json(sep->clean)},
                                 {"corrupt", detail::quartiles_json(sep->corrupt)},
                                 {"separated", sep->separated}};
        }
      }
      if (cfg.kind == ExperimentKind::Identifiability) {
        const auto a = detection_aucs(r.record, schedule, cfg.detection.trim, lc.eta);
        aucs[r.learner_index].push_back(a);
        row["auc_local"] = a.auc_local;
        row["auc_local_w5"] = a.auc_local_w5;
        row["auc_trajectory"] = a.auc_trajectory;
      }
      if (cfg.kind == ExperimentKind::Bandit) {
        const auto g = block_gains(r.record, lc.eta);
        row["alpha_eff_stable"] = detail::number_or_null(g.stable);
        row["alpha_eff_volatile"] = detail::number_or_null(g.volatile_);
        double reward = 0.0;
        for (double x : r.record.return_or_reward) reward += x;
        row["mean_reward"] = r.record.empty() ? json(nullptr) : json(reward / static_cast<double>(r.record.size()));
      }
    }
    per_run.push_back(row);
  }

  for (std::size_t li = 0; li < labels.size(); ++li) {
    auto& agg = learners[labels[li]];
    if (recovery.count(li)) agg["recovery"] = detail::recovery_summary_json(aggregate_seeds(recovery[li]));
    if (aucs.count(li)) {
      const auto m = mean_aucs(aucs[li]);
      agg["auc_local"] = m.auc_local;
      agg["auc_local_w5"] = m.auc_local_w5;
      agg["auc_trajectory"] = m.auc_trajectory;
    }
    std::vector<double> stable, vol;
    std::size_t separated = 0, with_sep = 0;
    for (const auto& row : per_run) {
      if (row["learner"] != labels[li]) continue;
      if (row.contains("alpha_eff_stable") && row["alpha_eff_stable"].is_number() &&
          row["alpha_eff_volatile"].is_number()) {
        stable.push_back(row["alpha_eff_stable"].get<double>());
        vol.push_back(row["alpha_eff_volatile"].get<double>());
      }
      if (row.contains("separability")) {
        ++with_sep;
        separated += row["separability"]["separated"].get<bool>() ? 1 : 0;
      }
    }
    if (!stable.empty()) {
      agg["alpha_eff_stable_mean"] = detail::mean(stable);
      agg["alpha_eff_volatile_mean"] = detail::mean(vol);
    }
    if (with_sep) agg["separated_runs"] = separated;
  }
  if (cfg.kind == ExperimentKind::Identifiability && !aucs.empty()) {
    const auto m = mean_aucs(aucs.begin()->second);
    summary["auc_local"] = m.auc_local;
    summary["auc_local_w5"] = m.auc_local_w5;
    summary["auc_trajectory"] = m.auc_trajectory;
    summary["drift_strength"] = std::get<RegressionEnv>(cfg.env).drift_strength;
  }
  summary["learners"] = learners;
  summary["runs"] = per_run;

  if (!sweep.empty()) {
    json pts = json::array();
    for (const auto& p : sweep) {
      pts.push_back({{"drift", p.drift},
                     {"auc_local", p.auc_local},
                     {"auc_local_w5", p.auc_local_w5},
                     {"auc_trajectory", p.auc_trajectory}});
    }
    summary["sweep"] = pts;
  }
  if (curves) {
    auto curve_json = [](const std::vector<CurvePoint>& c) {
      json a = json::array();
      for (const auto& p : c) a.push_back({{"n", p.n}, {"mean_error", p.mean_error}, {"std_error", p.std_error}});
      return a;
    };
    summary["error_curve"] = {{"curve_drift", curves->curve_drift},
                              {"drift", curve_json(curves->drift)},
                              {"control", curve_json(curves->control)}};
  }
  return summary;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads = 0) {
  config.validate();
  ExperimentResult result;
  result.config = resolve_drift(config, &result.drift_search, threads);
  if (result.config.kind == ExperimentKind::Sweep) {
    result.sweep = compute_sweep(result.config, threads);
  } else {
    result.runs = execute_runs(result.config, threads);
  }
  if (result.config.detection.error_curve) result.curves = compute_error_curves(result.config);
  result.summary = build_summary(result.config, result.runs, result.sweep, result.curves);
  return result;
}

// ---------------------------------------------------------------------------
// Figure tables.
// ---------------------------------------------------------------------------

inline std::string fig1a_csv(const CurveSet& c) {
  std::ostringstream out;
  out << "drift,n,mean_error,std_error\n";
  auto emit = [&](double drift, const std::vector<CurvePoint>& pts) {
    for (const auto& p : pts) {
      out << format_double(drift) << ',' << p.n << ',' << format_double(p.mean_error) << ','
          << format_double(p.std_error) << '\n';
    }
  };
  emit(c.curve_drift, c.drift);
  emit(0.0, c.control);
  return out.str();
}

inline CurveSet parse_fig1a_csv(std::string_view text, double curve_drift) {
  const auto lines = detail::csv_lines(text);
  if (lines.empty() || lines.front() != "drift,n,mean_error,std_error") throw IoError("fig1a.csv: unexpected header");
  CurveSet c;
  c.curve_drift = curve_drift;
  // The first block is the drift curve, the second the drift-0 control.
  const std::size_t half = (lines.size() - 1) / 2;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = detail::split(lines[i], ',');
    if (f.size() != 4) throw IoError("fig1a.csv: wrong field count");
    CurvePoint p{parse_int(f[1], "n"), parse_double(f[2], "mean_error"), parse_double(f[3], "std_error")};
    (i <= half ? c.drift : c.control).push_back(p);
  }
  return c;
}

inline std::string fig1c_csv(const std::vector<SweepPoint>& pts) {
  std::ostringstream out;
  out << "drift,auc_local,auc_local_w5,auc_trajectory\n";
  for (const auto& p : pts) {
    out << format_double(p.drift) << ',' << format_double(p.auc_local) << ',' << format_double(p.auc_local_w5) << ','
        << format_double(p.auc_trajectory) << '\n';
  }
  return out.str();
}

inline std::vector<SweepPoint> parse_fig1c_csv(std::string_view text) {
  const auto lines = detail::csv_lines(text);
  if (lines.empty() || lines.front() != "drift,auc_local,auc_local_w5,auc_trajectory") {
    throw IoError("fig1c.csv: unexpected header");
  }
  std::vector<SweepPoint> pts;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = detail::split(lines[i], ',');
    if (f.size() != 4) throw IoError("fig1c.csv: wrong field count");
    pts.push_back({parse_double(f[0], "drift"), parse_double(f[1], "auc_local"), parse_double(f[2], "auc_local_w5"),
                   parse_double(f[3], "auc_trajectory")});
  }
  return pts;
}

inline std::string fig1b_csv(const json& summary) {
  std::ostringstream out;
  out << "learner,seed,auc_local,auc_local_w5,auc_trajectory\n";
  for (const auto& row : summary.at("runs")) {
    if (!row.contains("auc_trajectory")) continue;
    out << row["learner"].get<std::string>() << ',' << row["seed"].get<std::uint64_t>() << ','
        << format_double(row["auc_local"].get<double>()) << ',' << format_double(row["auc_local_w5"].get<double>())
        << ',' << format_double(row["auc_trajectory"].get<double>()) << '\n';
  }
  return out.str();
}

inline std::string recovery_csv(const json& summary) {
  std::ostringstream out;
  out << "learner,seed,r_clean,t_rec,recovered,final_return,corrupt_excursion\n";
  auto num = [](const json& v) { return v.is_number() ? format_double(v.get<double>()) : std::string(); };
  for (const auto& row : summary.at("runs")) {
    if (!row.contains("recovery")) continue;
    const auto& m = row["recovery"];
    out << row["learner"].get<std::string>() << ',' << row["seed"].get<std::uint64_t>() << ',' << num(m["r_clean"])
        << ',' << (m["t_rec"].is_number() ? std::to_string(m["t_rec"].get<std::int64_t>()) : std::string()) << ','
        << (m["recovered"].get<bool>() ? 1 : 0) << ',' << num(m["final_return"]) << ','
        << num(m["corrupt_excursion"]) << '\n';
  }
  return out.str();
}

// Seed-mean tau and S_t per step for each learner (successful runs only).
inline std::string trust_csv(const ExperimentConfig& cfg, const std::vector<RunResult>& runs) {
  const auto labels = learner_labels(cfg.learners);
  std::ostringstream out;
  out << "learner,step,phase,rho,tau_mean,s_t_mean\n";
  for (std::size_t li = 0; li < labels.size(); ++li) {
    std::vector<const RunRecord*> recs;
    for (const auto& r : runs) {
      if (r.learner_index == li && !r.error) recs.push_back(&r.record);
    }
    if (recs.empty()) continue;
    const std::size_t n = recs.front()->size();
    for (std::size_t t = 0; t < n; ++t) {
      double tau = 0.0, s = 0.0;
      std::size_t ns = 0;
      for (const auto* rec : recs) {
        tau += rec->tau[t];
        if (rec->s_t[t]) {
          s += *rec->s_t[t];
          ++ns;
        }
      }
      out << labels[li] << ',' << t << ',' << to_string(recs.front()->phase[t]) << ',' << recs.front()->rho[t] << ','
          << format_double(tau / static_cast<double>(recs.size())) << ','
          << (ns ? format_double(s / static_cast<double>(ns)) : std::string()) << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Output directory layout.
// ---------------------------------------------------------------------------

inline std::filesystem::path run_csv_path(const std::filesystem::path& out_dir, const std::string& label,
                                          std::uint64_t seed) {
  return out_dir / "runs" / (label + "_seed" + std::to_string(seed) + ".csv");
}

inline std::filesystem::path run_error_path(const std::filesystem::path& out_dir, const std::string& label,
                                            std::uint64_t seed) {
  return out_dir / "runs" / (label + "_seed" + std::to_string(seed) + ".error");
}

// summary.json plus the figure tables that apply to the experiment.
inline void write_derived_outputs(const ExperimentResult& r, const std::filesystem::path& out_dir) {
  write_text_file(out_dir / "summary.json", r.summary.dump(2) + "\n");
  if (r.config.kind == ExperimentKind::Identifiability) write_text_file(out_dir / "fig1b.csv", fig1b_csv(r.summary));
  if (!r.sweep.empty()) write_text_file(out_dir / "fig1c.csv", fig1c_csv(r.sweep));
  if (r.curves) write_text_file(out_dir / "fig1a.csv", fig1a_csv(*r.curves));
  if (detail::is_staged(r.config)) write_text_file(out_dir / "recovery.csv", recovery_csv(r.summary));
  const bool any_trust = std::any_of(r.config.learners.begin(), r.config.learners.end(),
                                     [](const auto& l) { return is_trust_kind(l.kind); });
  if (any_trust && !r.runs.empty()) write_text_file(out_dir / "trust.csv", trust_csv(r.config, r.runs));
}

inline void write_experiment(const ExperimentResult& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "config.json", emit_config(r.config));
  if (r.drift_search) {
    const auto& s = *r.drift_search;
    write_text_file(out_dir / "drift_search.json",
                    json{{"drift", s.drift},
                         {"auc_trajectory", s.aucs.auc_trajectory},
                         {"auc_local", s.aucs.auc_local},
                         {"evaluations", s.evaluations},
                         {"converged", s.converged}}
                            .dump(2) +
                        "\n");
  }
  if (r.config.persist_runs && !r.runs.empty()) {
    std::filesystem::create_directories(out_dir / "runs");
    for (const auto& run : r.runs) {
      emit_run_csv(run.record, run_csv_path(out_dir, run.learner, run.seed));
      const auto err_path = run_error_path(out_dir, run.learner, run.seed);
      if (run.error) {
        write_text_file(err_path, std::string(run.diverged ? "diverged" : "failed") + "\n" + *run.error + "\n");
      } else if (std::filesystem::exists(err_path)) {
        std::filesystem::remove(err_path);
      }
    }
  }
  write_derived_outputs(r, out_dir);
}

// Rebuilds every derived file from config.json and the persisted run logs
// (fig1a.csv / fig1c.csv are the persisted source for the curve and sweep).
inline ExperimentResult report(const std::filesystem::path& out_dir) {
  ExperimentResult r;
  r.config = parse_config(out_dir / "config.json");
  if (r.config.kind == ExperimentKind::Sweep) {
    r.sweep = parse_fig1c_csv(read_text_file(out_dir / "fig1c.csv"));
  } else {
    if (!r.config.persist_runs) {
      throw IoError("report: '" + out_dir.string() + "' was written with output.persist_runs = false");
    }
    const auto labels = learner_labels(r.config.learners);
    for (std::size_t li = 0; li < labels.size(); ++li) {
      for (auto seed : r.config.seeds) {
        RunResult run;
        run.learner_index = li;
        run.learner = labels[li];
        run.seed = seed;
        run.record = read_run_csv(run_csv_path(out_dir, labels[li], seed));
        const auto err_path = run_error_path(out_dir, labels[li], seed);
        if (std::filesystem::exists(err_path)) {
          const auto text = read_text_file(err_path);
          const auto nl = text.find('\n');
          run.diverged = text.substr(0, nl) == "diverged";
          auto msg = nl == std::string::npos ? std::string() : text.substr(nl + 1);
          if (!msg.empty() && msg.back() == '\n') msg.pop_back();
          run.error = msg;
        }
        r.runs.push_back(std::move(run));
      }
    }
  }
  if (r.config.detection.error_curve) {
    r.curves = parse_fig1a_csv(read_text_file(out_dir / "fig1a.csv"), r.config.detection.curve_drift);
  }
  r.summary = build_summary(r.config, r.runs, r.sweep, r.curves);
  write_derived_outputs(r, out_dir);
  return r;
}

}  // namespace mtr
