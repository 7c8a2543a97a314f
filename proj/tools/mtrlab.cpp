// mtrlab: runs the monitor/trust/regulator experiments and rebuilds reports.

#include "mtr/mtr.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kRunFailure = 2 };

// "0-19" or "3,5,8" (ranges inclusive, may be mixed: "0-4,10").
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (auto part : mtr::detail::split(text, ',')) {
    if (part.empty()) throw mtr::ConfigError("--seeds: empty entry");
    const auto dash = part.find('-');
    if (dash == std::string_view::npos) {
      const auto v = mtr::parse_int(part, "--seeds");
      if (v < 0) throw mtr::ConfigError("--seeds: seeds must be >= 0");
      out.push_back(static_cast<std::uint64_t>(v));
      continue;
    }
    const auto lo = mtr::parse_int(part.substr(0, dash), "--seeds");
    const auto hi = mtr::parse_int(part.substr(dash + 1), "--seeds");
    if (lo < 0 || hi < lo) throw mtr::ConfigError("--seeds: bad range '" + std::string(part) + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw mtr::ConfigError("--seeds: no seeds given");
  return out;
}

struct Options {
  std::string config;
  std::string out = "out";
  std::string seeds;
  bool quiet = false;
  bool verbose = false;
};

void print_headline(const mtr::ExperimentResult& r) {
  const auto& s = r.summary;
  std::cout << "experiment " << s["experiment"].get<std::string>() << ": " << r.runs.size() << " runs\n";
  if (s.contains("auc_trajectory")) {
    std::cout << "  drift " << s["drift_strength"] << "  auc_trajectory " << s["auc_trajectory"] << "  auc_local "
              << s["auc_local"] << "  auc_local_w5 " << s["auc_local_w5"] << "\n";
  }
  for (const auto& [label, agg] : s["learners"].items()) {
    std::cout << "  " << label << ": runs " << agg["runs"] << ", failed " << agg["failed"];
    if (agg.contains("recovery")) {
      const auto& rec = agg["recovery"];
      std::cout << ", recovery_rate " << rec["recovery_rate"] << ", t_rec_mean " << rec["t_rec_mean"]
                << ", excursion " << rec["corrupt_excursion_mean"];
    }
    if (agg.contains("alpha_eff_stable_mean")) {
      std::cout << ", alpha_eff stable " << agg["alpha_eff_stable_mean"] << " volatile "
                << agg["alpha_eff_volatile_mean"];
    }
    if (agg.contains("separated_runs")) std::cout << ", separated_runs " << agg["separated_runs"];
    std::cout << "\n";
  }
  if (s.contains("sweep")) {
    for (const auto& p : s["sweep"]) {
      std::cout << "  drift " << p["drift"] << ": auc_trajectory " << p["auc_trajectory"] << ", auc_local "
                << p["auc_local"] << "\n";
    }
  }
}

int run_subcommand(mtr::ExperimentKind kind, const Options& opt) {
  mtr::ExperimentConfig cfg;
  try {
    if (opt.config.empty()) {
      cfg = mtr::config_from_json(mtr::json{{"experiment", std::string(mtr::to_string(kind))}});
    } else {
      cfg = mtr::parse_config(opt.config);
    }
    if (cfg.kind != kind) {
      throw mtr::ConfigError("config describes a " + std::string(mtr::to_string(cfg.kind)) +
                             " experiment, not " + std::string(mtr::to_string(kind)));
    }
    if (!opt.seeds.empty()) {
      cfg.seeds = parse_seed_list(opt.seeds);
      cfg.validate();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }

  try {
    const auto start = std::chrono::steady_clock::now();
    const auto result = mtr::run_experiment(cfg);
    mtr::write_experiment(result, opt.out);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (!opt.quiet) print_headline(result);
    if (opt.verbose) {
      if (result.drift_search) {
        std::cout << "drift search: " << result.drift_search->evaluations << " evaluations, converged "
                  << (result.drift_search->converged ? "yes" : "no") << "\n";
      }
      for (const auto& r : result.runs) {
        if (r.error) std::cout << "  run " << r.learner << " seed " << r.seed << " failed: " << *r.error << "\n";
      }
      std::cout << "wrote " << opt.out << " in " << elapsed.count() << " s\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kRunFailure;
  }
  return kOk;
}

int run_report(const Options& opt) {
  try {
    const auto result = mtr::report(opt.out);
    if (!opt.quiet) print_headline(result);
  } catch (const mtr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const mtr::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "report failed: " << e.what() << "\n";
    return kRunFailure;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monitor / trust / regulator experiments"};
  app.require_subcommand(1);
  Options opt;

  const std::vector<std::pair<std::string, mtr::ExperimentKind>> commands = {
      {"prop1", mtr::ExperimentKind::Prop1},
      {"identifiability", mtr::ExperimentKind::Identifiability},
      {"sweep", mtr::ExperimentKind::Sweep},
      {"recovery-rl", mtr::ExperimentKind::RecoveryRL},
      {"recovery-supervised", mtr::ExperimentKind::RecoverySupervised},
      {"bandit", mtr::ExperimentKind::Bandit},
  };
  for (const auto& [name, kind] : commands) {
    auto* sub = app.add_subcommand(name, "run the " + std::string(mtr::to_string(kind)) + " experiment");
    sub->add_option("--config", opt.config, "JSON experiment config (defaults used when omitted)");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--seeds", opt.seeds, "seed override, e.g. 0-19 or 1,2,3");
    auto* q = sub->add_flag("--quiet", opt.quiet, "print nothing on success");
    sub->add_flag("--verbose", opt.verbose, "print per-run diagnostics")->excludes(q);
  }
  auto* rep = app.add_subcommand("report", "rebuild summary and figure tables from persisted runs");
  rep->add_option("--out", opt.out, "output directory of a previous run")->required();
  rep->add_flag("--quiet", opt.quiet, "print nothing on success");
  rep->add_flag("--verbose", opt.verbose, "unused; accepted for symmetry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (rep->parsed()) return run_report(opt);
  for (const auto& [name, kind] : commands) {
    if (app.got_subcommand(name)) return run_subcommand(kind, opt);
  }
  return kValidation;
}
