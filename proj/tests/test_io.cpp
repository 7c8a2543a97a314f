#include "mtr/experiment.hpp"
#include "mtr/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

namespace mtr {
namespace {

namespace fs = std::filesystem;

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(1.0), "1.0");
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(-2.5), "-2.5");
  EXPECT_EQ(format_double(1e-20), "1e-20");
  EXPECT_EQ(format_double(0.0), "0.0");
  EXPECT_THROW(format_double(std::nan("")), std::invalid_argument);
  RngStream rng(6, 0);
  for (int i = 0; i < 1000; ++i) {
    const double x = std::ldexp(rng.normal(), static_cast<int>(rng.uniform_int(200)) - 100);
    ASSERT_EQ(parse_double(format_double(x), "x"), x);
  }
}

RunRecord three_steps() {
  RunRecord r;
  r.push_back({0.5, 0.125, 1.0, std::nullopt, 1.0, 0, Phase::Clean, 0.25});
  r.push_back({0.25, 0.0625, 0.5, 0.01, 0.9, 1, Phase::Corrupt, 0.5});
  r.push_back({0.1, 0.005, 0.1, 0.02, 0.8, 0, Phase::Recovery, 0.75});
  return r;
}

std::string csv_of(const RunRecord& r) {
  std::ostringstream ss;
  emit_run_csv(r, ss);
  return ss.str();
}

TEST(RunCsv, LineCountAndHeader) {
  const auto text = csv_of(three_steps());
  const auto lines = detail::csv_lines(text);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "step,phase,rho,theta_error,loss,grad_norm,s_t,tau,return");
  EXPECT_EQ(text.back(), '\n');
}

TEST(RunCsv, AbsentStatisticIsEmptyField) {
  const auto lines = detail::csv_lines(csv_of(three_steps()));
  EXPECT_EQ(lines[1], "0,Clean,0,0.5,0.125,1.0,,1.0,0.25");
  EXPECT_EQ(lines[2], "1,Corrupt,1,0.25,0.0625,0.5,0.01,0.9,0.5");
}

TEST(RunCsv, ByteIdenticalAndRoundTrip) {
  const auto r = three_steps();
  EXPECT_EQ(csv_of(r), csv_of(r));
  EXPECT_EQ(parse_run_csv(csv_of(r)), r);
}

TEST(RunCsv, FileRoundTrip) {
  const auto dir = fs::temp_directory_path() / "mtr_io_test";
  fs::create_directories(dir);
  const auto path = dir / "run.csv";
  emit_run_csv(three_steps(), path);
  EXPECT_EQ(read_run_csv(path), three_steps());
  EXPECT_THROW(emit_run_csv(three_steps(), dir / "missing" / "run.csv"), IoError);
  fs::remove_all(dir);
}

TEST(RunCsv, RejectsNonFiniteAndBadInput) {
  auto r = three_steps();
  r.loss[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(csv_of(r), std::invalid_argument);
  EXPECT_THROW(parse_run_csv("step,phase\n0,Clean\n"), IoError);
  EXPECT_THROW(parse_run_csv(std::string(kRunCsvHeader) + "\n1,Clean,0,0,0,0,,1,0\n"), IoError);
  EXPECT_THROW(parse_run_csv(std::string(kRunCsvHeader) + "\n0,Clean,0,x,0,0,,1,0\n"), IoError);
}

TEST(Config, MinimalProp1FillsDefaults) {
  const auto c = parse_config_text(R"({"experiment": "Prop1"})");
  ASSERT_EQ(c.learners.size(), 1u);
  const auto& l = c.learners.front();
  EXPECT_EQ(l.kind, LearnerKind::BaselineGD);
  EXPECT_EQ(l.eta, 0.1);
  EXPECT_EQ(l.monitor_window, 50);
  EXPECT_EQ(l.trust.beta, 0.01);
  EXPECT_EQ(l.trust.lambda, 2.0);
  EXPECT_EQ(l.trust.tau_min, 0.05);
  const auto& env = std::get<QuadraticEnv>(c.env);
  EXPECT_EQ(env.bias, Vector::Constant(1, 0.5));
  EXPECT_EQ(env.noise_sigma, 0.0);
  EXPECT_EQ(c.schedule.type, ScheduleSpec::Type::Staged);
  EXPECT_EQ(c.schedule.build().segments(), RegimeSchedule::staged(2000, 2000, 2000).segments());
  EXPECT_EQ(c.seeds.size(), 20u);
}

TEST(Config, ProbabilityRange) {
  try {
    parse_config_text(R"({"experiment": "RecoveryRL", "corruption": {"kind": "AdvantageSignFlip", "probability_p": 1.5}})");
    FAIL() << "expected a range error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[0, 1]"), std::string::npos) << e.what();
  }
}

TEST(Config, UnknownKeyNamed) {
  try {
    parse_config_text(R"({"experiment": "Prop1", "learners": [{"kind": "MomentumGD", "moementum": 0.5}]})");
    FAIL() << "expected an unknown-key error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("moementum"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text(R"({"experiment": "Prop1", "sedes": [1]})"), ConfigError);
}

TEST(Config, OtherErrors) {
  EXPECT_THROW(parse_config_text("{"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"experiment": "Prop2"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"experiment": "Prop1", "seeds": []})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"experiment": "Prop1", "seeds": [-1]})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"experiment": "Sweep", "environment": {"type": "Quadratic"}})"), ConfigError);
  EXPECT_THROW(parse_config(fs::path("/nonexistent/config.json")), IoError);
}

TEST(Config, MomentumDefault) {
  const auto c = parse_config_text(R"({"experiment": "Prop1", "learners": [{"kind": "MomentumGD"}]})");
  EXPECT_EQ(c.learners.front().momentum, 0.9);
}

void expect_fixed_point(const ExperimentConfig& c) {
  const auto text = emit_config(c);
  const auto again = parse_config_text(text);
  EXPECT_EQ(emit_config(again), text);
  EXPECT_EQ(again.learners, c.learners);
  EXPECT_EQ(again.seeds, c.seeds);
  EXPECT_EQ(again.corruption, c.corruption);
  EXPECT_EQ(again.detection, c.detection);
}

TEST(Config, DefaultsRoundTrip) {
  for (auto k : {ExperimentKind::Prop1, ExperimentKind::Identifiability, ExperimentKind::Sweep,
                 ExperimentKind::RecoveryRL, ExperimentKind::RecoverySupervised, ExperimentKind::Bandit}) {
    SCOPED_TRACE(std::string(to_string(k)));
    expect_fixed_point(config_from_json(json{{"experiment", std::string(to_string(k))}}));
  }
}

TEST(Config, ShippedConfigsRoundTrip) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(MTR_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().string());
    expect_fixed_point(parse_config(entry.path()));
    ++seen;
  }
  EXPECT_GE(seen, 6);
}

TEST(Figures, SweepTableRoundTrip) {
  const std::vector<SweepPoint> pts = {{0.0, 0.5, 0.51, 0.49}, {0.5, 0.55, 0.6, 0.8125}};
  const auto text = fig1c_csv(pts);
  const auto back = parse_fig1c_csv(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].auc_trajectory, 0.8125);
  EXPECT_EQ(fig1c_csv(back), text);
}

TEST(Report, RebuildsSummaryFromRunFiles) {
  const auto dir = fs::temp_directory_path() / "mtr_report_test";
  fs::remove_all(dir);
  auto cfg = config_from_json(json{{"experiment", "Prop1"}});
  cfg.seeds = default_seeds(2);
  const auto r = run_experiment(cfg);
  write_experiment(r, dir);
  const auto summary = read_text_file(dir / "summary.json");
  const auto rebuilt = report(dir);
  EXPECT_EQ(rebuilt.summary.dump(2) + "\n", summary);
  EXPECT_EQ(read_text_file(dir / "summary.json"), summary);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace mtr
