#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "fqlab/runner.hpp"

using namespace fqlab;
namespace fs = std::filesystem;
using io::Json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fqlab_runner_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Drops the trailing wall_ms column of every CSV row.
std::string without_wall_ms(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Json small_fqi(const fs::path& out) {
  return Json{{"command", "run-fqi"},
              {"model", {{"kind", "random_mdp"}, {"n_states", 4}, {"n_actions", 2}, {"seed", 3}}},
              {"fqi", {{"iterations", 6}, {"samples_per_iteration", 200}}},
              {"out", out.string()},
              {"seeds", {0, 1, 2}}};
}

std::vector<std::string> config_errors(const Json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool any_starts_with(const std::vector<std::string>& errors, const std::string& prefix) {
  return std::any_of(errors.begin(), errors.end(), [&](const std::string& e) { return e.rfind(prefix, 0) == 0; });
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FQLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, MinimalTakesDefaults) {
  const ExperimentConfig cfg = parse_config(R"({"command": "run-fqi",
      "model": {"kind": "random_mdp", "n_states": 3, "n_actions": 2}})");
  EXPECT_EQ(cfg.command, Command::kRunFqi);
  EXPECT_EQ(cfg.seeds, std::vector<std::uint64_t>{0});
  EXPECT_EQ(cfg.jobs, 1u);
  EXPECT_EQ(cfg.out, "out");
  EXPECT_EQ(cfg.model.at("gamma").get<double>(), 0.9);
  EXPECT_EQ(cfg.fqi.iterations, FqiConfig{}.iterations);
  EXPECT_EQ(cfg.dqn.total_steps, DqnConfig{}.total_steps);
}

TEST(Config, GammaOutOfRangeNamesField) {
  const auto errors = config_errors(Json{{"command", "run-fqi"},
                                         {"model", {{"kind", "random_mdp"}, {"n_states", 3}, {"n_actions", 2}, {"gamma", 1.2}}}});
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_TRUE(any_starts_with(errors, "model.gamma"));
  EXPECT_NE(errors[0].find("1.2"), std::string::npos);
}

TEST(Config, UnknownKeysRejected) {
  Json doc = small_fqi("x");
  doc["fqi"]["iteratons"] = 3;
  doc["colour"] = "blue";
  const auto errors = config_errors(doc);
  EXPECT_TRUE(any_starts_with(errors, "fqi.iteratons: unknown key"));
  EXPECT_TRUE(any_starts_with(errors, "colour: unknown key"));
}

TEST(Config, ReportsEveryErrorAtOnce) {
  Json doc = small_fqi("x");
  doc["model"]["gamma"] = -0.5;
  doc["dqn"] = {{"epsilon", 2.0}};
  doc["jobs"] = 0;
  doc["seeds"] = "zero";
  doc["fqi"]["approximator"] = {{"kind", "spline"}};
  const auto errors = config_errors(doc);
  EXPECT_GE(errors.size(), 5u);
  for (const char* prefix : {"model.gamma", "dqn", "jobs", "seeds", "fqi.approximator.kind"})
    EXPECT_TRUE(any_starts_with(errors, prefix)) << prefix;
}

TEST(Config, StructuralErrors) {
  EXPECT_TRUE(any_starts_with(config_errors(Json{{"model", {{"kind", "gridworld"}}}}), "command: required"));
  EXPECT_TRUE(any_starts_with(config_errors(Json{{"command", "run-fqi"}}), "model: required"));
  EXPECT_TRUE(any_starts_with(config_errors(Json{{"command", "solve-matrix"}}), "payoff: required"));
  EXPECT_TRUE(any_starts_with(config_errors(Json{{"command", "run-minimax-fqi"}, {"model", {{"kind", "gridworld"}}}}),
                              "model: this command needs a Markov game"));
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
}

TEST(Config, CanonicalRoundTrip) {
  Json doc = small_fqi("somewhere");
  doc["dqn"] = {{"epsilon", 0.25}, {"approximator", {{"kind", "linear"}}}};
  doc["diagnose"] = {{"kind", "phi"}, {"m_max", 4}};
  const ExperimentConfig cfg = parse_config(doc);
  const Json canon = config_to_json(cfg);
  EXPECT_EQ(config_to_json(parse_config(canon)), canon);
  EXPECT_EQ(config_to_json(parse_config(canon.dump())), canon);
  EXPECT_EQ(canon.at("dqn").at("epsilon").get<double>(), 0.25);
  EXPECT_EQ(canon.at("diagnose").at("m_max").get<std::size_t>(), 4u);
}

TEST(Config, CommandNamesRoundTrip) {
  for (Command c : {Command::kSolveExact, Command::kSolveMatrix, Command::kRunFqi, Command::kRunMinimaxFqi,
                    Command::kRunFqiSgd, Command::kRunDqn, Command::kRunMinimaxDqn, Command::kDiagnose,
                    Command::kSweep})
    EXPECT_EQ(command_from_name(command_name(c)), c);
  EXPECT_FALSE(command_from_name("run-ppo").has_value());
}

TEST(Aggregate, QuartilesByInterpolation) {
  EXPECT_EQ(aggregate({}).count, 0u);
  const Aggregate a = aggregate({4.0, 1.0, 3.0, 2.0});
  EXPECT_DOUBLE_EQ(a.median, 2.5);
  EXPECT_DOUBLE_EQ(a.q1, 1.75);
  EXPECT_DOUBLE_EQ(a.q3, 3.25);
  EXPECT_DOUBLE_EQ(a.iqr, 1.5);
  const Aggregate b = aggregate({9.0, -1.0, 5.0});
  EXPECT_EQ(b.median, 5.0);
  EXPECT_EQ(b.count, 3u);
}

TEST(Report, EmptySkeleton) {
  const Json doc = report_to_json(RunReport{});
  for (const char* key : {"config", "tool_version", "seeds", "aggregate", "sweep", "artifacts", "wall_ms"})
    EXPECT_TRUE(doc.contains(key)) << key;
  EXPECT_EQ(doc.at("tool_version"), kToolVersion);
  EXPECT_TRUE(doc.at("seeds").empty());
  EXPECT_FALSE(RunReport{}.all_failed());
  EXPECT_EQ(report_to_json(report_from_json(doc)), doc);
}

TEST(Report, RoundTripKeepsNonFiniteMetrics) {
  RunReport r;
  SeedSummary s;
  s.seed = 7;
  s.metrics["a"] = std::numeric_limits<double>::infinity();
  s.metrics["b"] = std::numeric_limits<double>::quiet_NaN();
  s.metrics["c"] = 0.1;
  r.seeds.push_back(s);
  r.aggregate["c"] = aggregate({0.1});
  const Json doc = report_to_json(r);
  const Json text_trip = Json::parse(doc.dump());
  const RunReport back = report_from_json(text_trip);
  EXPECT_TRUE(std::isinf(back.seeds[0].metrics.at("a")));
  EXPECT_TRUE(std::isnan(back.seeds[0].metrics.at("b")));
  EXPECT_EQ(back.seeds[0].metrics.at("c"), 0.1);
  EXPECT_EQ(report_to_json(back), doc);
}

TEST(Run, ThreeSeedsWriteThreeTracesAndOneReport) {
  const fs::path dir = scratch("three");
  const RunReport r = run_experiment(parse_config(small_fqi(dir)));
  const auto paths = emit_report(r, dir.string());
  ASSERT_EQ(r.seeds.size(), 3u);
  std::size_t csv = 0, json = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    csv += e.path().extension() == ".csv";
    json += e.path().extension() == ".json";
  }
  EXPECT_EQ(csv, 3u);
  EXPECT_EQ(json, 1u);
  EXPECT_EQ(paths.size(), 4u);
  for (const auto& s : r.seeds) {
    EXPECT_TRUE(s.ok) << s.error;
    ASSERT_EQ(s.artifacts.size(), 1u);
    const std::string text = slurp(s.artifacts[0]);
    EXPECT_EQ(text.substr(0, text.find('\n')), io::kFqiCsvHeader);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  }
  EXPECT_EQ(r.aggregate.at("iterations_run").count, 3u);
  const RunReport back = report_from_json(io::read_json_file((dir / "report.json").string()));
  EXPECT_EQ(report_to_json(back), report_to_json(r));
}

TEST(Run, RerunIsByteIdenticalApartFromTiming) {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  const RunReport ra = run_experiment(parse_config(small_fqi(a)));
  const RunReport rb = run_experiment(parse_config(small_fqi(b)));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "fqi_seed" + std::to_string(i) + ".csv";
    EXPECT_EQ(without_wall_ms(slurp(a / name)), without_wall_ms(slurp(b / name)));
    EXPECT_EQ(ra.seeds[i].metrics, rb.seeds[i].metrics);
  }
}

TEST(Run, ParallelMatchesSerial) {
  const fs::path a = scratch("serial"), b = scratch("parallel");
  Json doc = small_fqi(a);
  doc["seeds"] = {0, 1, 2, 3, 4, 5};
  const RunReport serial = run_experiment(parse_config(doc));
  doc["out"] = b.string();
  doc["jobs"] = 4;
  const RunReport parallel = run_experiment(parse_config(doc));
  ASSERT_EQ(serial.seeds.size(), parallel.seeds.size());
  for (std::size_t i = 0; i < serial.seeds.size(); ++i) {
    EXPECT_EQ(serial.seeds[i].seed, parallel.seeds[i].seed);
    EXPECT_EQ(serial.seeds[i].metrics, parallel.seeds[i].metrics);
    const std::string name = "fqi_seed" + std::to_string(i) + ".csv";
    EXPECT_EQ(without_wall_ms(slurp(a / name)), without_wall_ms(slurp(b / name)));
  }
}

TEST(Run, SweepAggregatesPerValue) {
  const fs::path dir = scratch("sweep");
  Json doc = small_fqi(dir);
  doc["command"] = "sweep";
  doc["sweep"] = {{"command", "run-fqi"}, {"parameter", "fqi.samples_per_iteration"}, {"values", {50, 400}}};
  const RunReport r = run_experiment(parse_config(doc));
  ASSERT_EQ(r.sweep.size(), 2u);
  EXPECT_TRUE(r.seeds.empty());
  for (const auto& p : r.sweep) {
    std::vector<double> errs;
    for (const auto& s : p.seeds) errs.push_back(s.metrics.at("final_one_step_error"));
    std::sort(errs.begin(), errs.end());
    EXPECT_EQ(p.aggregate.at("final_one_step_error").median, errs[1]);
  }
  EXPECT_GT(r.sweep[0].aggregate.at("final_one_step_error").median,
            r.sweep[1].aggregate.at("final_one_step_error").median);
  EXPECT_EQ(r.artifacts.size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "fqi.samples_per_iteration=50" / "fqi_seed0.csv"));
}

TEST(Run, AllSeedsFailing) {
  const fs::path dir = scratch("fail");
  Json doc{{"command", "diagnose"},
           {"model", {{"kind", "random_mdp"}, {"n_states", 3}, {"n_actions", 2}}},
           {"diagnose", {{"kind", "kappa"}, {"mu", {0.5, 0.5}}}},
           {"out", dir.string()},
           {"seeds", {0, 1}}};
  const RunReport r = run_experiment(parse_config(doc));
  EXPECT_TRUE(r.all_failed());
  for (const auto& s : r.seeds) {
    EXPECT_FALSE(s.ok);
    EXPECT_NE(s.error.find("length"), std::string::npos);
  }
}

TEST(Run, SolveExactAndBound) {
  const fs::path dir = scratch("exact");
  const RunReport exact = run_experiment(parse_config(Json{
      {"command", "solve-exact"}, {"model", {{"kind", "gridworld"}, {"width", 2}, {"height", 1}, {"goal", {1, 0}}, {"slip", 0.0}}},
      {"out", dir.string()}}));
  ASSERT_TRUE(exact.seeds[0].ok);
  EXPECT_NEAR(exact.seeds[0].details.at("v_star")[0].get<double>(), 1.0, 1e-9);
  const RunReport bound = run_experiment(parse_config(Json{
      {"command", "diagnose"},
      {"diagnose", {{"kind", "bound"}, {"eps_max", 0.1}, {"phi", 1.0}, {"gamma", 0.9}, {"k", 10}, {"r_max", 1.0}}},
      {"out", dir.string()}}));
  EXPECT_NEAR(bound.seeds[0].metrics.at("bound"), 143.524238436, 1e-8);
}

TEST(Csv, Headers) {
  EXPECT_STREQ(io::kFqiCsvHeader, "k,empirical_mse,one_step_error_sigma,suboptimality_1mu,wall_ms");
  EXPECT_STREQ(io::kDqnCsvHeader, "t,loss,epsilon,synced,eval_value");
  DiagnosticsTrace t;
  t.records.push_back({1, 0.5, 0.25, std::nullopt, 3.0});
  EXPECT_EQ(io::fqi_trace_csv(t), std::string(io::kFqiCsvHeader) + "\n1,0.5,0.25,,3\n");
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  EXPECT_EQ(run_cli("solve-matrix --payoff '1,-1;-1,1' --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  const RunReport r = report_from_json(io::read_json_file((dir / "report.json").string()));
  EXPECT_NEAR(r.seeds[0].metrics.at("value"), 0.0, 1e-12);

  EXPECT_EQ(run_cli("solve-matrix --payoff '1,x' --out " + dir.string()), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("diagnose bound --gamma 1.5 --out " + dir.string()), 1);

  const fs::path bad = dir / "bad.json";
  io::write_text_file(bad.string(), R"({"model": {"kind": "random_mdp", "n_states": 3, "n_actions": 2, "gamma": 1.2}})");
  EXPECT_EQ(run_cli("run-fqi --config " + bad.string()), 1);

  const fs::path failing = dir / "failing.json";
  io::write_text_file(failing.string(), R"({"model": {"kind": "random_mdp", "n_states": 3, "n_actions": 2},
                                            "diagnose": {"mu": [1.0]}})");
  EXPECT_EQ(run_cli("diagnose kappa --config " + failing.string() + " --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("diagnose bound --eps-max 0.1 --phi 1 --gamma 0.9 --k 10 --out " + dir.string()), 0);
}
