#pragma once

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fqlab/diagnostics.hpp"
#include "fqlab/dqn.hpp"
#include "fqlab/fqi.hpp"
#include "fqlab/io.hpp"

namespace fqlab {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Command {
  kSolveExact,
  kSolveMatrix,
  kRunFqi,
  kRunMinimaxFqi,
  kRunFqiSgd,
  kRunDqn,
  kRunMinimaxDqn,
  kDiagnose,
  kSweep,
};

std::string_view command_name(Command c);
std::optional<Command> command_from_name(std::string_view name);

enum class DiagnoseKind { kKappa, kPhi, kBound, kSubopt, kSandwich };

std::string_view diagnose_name(DiagnoseKind k);
std::optional<DiagnoseKind> diagnose_from_name(std::string_view name);

struct DiagnoseSpec {
  DiagnoseKind kind = DiagnoseKind::kKappa;
  std::size_t m = 1;
  std::size_t m_max = 3;
  KappaMode mode = KappaMode::kAuto;
  std::size_t mc_sequences = 10000;
  std::vector<double> mu;     // empty: uniform
  std::vector<double> sigma;  // empty: uniform
  BoundInputs bound;
  std::vector<std::vector<double>> policy;  // subopt; empty: uniform policy
};

/// Parameters a sweep may vary.
inline constexpr std::string_view kSweepParameters[] = {
    "fqi.samples_per_iteration", "fqi.iterations",  "fqi.sgd_steps",
    "fqi.approximator.ntk_half_width", "dqn.total_steps", "dqn.target_sync_period",
};

struct SweepSpec {
  Command command = Command::kRunFqi;
  std::string parameter = "fqi.samples_per_iteration";
  std::vector<double> values;
};

struct ExperimentConfig {
  Command command = Command::kRunFqi;
  io::Json model;                 // generator spec, explicit model, or {"file": path}
  std::optional<Eigen::MatrixXd> payoff;  // solve-matrix
  FqiConfig fqi;
  DqnConfig dqn;
  std::string opponent = "uniform";  // run-minimax-dqn: "uniform" or "equilibrium"
  DiagnoseSpec diagnose;
  SweepSpec sweep;
  std::string out = "out";
  std::vector<std::uint64_t> seeds{0};
  std::size_t jobs = 1;
};

/// Every validation problem found, each prefixed with its JSON path.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

/// Strict parse: unknown keys and type mismatches are errors, all of them
/// reported at once. Missing keys take their defaults.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig parse_config(const io::Json& doc);
inline ExperimentConfig parse_config(const char* text) { return parse_config(std::string_view(text)); }
inline ExperimentConfig parse_config(const std::string& text) { return parse_config(std::string_view(text)); }

/// Canonical form with every default filled in. Re-parsing gives the same
/// config.
io::Json config_to_json(const ExperimentConfig& cfg);

/// Builds the model named by a config's model spec. Generator kinds:
/// random_mdp, gridworld, random_game, continuous; explicit kinds are those
/// of io::model_from_json; {"file": path} loads an explicit model.
io::Model build_model(const io::Json& spec);

struct Aggregate {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  std::size_t count = 0;
};

Aggregate aggregate(std::vector<double> values);

struct SeedSummary {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::map<std::string, double> metrics;
  io::Json details = io::Json::object();
  std::vector<std::string> artifacts;
  double wall_ms = 0.0;
};

struct SweepPoint {
  double value = 0.0;
  std::vector<SeedSummary> seeds;
  std::map<std::string, Aggregate> aggregate;
};

struct RunReport {
  io::Json config = io::Json::object();
  std::string tool_version = kToolVersion;
  std::vector<SeedSummary> seeds;
  std::map<std::string, Aggregate> aggregate;
  std::vector<SweepPoint> sweep;
  std::vector<std::string> artifacts;
  double wall_ms = 0.0;

  bool all_failed() const;
};

/// Runs the configured command once per seed (in cfg.jobs worker threads),
/// writing per-seed CSV traces under cfg.out. Seed failures are recorded in
/// their summary rather than thrown.
RunReport run_experiment(const ExperimentConfig& cfg);

io::Json report_to_json(const RunReport& report);
RunReport report_from_json(const io::Json& doc);

/// Writes report.json into `dir` and returns every artifact path.
std::vector<std::string> emit_report(const RunReport& report, const std::string& dir);

}  // namespace fqlab
