#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fqlab/runner.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw ValidationError("--seeds: '" + item + "' is not a nonnegative integer");
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw ValidationError("--seeds: empty list");
  return seeds;
}

// "a,b;c,d" or a path to a JSON matrix.
fqlab::io::Json parse_payoff(const std::string& text) {
  if (std::filesystem::exists(text)) return fqlab::io::read_json_file(text);
  fqlab::io::Json rows = fqlab::io::Json::array();
  std::stringstream in(text);
  std::string row;
  while (std::getline(in, row, ';')) {
    fqlab::io::Json r = fqlab::io::Json::array();
    std::stringstream cells(row);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || cell.find_first_not_of(" \t", used) != std::string::npos)
        throw ValidationError("--payoff: '" + cell + "' is not a number");
      r.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void print_summary(const fqlab::RunReport& report, const std::vector<std::string>& paths) {
  auto print_aggregate = [](const std::map<std::string, fqlab::Aggregate>& agg, const std::string& indent) {
    for (const auto& [name, a] : agg)
      std::printf("%s%-24s median %.10g  iqr %.10g  (n=%zu)\n", indent.c_str(), name.c_str(), a.median,
                  a.iqr, a.count);
  };
  for (const auto& s : report.seeds)
    if (!s.ok) std::fprintf(stderr, "seed %llu failed: %s\n", static_cast<unsigned long long>(s.seed), s.error.c_str());
  print_aggregate(report.aggregate, "");
  for (const auto& p : report.sweep) {
    std::printf("value %.10g\n", p.value);
    for (const auto& s : p.seeds)
      if (!s.ok)
        std::fprintf(stderr, "  seed %llu failed: %s\n", static_cast<unsigned long long>(s.seed), s.error.c_str());
    print_aggregate(p.aggregate, "  ");
  }
  for (const auto& path : paths) std::printf("wrote %s\n", path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fitted Q-iteration, DQN and zero-sum Markov game experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seeds_text;
  std::size_t jobs = 0;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seeds", seeds_text, "Comma-separated seeds");
  app.add_option("--jobs", jobs, "Seeds run in parallel")->check(CLI::PositiveNumber);

  std::string payoff_text;
  std::string diagnose_kind;
  std::optional<double> eps_max, phi, gamma, r_max;
  std::optional<std::size_t> bound_k;

  std::vector<CLI::App*> subs;
  for (const char* name : {"solve-exact", "solve-matrix", "run-fqi", "run-minimax-fqi", "run-fqi-sgd",
                           "run-dqn", "run-minimax-dqn", "diagnose", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->fallthrough();
    subs.push_back(sub);
  }
  app.get_subcommand("solve-matrix")->add_option("--payoff", payoff_text, "Rows separated by ';', entries by ','");
  CLI::App* diag = app.get_subcommand("diagnose");
  diag->add_option("kind", diagnose_kind, "kappa | phi | bound | subopt | sandwich")
      ->required()
      ->check(CLI::IsMember({"kappa", "phi", "bound", "subopt", "sandwich"}));
  diag->add_option("--eps-max", eps_max);
  diag->add_option("--phi", phi);
  diag->add_option("--gamma", gamma);
  diag->add_option("--k", bound_k);
  diag->add_option("--r-max", r_max);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  fqlab::ExperimentConfig cfg;
  try {
    fqlab::io::Json doc = config_path.empty() ? fqlab::io::Json::object() : fqlab::io::read_json_file(config_path);
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    for (CLI::App* sub : subs)
      if (sub->parsed()) doc["command"] = sub->get_name();
    if (!out_dir.empty()) doc["out"] = out_dir;
    if (!seeds_text.empty()) doc["seeds"] = parse_seeds(seeds_text);
    if (jobs > 0) doc["jobs"] = jobs;
    if (!payoff_text.empty()) doc["payoff"] = parse_payoff(payoff_text);
    if (diag->parsed()) {
      doc["diagnose"]["kind"] = diagnose_kind;
      if (eps_max) doc["diagnose"]["eps_max"] = *eps_max;
      if (phi) doc["diagnose"]["phi"] = *phi;
      if (gamma) doc["diagnose"]["gamma"] = *gamma;
      if (bound_k) doc["diagnose"]["k"] = *bound_k;
      if (r_max) doc["diagnose"]["r_max"] = *r_max;
    }
    cfg = fqlab::parse_config(doc);
  } catch (const fqlab::ConfigError& e) {
    for (const auto& err : e.errors()) std::fprintf(stderr, "error: %s\n", err.c_str());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }

  try {
    const fqlab::RunReport report = fqlab::run_experiment(cfg);
    const auto paths = fqlab::emit_report(report, cfg.out);
    print_summary(report, paths);
    return report.all_failed() ? kExitRuntime : 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
