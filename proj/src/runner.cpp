#include "fqlab/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "fqlab/matrix_game.hpp"

namespace fqlab {

namespace fs = std::filesystem;
using io::Json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <class E, std::size_t N>
std::string_view lookup_name(const std::pair<E, std::string_view> (&table)[N], E value) {
  for (const auto& [e, name] : table)
    if (e == value) return name;
  return "?";
}

template <class E, std::size_t N>
std::optional<E> lookup_value(const std::pair<E, std::string_view> (&table)[N], std::string_view name) {
  for (const auto& [e, n] : table)
    if (n == name) return e;
  return std::nullopt;
}

constexpr std::pair<Command, std::string_view> kCommands[] = {
    {Command::kSolveExact, "solve-exact"},       {Command::kSolveMatrix, "solve-matrix"},
    {Command::kRunFqi, "run-fqi"},               {Command::kRunMinimaxFqi, "run-minimax-fqi"},
    {Command::kRunFqiSgd, "run-fqi-sgd"},        {Command::kRunDqn, "run-dqn"},
    {Command::kRunMinimaxDqn, "run-minimax-dqn"}, {Command::kDiagnose, "diagnose"},
    {Command::kSweep, "sweep"},
};

constexpr std::pair<DiagnoseKind, std::string_view> kDiagnoseKinds[] = {
    {DiagnoseKind::kKappa, "kappa"},   {DiagnoseKind::kPhi, "phi"},
    {DiagnoseKind::kBound, "bound"},   {DiagnoseKind::kSubopt, "subopt"},
    {DiagnoseKind::kSandwich, "sandwich"},
};

constexpr std::pair<ApproximatorSpec::Kind, std::string_view> kApproximators[] = {
    {ApproximatorSpec::Kind::kTabular, "tabular"},
    {ApproximatorSpec::Kind::kLinear, "linear"},
    {ApproximatorSpec::Kind::kSparseRelu, "sparse_relu"},
    {ApproximatorSpec::Kind::kTwoLayerNtk, "two_layer_ntk"},
};

constexpr std::pair<TrainerConfig::Optimizer, std::string_view> kOptimizers[] = {
    {TrainerConfig::Optimizer::kGradientDescent, "gd"},
    {TrainerConfig::Optimizer::kAdam, "adam"},
};

constexpr std::pair<SamplingSpec::Kind, std::string_view> kSamplings[] = {
    {SamplingSpec::Kind::kUniform, "uniform"},
    {SamplingSpec::Kind::kExplicit, "explicit"},
    {SamplingSpec::Kind::kOnPolicyMixture, "on_policy"},
    {SamplingSpec::Kind::kExhaustive, "exhaustive"},
};

constexpr std::pair<KappaMode, std::string_view> kKappaModes[] = {
    {KappaMode::kAuto, "auto"},
    {KappaMode::kExhaustive, "exhaustive"},
    {KappaMode::kMonteCarlo, "monte_carlo"},
};

bool is_count(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Walks one JSON object, remembering which keys were read so the rest can
// be reported as unknown.
class Reader {
 public:
  Reader(const Json* node, std::string path, std::vector<std::string>& errors)
      : node_(node), path_(std::move(path)), errors_(&errors) {
    if (node_ != nullptr && !node_->is_object()) {
      fail("", "expected an object");
      node_ = nullptr;
    }
  }

  ~Reader() {
    if (node_ == nullptr) return;
    for (const auto& [key, _] : node_->items())
      if (!seen_.count(key)) fail(key, "unknown key");
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  std::string key_path(std::string_view key) const {
    if (path_.empty()) return std::string(key);
    return key.empty() ? path_ : path_ + "." + std::string(key);
  }

  void fail(std::string_view key, const std::string& msg) const {
    errors_->push_back(key_path(key) + ": " + msg);
  }

  const Json* raw(const std::string& key) {
    seen_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return nullptr;
    const Json& v = node_->at(key);
    return v.is_null() ? nullptr : &v;
  }

  bool present(const std::string& key) {
    return raw(key) != nullptr;
  }

  double number(const std::string& key, double fallback) {
    const Json* v = raw(key);
    if (v == nullptr) return fallback;
    if (!v->is_number()) {
      fail(key, "expected a number");
      return fallback;
    }
    return v->get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const Json* v = raw(key);
    if (v == nullptr) return fallback;
    if (!is_count(*v)) {
      fail(key, "expected a nonnegative integer");
      return fallback;
    }
    return v->get<std::uint64_t>();
  }

  bool flag(const std::string& key, bool fallback) {
    const Json* v = raw(key);
    if (v == nullptr) return fallback;
    if (!v->is_boolean()) {
      fail(key, "expected true or false");
      return fallback;
    }
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const Json* v = raw(key);
    if (v == nullptr) return fallback;
    if (!v->is_string()) {
      fail(key, "expected a string");
      return fallback;
    }
    return v->get<std::string>();
  }

  template <class E, std::size_t N>
  E choice(const std::string& key, const std::pair<E, std::string_view> (&table)[N], E fallback) {
    const Json* v = raw(key);
    if (v == nullptr) return fallback;
    const std::string name = v->is_string() ? v->get<std::string>() : std::string();
    if (auto e = lookup_value(table, name)) return *e;
    std::string allowed;
    for (const auto& [_, n] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
    fail(key, "expected one of {" + allowed + "}");
    return fallback;
  }

  std::vector<double> numbers(const std::string& key) {
    const Json* v = raw(key);
    std::vector<double> out;
    if (v == nullptr) return out;
    if (!v->is_array()) {
      fail(key, "expected an array of numbers");
      return out;
    }
    for (const auto& x : *v) {
      if (!x.is_number()) {
        fail(key, "expected an array of numbers");
        return {};
      }
      out.push_back(x.get<double>());
    }
    return out;
  }

  template <class T>
  std::vector<T> counts(const std::string& key, std::vector<T> fallback) {
    const Json* v = raw(key);
    if (v == nullptr) return fallback;
    std::vector<T> out;
    if (!v->is_array()) {
      fail(key, "expected an array of nonnegative integers");
      return fallback;
    }
    for (const auto& x : *v) {
      if (!is_count(x)) {
        fail(key, "expected an array of nonnegative integers");
        return fallback;
      }
      out.push_back(x.get<T>());
    }
    return out;
  }

  Reader child(const std::string& key) { return Reader(raw(key), key_path(key), *errors_); }

 private:
  const Json* node_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

void require(bool ok, std::vector<std::string>& errors, const std::string& path, const std::string& msg) {
  if (!ok) errors.push_back(path + ": " + msg);
}

void check_gamma(double gamma, std::vector<std::string>& errors, const std::string& path) {
  require(gamma > 0.0 && gamma < 1.0, errors, path, "must lie in (0,1), got " + io::format_double(gamma));
}

// Model spec ---------------------------------------------------------------

Json canonical_model(const Json* spec, std::vector<std::string>& errors) {
  if (spec == nullptr) return Json();
  Reader r(spec, "model", errors);
  if (spec->is_object() && spec->contains("file")) {
    const std::string path = r.text("file", "");
    require(!path.empty() && fs::exists(path), errors, "model.file", "file does not exist: " + path);
    return Json{{"file", path}};
  }
  const std::string kind = r.text("kind", "");
  auto required_count = [&](const char* key) {
    if (!r.present(key)) r.fail(key, "required");
    return r.count(key, 1);
  };
  Json out;
  if (kind == "random_mdp") {
    out = Json{{"kind", kind},
               {"n_states", required_count("n_states")},
               {"n_actions", required_count("n_actions")},
               {"gamma", r.number("gamma", 0.9)},
               {"r_max", r.number("r_max", 1.0)},
               {"concentration", r.number("concentration", 1.0)},
               {"seed", r.count("seed", 0)},
               {"noise", r.number("noise", 0.0)}};
  } else if (kind == "gridworld") {
    const auto goal = r.counts<std::size_t>("goal", {4, 4});
    if (goal.size() != 2) r.fail("goal", "expected [x, y]");
    out = Json{{"kind", kind},
               {"width", r.count("width", 5)},
               {"height", r.count("height", 5)},
               {"goal", goal},
               {"step_reward", r.number("step_reward", 0.0)},
               {"goal_reward", r.number("goal_reward", 1.0)},
               {"slip", r.number("slip", 0.1)},
               {"gamma", r.number("gamma", 0.95)},
               {"noise", r.number("noise", 0.0)}};
  } else if (kind == "random_game") {
    out = Json{{"kind", kind},
               {"n_states", required_count("n_states")},
               {"n_actions", required_count("n_actions")},
               {"n_actions2", required_count("n_actions2")},
               {"gamma", r.number("gamma", 0.9)},
               {"r_max", r.number("r_max", 1.0)},
               {"concentration", r.number("concentration", 1.0)},
               {"seed", r.count("seed", 0)},
               {"noise", r.number("noise", 0.0)}};
  } else if (kind == "continuous") {
    out = Json{{"kind", kind},
               {"state_dim", r.count("state_dim", 2)},
               {"n_actions", r.count("n_actions", 2)},
               {"gamma", r.number("gamma", 0.9)},
               {"r_max", r.number("r_max", 1.0)},
               {"seed", r.count("seed", 0)},
               {"bumps_per_action", r.count("bumps_per_action", 3)},
               {"noise_std", r.number("noise_std", 0.05)}};
  } else if (kind == "tabular_mdp" || kind == "markov_game" || kind == "continuous_mdp") {
    // Explicit models are checked by constructing them.
    for (const auto& [key, _] : spec->items()) r.raw(key);
    return *spec;
  } else {
    r.fail("kind", "expected one of {random_mdp, gridworld, random_game, continuous, tabular_mdp, "
                   "markov_game, continuous_mdp} or a 'file' key");
    return Json();
  }
  if (out.contains("gamma")) check_gamma(out["gamma"].get<double>(), errors, "model.gamma");
  return out;
}

Json goal_json(const Json& spec) { return spec.at("goal"); }

}  // namespace

std::string_view command_name(Command c) { return lookup_name(kCommands, c); }
std::optional<Command> command_from_name(std::string_view name) { return lookup_value(kCommands, name); }
std::string_view diagnose_name(DiagnoseKind k) { return lookup_name(kDiagnoseKinds, k); }
std::optional<DiagnoseKind> diagnose_from_name(std::string_view name) {
  return lookup_value(kDiagnoseKinds, name);
}

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::invalid_argument([&] {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        return msg;
      }()),
      errors_(std::move(errors)) {}

io::Model build_model(const Json& spec) {
  if (spec.is_null()) throw std::invalid_argument("no model given");
  if (spec.contains("file")) return io::model_from_json(io::read_json_file(spec.at("file").get<std::string>()));
  const std::string kind = spec.at("kind").get<std::string>();
  auto noisy = [&](TabularMDP mdp) {
    const double noise = spec.value("noise", 0.0);
    if (noise == 0.0) return mdp;
    return TabularMDP(mdp.transition(), mdp.reward_mean(), mdp.gamma(), mdp.r_max(), noise);
  };
  if (kind == "random_mdp")
    return noisy(make_random_mdp(spec.at("n_states").get<std::size_t>(), spec.at("n_actions").get<std::size_t>(),
                                 spec.at("gamma").get<double>(), spec.at("r_max").get<double>(),
                                 spec.at("concentration").get<double>(), spec.at("seed").get<std::uint64_t>()));
  if (kind == "gridworld") {
    const Json goal = goal_json(spec);
    return noisy(make_gridworld(spec.at("width").get<std::size_t>(), spec.at("height").get<std::size_t>(),
                                GridCell{goal[0].get<std::size_t>(), goal[1].get<std::size_t>()},
                                spec.at("step_reward").get<double>(), spec.at("goal_reward").get<double>(),
                                spec.at("slip").get<double>(), spec.at("gamma").get<double>()));
  }
  if (kind == "random_game") {
    TabularMarkovGame g = make_random_game(
        spec.at("n_states").get<std::size_t>(), spec.at("n_actions").get<std::size_t>(),
        spec.at("n_actions2").get<std::size_t>(), spec.at("gamma").get<double>(),
        spec.at("r_max").get<double>(), spec.at("seed").get<std::uint64_t>(),
        spec.at("concentration").get<double>());
    const double noise = spec.value("noise", 0.0);
    if (noise == 0.0) return g;
    return TabularMarkovGame(g.transition(), g.reward_mean(), g.gamma(), g.r_max(), noise);
  }
  if (kind == "continuous")
    return make_continuous_mdp(spec.at("state_dim").get<std::size_t>(), spec.at("n_actions").get<std::size_t>(),
                               spec.at("gamma").get<double>(), spec.at("r_max").get<double>(),
                               spec.at("seed").get<std::uint64_t>(),
                               spec.at("bumps_per_action").get<std::size_t>(),
                               spec.at("noise_std").get<double>());
  return io::model_from_json(spec);
}

namespace {

ApproximatorSpec read_approximator(Reader r, std::vector<std::string>& errors, const std::string& path) {
  ApproximatorSpec a;
  a.kind = r.choice("kind", kApproximators, a.kind);
  a.hidden_widths = r.counts<std::size_t>("hidden_widths", a.hidden_widths);
  a.sparsity_budget = r.count("sparsity_budget", a.sparsity_budget);
  a.v_max = r.number("v_max", a.v_max);
  a.truncate = r.flag("truncate", a.truncate);
  a.ntk_half_width = r.count("ntk_half_width", a.ntk_half_width);
  a.ntk_radius = r.number("ntk_radius", a.ntk_radius);
  for (std::size_t w : a.hidden_widths) require(w > 0, errors, path + ".hidden_widths", "widths must be >= 1");
  require(a.ntk_half_width > 0, errors, path + ".ntk_half_width", "must be >= 1");
  require(a.ntk_radius > 0.0, errors, path + ".ntk_radius", "must be > 0");
  return a;
}

Json approximator_json(const ApproximatorSpec& a) {
  return Json{{"kind", lookup_name(kApproximators, a.kind)},
              {"hidden_widths", a.hidden_widths},
              {"sparsity_budget", a.sparsity_budget},
              {"v_max", a.v_max},
              {"truncate", a.truncate},
              {"ntk_half_width", a.ntk_half_width},
              {"ntk_radius", a.ntk_radius}};
}

FqiConfig read_fqi(Reader r, std::vector<std::string>& errors) {
  FqiConfig f;
  f.iterations = r.count("iterations", f.iterations);
  f.samples_per_iteration = r.count("samples_per_iteration", f.samples_per_iteration);
  f.approximator = read_approximator(r.child("approximator"), errors, "fqi.approximator");
  {
    Reader t = r.child("trainer");
    f.trainer.optimizer = t.choice("optimizer", kOptimizers, f.trainer.optimizer);
    f.trainer.learning_rate = t.number("learning_rate", f.trainer.learning_rate);
    f.trainer.epochs = t.count("epochs", f.trainer.epochs);
    f.trainer.batch_size = t.count("batch_size", f.trainer.batch_size);
    f.trainer.ridge = t.number("ridge", f.trainer.ridge);
  }
  {
    Reader s = r.child("sampling");
    f.sampling.kind = s.choice("kind", kSamplings, f.sampling.kind);
    f.sampling.weights = s.numbers("weights");
    f.sampling.greedy_fraction = s.number("greedy_fraction", f.sampling.greedy_fraction);
    f.sampling.require_full_support = s.flag("require_full_support", f.sampling.require_full_support);
  }
  f.fresh_samples_per_iteration = r.flag("fresh_samples", f.fresh_samples_per_iteration);
  f.warm_start = r.flag("warm_start", f.warm_start);
  if (r.present("sgd_steps")) f.sgd_steps = r.count("sgd_steps", 0);
  f.sgd_eta = r.number("sgd_eta", f.sgd_eta);
  f.mu = r.numbers("mu");
  f.continuous_error_samples = r.count("continuous_error_samples", f.continuous_error_samples);
  f.continuous_inner_samples = r.count("continuous_inner_samples", f.continuous_inner_samples);
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    errors.push_back(std::string("fqi: ") + e.what());
  }
  if (f.sampling.kind == SamplingSpec::Kind::kExplicit) {
    double total = 0.0;
    for (double w : f.sampling.weights) {
      require(w >= 0.0, errors, "fqi.sampling.weights", "entries must be >= 0");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-12, errors, "fqi.sampling.weights", "must sum to 1 within 1e-12");
  }
  return f;
}

Json fqi_json(const FqiConfig& f) {
  return Json{{"iterations", f.iterations},
              {"samples_per_iteration", f.samples_per_iteration},
              {"approximator", approximator_json(f.approximator)},
              {"trainer", Json{{"optimizer", lookup_name(kOptimizers, f.trainer.optimizer)},
                               {"learning_rate", f.trainer.learning_rate},
                               {"epochs", f.trainer.epochs},
                               {"batch_size", f.trainer.batch_size},
                               {"ridge", f.trainer.ridge}}},
              {"sampling", Json{{"kind", lookup_name(kSamplings, f.sampling.kind)},
                                {"weights", f.sampling.weights},
                                {"greedy_fraction", f.sampling.greedy_fraction},
                                {"require_full_support", f.sampling.require_full_support}}},
              {"fresh_samples", f.fresh_samples_per_iteration},
              {"warm_start", f.warm_start},
              {"sgd_steps", f.sgd_steps ? Json(*f.sgd_steps) : Json()},
              {"sgd_eta", f.sgd_eta},
              {"mu", f.mu},
              {"continuous_error_samples", f.continuous_error_samples},
              {"continuous_inner_samples", f.continuous_inner_samples}};
}

DqnConfig read_dqn(Reader r, std::string& opponent, std::vector<std::string>& errors) {
  DqnConfig d;
  d.total_steps = r.count("total_steps", d.total_steps);
  d.minibatch = r.count("minibatch", d.minibatch);
  d.epsilon = r.number("epsilon", d.epsilon);
  d.target_sync_period = r.count("target_sync_period", d.target_sync_period);
  d.step_size = r.number("step_size", d.step_size);
  d.replay_capacity = r.count("replay_capacity", d.replay_capacity);
  d.approximator = read_approximator(r.child("approximator"), errors, "dqn.approximator");
  d.start_state = r.count("start_state", d.start_state);
  d.reset_on_absorbing = r.flag("reset_on_absorbing", d.reset_on_absorbing);
  d.eval_period = r.count("eval_period", d.eval_period);
  opponent = r.text("opponent", opponent);
  require(opponent == "uniform" || opponent == "equilibrium", errors, "dqn.opponent",
          "expected one of {uniform, equilibrium}");
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    errors.push_back(std::string("dqn: ") + e.what());
  }
  return d;
}

Json dqn_json(const DqnConfig& d, const std::string& opponent) {
  return Json{{"total_steps", d.total_steps},
              {"minibatch", d.minibatch},
              {"epsilon", d.epsilon},
              {"target_sync_period", d.target_sync_period},
              {"step_size", d.step_size},
              {"replay_capacity", d.replay_capacity},
              {"approximator", approximator_json(d.approximator)},
              {"start_state", d.start_state},
              {"reset_on_absorbing", d.reset_on_absorbing},
              {"eval_period", d.eval_period},
              {"opponent", opponent}};
}

bool is_game(const io::Model& m) { return std::holds_alternative<TabularMarkovGame>(m); }
bool is_mdp(const io::Model& m) { return std::holds_alternative<TabularMDP>(m); }
bool is_continuous(const io::Model& m) { return std::holds_alternative<ContinuousMDP>(m); }

void check_model_fit(Command c, const DiagnoseSpec& diag, const io::Model& m, std::vector<std::string>& errors) {
  switch (c) {
    case Command::kSolveExact:
      require(!is_continuous(m), errors, "model", "solve-exact needs a tabular model");
      break;
    case Command::kRunFqi:
    case Command::kRunFqiSgd:
      require(!is_game(m), errors, "model", "this command needs a single-agent model");
      break;
    case Command::kRunMinimaxFqi:
    case Command::kRunMinimaxDqn:
      require(is_game(m), errors, "model", "this command needs a Markov game");
      break;
    case Command::kRunDqn:
      require(is_mdp(m), errors, "model", "run-dqn needs a tabular MDP");
      break;
    case Command::kDiagnose:
      if (diag.kind == DiagnoseKind::kSubopt)
        require(!is_continuous(m), errors, "model", "subopt needs a tabular model");
      else if (diag.kind != DiagnoseKind::kBound)
        require(is_mdp(m), errors, "model", "this diagnostic needs a tabular MDP");
      break;
    default:
      break;
  }
}

bool needs_model(Command c, const DiagnoseSpec& diag) {
  if (c == Command::kSolveMatrix) return false;
  if (c == Command::kDiagnose && diag.kind == DiagnoseKind::kBound) return false;
  return true;
}

void apply_sweep_value(ExperimentConfig& cfg, std::string_view param, double v) {
  const auto n = static_cast<std::size_t>(std::llround(v));
  if (param == "fqi.samples_per_iteration") cfg.fqi.samples_per_iteration = n;
  else if (param == "fqi.iterations") cfg.fqi.iterations = n;
  else if (param == "fqi.sgd_steps") cfg.fqi.sgd_steps = n;
  else if (param == "fqi.approximator.ntk_half_width") cfg.fqi.approximator.ntk_half_width = n;
  else if (param == "dqn.total_steps") cfg.dqn.total_steps = n;
  else if (param == "dqn.target_sync_period") cfg.dqn.target_sync_period = n;
  else throw std::invalid_argument("unknown sweep parameter " + std::string(param));
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError({std::string("<root>: malformed JSON: ") + e.what()});
  }
  return parse_config(doc);
}

ExperimentConfig parse_config(const Json& doc) {
  std::vector<std::string> errors;
  ExperimentConfig cfg;
  {
    Reader r(&doc, "", errors);
    cfg.command = r.choice("command", kCommands, cfg.command);
    if (!r.present("command")) r.fail("command", "required");
    cfg.model = canonical_model(r.raw("model"), errors);
    if (const Json* p = r.raw("payoff")) {
      try {
        cfg.payoff = io::matrix_from_json(*p);
        if (!cfg.payoff->allFinite()) throw std::invalid_argument("entries must be finite");
      } catch (const std::exception& e) {
        r.fail("payoff", e.what());
      }
    }
    cfg.fqi = read_fqi(r.child("fqi"), errors);
    cfg.dqn = read_dqn(r.child("dqn"), cfg.opponent, errors);
    {
      Reader d = r.child("diagnose");
      auto& g = cfg.diagnose;
      g.kind = d.choice("kind", kDiagnoseKinds, g.kind);
      g.m = d.count("m", g.m);
      g.m_max = d.count("m_max", g.m_max);
      g.mode = d.choice("mode", kKappaModes, g.mode);
      g.mc_sequences = d.count("mc_sequences", g.mc_sequences);
      g.mu = d.numbers("mu");
      g.sigma = d.numbers("sigma");
      g.bound.eps_max = d.number("eps_max", g.bound.eps_max);
      g.bound.phi = d.number("phi", g.bound.phi);
      g.bound.gamma = d.number("gamma", g.bound.gamma);
      g.bound.k = d.count("k", g.bound.k);
      g.bound.r_max = d.number("r_max", g.bound.r_max);
      if (const Json* p = d.raw("policy")) {
        try {
          const Eigen::MatrixXd m = io::matrix_from_json(*p);
          for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const Eigen::RowVectorXd row = m.row(i);
            g.policy.emplace_back(row.data(), row.data() + row.size());
          }
        } catch (const std::exception& e) {
          d.fail("policy", e.what());
        }
      }
      require(g.m >= 1, errors, "diagnose.m", "must be >= 1");
      require(g.m_max >= 1, errors, "diagnose.m_max", "must be >= 1");
      try {
        g.bound.validate();
      } catch (const std::invalid_argument& e) {
        errors.push_back(std::string("diagnose: ") + e.what());
      }
    }
    {
      Reader s = r.child("sweep");
      cfg.sweep.command = s.choice("command", kCommands, cfg.sweep.command);
      cfg.sweep.parameter = s.text("parameter", cfg.sweep.parameter);
      cfg.sweep.values = s.numbers("values");
      if (cfg.command == Command::kSweep) {
        require(std::find(std::begin(kSweepParameters), std::end(kSweepParameters), cfg.sweep.parameter) !=
                    std::end(kSweepParameters),
                errors, "sweep.parameter", "unsupported sweep parameter '" + cfg.sweep.parameter + "'");
        require(!cfg.sweep.values.empty(), errors, "sweep.values", "must be nonempty");
        for (double v : cfg.sweep.values)
          require(v >= 0.0 && v == std::floor(v), errors, "sweep.values", "entries must be nonnegative integers");
        const Command c = cfg.sweep.command;
        require(c != Command::kSweep && c != Command::kSolveExact && c != Command::kSolveMatrix &&
                    c != Command::kDiagnose,
                errors, "sweep.command", "must be a run-* command");
      }
    }
    cfg.out = r.text("out", cfg.out);
    cfg.seeds = r.counts<std::uint64_t>("seeds", cfg.seeds);
    cfg.jobs = r.count("jobs", cfg.jobs);
    require(!cfg.seeds.empty(), errors, "seeds", "must be nonempty");
    require(cfg.jobs >= 1, errors, "jobs", "must be >= 1");
    require(!cfg.out.empty(), errors, "out", "must be nonempty");
  }

  const Command effective = cfg.command == Command::kSweep ? cfg.sweep.command : cfg.command;
  if (cfg.command == Command::kSolveMatrix && !cfg.payoff) errors.push_back("payoff: required for solve-matrix");
  if (needs_model(effective, cfg.diagnose)) {
    if (cfg.model.is_null()) {
      if (!doc.is_object() || !doc.contains("model")) errors.push_back("model: required for this command");
    } else if (std::none_of(errors.begin(), errors.end(),
                            [](const std::string& e) { return e.rfind("model", 0) == 0; })) {
      try {
        const io::Model m = build_model(cfg.model);
        check_model_fit(effective, cfg.diagnose, m, errors);
        if (effective == Command::kRunDqn || effective == Command::kRunMinimaxDqn) {
          const std::size_t S = std::visit([](const auto& x) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, ContinuousMDP>) return 0;
            else return x.n_states();
          }, m);
          require(cfg.dqn.start_state < S, errors, "dqn.start_state", "must be a valid state index");
        }
      } catch (const std::exception& e) {
        errors.push_back(std::string("model: ") + e.what());
      }
    }
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

Json config_to_json(const ExperimentConfig& cfg) {
  const auto& g = cfg.diagnose;
  Json policy = Json::array();
  for (const auto& row : g.policy) policy.push_back(row);
  return Json{{"command", command_name(cfg.command)},
              {"model", cfg.model},
              {"payoff", cfg.payoff ? io::matrix_to_json(*cfg.payoff) : Json()},
              {"fqi", fqi_json(cfg.fqi)},
              {"dqn", dqn_json(cfg.dqn, cfg.opponent)},
              {"diagnose", Json{{"kind", diagnose_name(g.kind)},
                                {"m", g.m},
                                {"m_max", g.m_max},
                                {"mode", lookup_name(kKappaModes, g.mode)},
                                {"mc_sequences", g.mc_sequences},
                                {"mu", g.mu},
                                {"sigma", g.sigma},
                                {"eps_max", g.bound.eps_max},
                                {"phi", g.bound.phi},
                                {"gamma", g.bound.gamma},
                                {"k", g.bound.k},
                                {"r_max", g.bound.r_max},
                                {"policy", g.policy.empty() ? Json() : policy}}},
              {"sweep", Json{{"command", command_name(cfg.sweep.command)},
                             {"parameter", cfg.sweep.parameter},
                             {"values", cfg.sweep.values}}},
              {"out", cfg.out},
              {"seeds", cfg.seeds},
              {"jobs", cfg.jobs}};
}

Aggregate aggregate(std::vector<double> values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  a.median = quantile(0.5);
  a.q1 = quantile(0.25);
  a.q3 = quantile(0.75);
  a.iqr = a.q3 - a.q1;
  return a;
}

bool RunReport::all_failed() const {
  auto failed = [](const std::vector<SeedSummary>& s) {
    return !s.empty() && std::none_of(s.begin(), s.end(), [](const SeedSummary& x) { return x.ok; });
  };
  if (!sweep.empty())
    return std::all_of(sweep.begin(), sweep.end(), [&](const SweepPoint& p) { return failed(p.seeds); });
  return failed(seeds);
}

namespace {

std::string seed_file(const std::string& dir, const std::string& stem, std::uint64_t seed) {
  return (fs::path(dir) / (stem + "_seed" + std::to_string(seed) + ".csv")).string();
}

TabularPolicy diagnose_policy(const DiagnoseSpec& g, std::size_t S, std::size_t A) {
  if (g.policy.empty()) return TabularPolicy::uniform(S, A);
  TabularPolicy pi{Eigen::MatrixXd(static_cast<Eigen::Index>(g.policy.size()),
                                   static_cast<Eigen::Index>(g.policy[0].size()))};
  for (std::size_t s = 0; s < g.policy.size(); ++s) {
    if (g.policy[s].size() != g.policy[0].size()) throw std::invalid_argument("diagnose.policy rows are ragged");
    for (std::size_t a = 0; a < g.policy[s].size(); ++a)
      pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = g.policy[s][a];
  }
  if (pi.n_states() != S || pi.n_actions() != A) throw std::invalid_argument("diagnose.policy has the wrong shape");
  pi.validate();
  return pi;
}

Eigen::VectorXd measure(const std::vector<double>& w, std::size_t n) {
  if (w.empty()) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  if (w.size() != n) throw std::invalid_argument("measure has length " + std::to_string(w.size()) +
                                                 ", expected " + std::to_string(n));
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(n));
}

void record_fqi(SeedSummary& out, const FqiResult& res, const std::string& csv) {
  io::write_text_file(csv, io::fqi_trace_csv(res.trace));
  out.artifacts.push_back(csv);
  out.metrics["iterations_run"] = static_cast<double>(res.trace.records.size());
  out.metrics["diverged"] = res.diverged ? 1.0 : 0.0;
  if (!res.trace.records.empty()) {
    const auto& last = res.trace.records.back();
    out.metrics["final_empirical_mse"] = last.empirical_mse;
    if (last.one_step_error) {
      out.metrics["final_one_step_error"] = *last.one_step_error;
      out.metrics["eps_max"] = res.trace.eps_max();
    }
    if (last.suboptimality) out.metrics["final_suboptimality"] = *last.suboptimality;
  }
}

SeedSummary run_one(const ExperimentConfig& cfg, const io::Model* model, std::uint64_t seed,
                    const std::string& dir) {
  SeedSummary out;
  out.seed = seed;
  FqiConfig fqi = cfg.fqi;
  fqi.seed = seed;
  DqnConfig dqn = cfg.dqn;
  dqn.seed = seed;
  const auto& g = cfg.diagnose;

  switch (cfg.command) {
    case Command::kSolveExact: {
      if (const auto* mdp = std::get_if<TabularMDP>(model)) {
        const auto vi = value_iteration(*mdp, 1e-10);
        out.metrics["iterations"] = static_cast<double>(vi.iterations);
        out.metrics["residual"] = vi.residual;
        out.details["q_star"] = io::qtable_to_json(vi.q);
        const Eigen::VectorXd v = vi.q.rowwise().maxCoeff();
        out.details["v_star"] = std::vector<double>(v.data(), v.data() + v.size());
        out.details["policy"] = greedy_actions(vi.q);
      } else {
        const auto& game = std::get<TabularMarkovGame>(*model);
        const auto vi = nash_value_iteration(game, 1e-10);
        const Eigen::VectorXd v = game_state_values(vi.q);
        const JointPolicy jp = equilibrium_joint_policy(game, vi.q);
        out.metrics["iterations"] = static_cast<double>(vi.iterations);
        out.metrics["residual"] = vi.residual;
        out.details["q_star"] = io::qtable_to_json(vi.q);
        out.details["v_star"] = std::vector<double>(v.data(), v.data() + v.size());
        out.details["policy_p1"] = io::policy_to_json(jp.p1);
        out.details["policy_p2"] = io::policy_to_json(jp.p2);
      }
      break;
    }
    case Command::kSolveMatrix: {
      const auto sol = matrix_game::solve(*cfg.payoff);
      out.metrics["value"] = sol.value;
      out.metrics["exploitability"] = matrix_game::exploitability(*cfg.payoff, sol);
      out.details["row_strategy"] = std::vector<double>(sol.row_strategy.data(), sol.row_strategy.data() + sol.row_strategy.size());
      out.details["col_strategy"] = std::vector<double>(sol.col_strategy.data(), sol.col_strategy.data() + sol.col_strategy.size());
      break;
    }
    case Command::kRunFqi:
    case Command::kRunFqiSgd: {
      if (cfg.command == Command::kRunFqiSgd) fqi.approximator.kind = ApproximatorSpec::Kind::kTwoLayerNtk;
      FqiResult res;
      if (const auto* mdp = std::get_if<TabularMDP>(model))
        res = cfg.command == Command::kRunFqiSgd ? run_fqi_projected_sgd(*mdp, fqi) : run_fqi(*mdp, fqi);
      else
        res = cfg.command == Command::kRunFqiSgd ? run_fqi_projected_sgd(std::get<ContinuousMDP>(*model), fqi)
                                                 : run_fqi(std::get<ContinuousMDP>(*model), fqi);
      record_fqi(out, res, seed_file(dir, "fqi", seed));
      if (fqi.approximator.kind == ApproximatorSpec::Kind::kTwoLayerNtk)
        out.metrics["max_ball_distance"] = res.max_ball_distance;
      if (res.policy) out.details["policy"] = io::policy_to_json(*res.policy);
      break;
    }
    case Command::kRunMinimaxFqi: {
      const FqiResult res = run_minimax_fqi(std::get<TabularMarkovGame>(*model), fqi);
      record_fqi(out, res, seed_file(dir, "minimax_fqi", seed));
      out.details["policy_p1"] = io::policy_to_json(res.joint_policy->p1);
      out.details["policy_p2"] = io::policy_to_json(res.joint_policy->p2);
      break;
    }
    case Command::kRunDqn: {
      const auto& mdp = std::get<TabularMDP>(*model);
      const DqnResult res = dqn_train(mdp, dqn);
      const std::string csv = seed_file(dir, "dqn", seed);
      io::write_text_file(csv, io::dqn_trace_csv(res.trace));
      out.artifacts.push_back(csv);
      const QTable q_star = value_iteration(mdp, 1e-10).q;
      const QTable q_pi = policy_evaluation(mdp, *res.policy);
      const auto s0 = static_cast<Eigen::Index>(dqn.start_state);
      const double v_pi = (q_pi.row(s0).array() * res.policy->probs.row(s0).array()).sum();
      out.metrics["greedy_value_start"] = v_pi;
      out.metrics["v_star_start"] = q_star.row(s0).maxCoeff();
      out.metrics["sync_count"] = static_cast<double>(res.sync_count);
      out.metrics["final_loss"] = res.trace.empty() ? 0.0 : res.trace.back().loss;
      out.metrics["diverged"] = res.diverged ? 1.0 : 0.0;
      out.details["policy"] = io::policy_to_json(*res.policy);
      break;
    }
    case Command::kRunMinimaxDqn: {
      const auto& game = std::get<TabularMarkovGame>(*model);
      const GameQTable q_star = nash_value_iteration(game, 1e-10).q;
      const TabularPolicy opponent = cfg.opponent == "equilibrium"
                                         ? equilibrium_joint_policy(game, q_star).p1
                                         : TabularPolicy::uniform(game.n_states(), game.n_actions_p1());
      const DqnResult res = minimax_dqn_train(game, dqn, opponent);
      const std::string csv = seed_file(dir, "minimax_dqn", seed);
      io::write_text_file(csv, io::dqn_trace_csv(res.trace));
      out.artifacts.push_back(csv);
      // The learner's value against the fixed opponent, on its own (negated) payoff.
      const GameQTable q_pi = joint_policy_evaluation(game, opponent, res.joint_policy->p2);
      const auto s0 = static_cast<Eigen::Index>(dqn.start_state);
      out.metrics["learner_value_start"] =
          -(opponent.probs.row(s0) * q_pi[dqn.start_state] * res.joint_policy->p2.probs.row(s0).transpose())(0, 0);
      out.metrics["sync_count"] = static_cast<double>(res.sync_count);
      out.metrics["final_loss"] = res.trace.empty() ? 0.0 : res.trace.back().loss;
      out.metrics["diverged"] = res.diverged ? 1.0 : 0.0;
      out.details["policy_p2"] = io::policy_to_json(res.joint_policy->p2);
      break;
    }
    case Command::kDiagnose: {
      switch (g.kind) {
        case DiagnoseKind::kKappa: {
          const auto& mdp = std::get<TabularMDP>(*model);
          const std::size_t n = mdp.n_states() * mdp.n_actions();
          const KappaResult k = concentration_coefficient(mdp, measure(g.mu, n), measure(g.sigma, n), g.m,
                                                          g.mode, g.mc_sequences, seed);
          out.metrics["kappa"] = k.value;
          out.metrics["exhaustive"] = k.exhaustive ? 1.0 : 0.0;
          out.metrics["infinite"] = k.infinite ? 1.0 : 0.0;
          out.metrics["sequences"] = static_cast<double>(k.sequences);
          break;
        }
        case DiagnoseKind::kPhi: {
          const auto& mdp = std::get<TabularMDP>(*model);
          const std::size_t n = mdp.n_states() * mdp.n_actions();
          const PhiEstimate phi = phi_estimate(mdp, measure(g.mu, n), measure(g.sigma, n), g.m_max, g.mode);
          out.metrics["phi_truncated"] = phi.truncated;
          out.metrics["tail_bound"] = phi.tail_bound;
          out.metrics["kappa_sup"] = phi.kappa_sup;
          out.metrics["exhaustive"] = phi.exhaustive ? 1.0 : 0.0;
          out.metrics["infinite"] = phi.infinite ? 1.0 : 0.0;
          out.details["kappas"] = phi.kappas;
          break;
        }
        case DiagnoseKind::kBound:
          out.metrics["bound"] = error_propagation_bound(g.bound);
          break;
        case DiagnoseKind::kSubopt: {
          if (const auto* mdp = std::get_if<TabularMDP>(model)) {
            const std::size_t n = mdp->n_states() * mdp->n_actions();
            out.metrics["suboptimality"] =
                suboptimality(*mdp, diagnose_policy(g, mdp->n_states(), mdp->n_actions()),
                              WeightedNorm{measure(g.mu, n), 1.0});
          } else {
            const auto& game = std::get<TabularMarkovGame>(*model);
            const std::size_t n = game.n_states() * game.n_actions_p1() * game.n_actions_p2();
            out.metrics["suboptimality"] =
                game_suboptimality(game, diagnose_policy(g, game.n_states(), game.n_actions_p1()),
                                   WeightedNorm{measure(g.mu, n), 1.0});
          }
          break;
        }
        case DiagnoseKind::kSandwich: {
          const auto& mdp = std::get<TabularMDP>(*model);
          fqi.record_iterates = true;
          const FqiResult res = run_fqi(mdp, fqi);
          const QTable q_star = value_iteration(mdp, 1e-10).q;
          const SandwichReport rep = verify_sandwich(mdp, res.iterates, q_star);
          std::ostringstream csv;
          csv << "k,upper_violation,lower_violation\n";
          for (std::size_t k = 0; k < rep.upper_violation.size(); ++k)
            csv << k << ',' << io::format_double(rep.upper_violation[k]) << ','
                << io::format_double(rep.lower_violation[k]) << '\n';
          const std::string path = seed_file(dir, "sandwich", seed);
          io::write_text_file(path, csv.str());
          out.artifacts.push_back(path);
          out.metrics["max_violation"] = rep.max_violation;
          out.metrics["eps_max"] = res.trace.eps_max();
          break;
        }
      }
      break;
    }
    case Command::kSweep:
      throw std::logic_error("nested sweep");
  }
  return out;
}

std::vector<SeedSummary> run_seeds(const ExperimentConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::optional<io::Model> model;
  if (needs_model(cfg.command, cfg.diagnose)) model = build_model(cfg.model);
  std::vector<SeedSummary> results(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      const auto start = Clock::now();
      try {
        results[i] = run_one(cfg, model ? &*model : nullptr, cfg.seeds[i], dir);
      } catch (const std::exception& e) {
        results[i] = SeedSummary{};
        results[i].seed = cfg.seeds[i];
        results[i].ok = false;
        results[i].error = e.what();
      }
      results[i].wall_ms = elapsed_ms(start);
    }
  };
  const std::size_t n_threads = std::min(cfg.jobs, cfg.seeds.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return results;
}

std::map<std::string, Aggregate> aggregate_seeds(const std::vector<SeedSummary>& seeds) {
  std::map<std::string, std::vector<double>> columns;
  for (const auto& s : seeds)
    if (s.ok)
      for (const auto& [k, v] : s.metrics) columns[k].push_back(v);
  std::map<std::string, Aggregate> out;
  for (auto& [k, v] : columns) out[k] = aggregate(std::move(v));
  return out;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto start = Clock::now();
  RunReport report;
  report.config = config_to_json(cfg);
  fs::create_directories(cfg.out);
  if (cfg.command == Command::kSweep) {
    for (double v : cfg.sweep.values) {
      ExperimentConfig point = cfg;
      point.command = cfg.sweep.command;
      apply_sweep_value(point, cfg.sweep.parameter, v);
      SweepPoint p;
      p.value = v;
      p.seeds = run_seeds(point, (fs::path(cfg.out) / (cfg.sweep.parameter + "=" + std::to_string(std::llround(v)))).string());
      p.aggregate = aggregate_seeds(p.seeds);
      for (const auto& s : p.seeds) report.artifacts.insert(report.artifacts.end(), s.artifacts.begin(), s.artifacts.end());
      report.sweep.push_back(std::move(p));
    }
  } else {
    report.seeds = run_seeds(cfg, cfg.out);
    report.aggregate = aggregate_seeds(report.seeds);
    for (const auto& s : report.seeds) report.artifacts.insert(report.artifacts.end(), s.artifacts.begin(), s.artifacts.end());
  }
  report.wall_ms = elapsed_ms(start);
  return report;
}

namespace {

// Non-finite numbers are spelled out so they survive the JSON round trip.
Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double num_back(const Json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

Json aggregates_json(const std::map<std::string, Aggregate>& agg) {
  Json out = Json::object();
  for (const auto& [k, a] : agg)
    out[k] = Json{{"median", num(a.median)}, {"q1", num(a.q1)}, {"q3", num(a.q3)}, {"iqr", num(a.iqr)}, {"count", a.count}};
  return out;
}

std::map<std::string, Aggregate> aggregates_back(const Json& j) {
  std::map<std::string, Aggregate> out;
  for (const auto& [k, a] : j.items())
    out[k] = Aggregate{num_back(a.at("median")), num_back(a.at("q1")), num_back(a.at("q3")),
                       num_back(a.at("iqr")), a.at("count").get<std::size_t>()};
  return out;
}

Json seeds_json(const std::vector<SeedSummary>& seeds) {
  Json out = Json::array();
  for (const auto& s : seeds) {
    Json metrics = Json::object();
    for (const auto& [k, v] : s.metrics) metrics[k] = num(v);
    out.push_back(Json{{"seed", s.seed},
                       {"ok", s.ok},
                       {"error", s.error},
                       {"metrics", std::move(metrics)},
                       {"details", s.details},
                       {"artifacts", s.artifacts},
                       {"wall_ms", s.wall_ms}});
  }
  return out;
}

std::vector<SeedSummary> seeds_back(const Json& j) {
  std::vector<SeedSummary> out;
  for (const auto& s : j) {
    SeedSummary x;
    x.seed = s.at("seed").get<std::uint64_t>();
    x.ok = s.at("ok").get<bool>();
    x.error = s.at("error").get<std::string>();
    for (const auto& [k, v] : s.at("metrics").items()) x.metrics[k] = num_back(v);
    x.details = s.at("details");
    x.artifacts = s.at("artifacts").get<std::vector<std::string>>();
    x.wall_ms = s.at("wall_ms").get<double>();
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace

Json report_to_json(const RunReport& report) {
  Json sweep = Json::array();
  for (const auto& p : report.sweep)
    sweep.push_back(Json{{"value", p.value}, {"seeds", seeds_json(p.seeds)}, {"aggregate", aggregates_json(p.aggregate)}});
  return Json{{"config", report.config},
              {"tool_version", report.tool_version},
              {"seeds", seeds_json(report.seeds)},
              {"aggregate", aggregates_json(report.aggregate)},
              {"sweep", std::move(sweep)},
              {"artifacts", report.artifacts},
              {"wall_ms", report.wall_ms}};
}

RunReport report_from_json(const Json& doc) {
  RunReport r;
  r.config = doc.at("config");
  r.tool_version = doc.at("tool_version").get<std::string>();
  r.seeds = seeds_back(doc.at("seeds"));
  r.aggregate = aggregates_back(doc.at("aggregate"));
  for (const auto& p : doc.at("sweep"))
    r.sweep.push_back(SweepPoint{p.at("value").get<double>(), seeds_back(p.at("seeds")),
                                 aggregates_back(p.at("aggregate"))});
  r.artifacts = doc.at("artifacts").get<std::vector<std::string>>();
  r.wall_ms = doc.at("wall_ms").get<double>();
  return r;
}

std::vector<std::string> emit_report(const RunReport& report, const std::string& dir) {
  fs::create_directories(dir);
  const std::string path = (fs::path(dir) / "report.json").string();
  io::write_text_file(path, report_to_json(report).dump(2) + "\n");
  std::vector<std::string> out = report.artifacts;
  out.push_back(path);
  return out;
}

}  // namespace fqlab
