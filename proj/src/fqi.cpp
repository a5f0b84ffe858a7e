#include "fqlab/fqi.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fqlab/matrix_game.hpp"

namespace fqlab {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kOracleTol = 1e-10;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double default_v_max(double r_max, double gamma) { return r_max / (1.0 - gamma); }

// Sampling distribution over a finite flattened input space, made explicit.
Eigen::VectorXd finite_sigma(const SamplingSpec& spec, std::size_t n) {
  switch (spec.kind) {
    case SamplingSpec::Kind::kExplicit: {
      if (spec.weights.size() != n)
        throw std::invalid_argument("sampling.weights has length " +
                                    std::to_string(spec.weights.size()) + ", expected " +
                                    std::to_string(n));
      Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(spec.weights.data(),
                                                            static_cast<Eigen::Index>(n));
      if ((w.array() < 0.0).any()) throw std::invalid_argument("sampling.weights must be >= 0");
      if (std::abs(w.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("sampling.weights must sum to 1");
      if (spec.require_full_support && (w.array() <= 0.0).any())
        throw std::invalid_argument("sampling.weights lacks full support");
      return w;
    }
    default:
      return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  }
}

// On-policy mixture over S x A for a given greedy action per state.
Eigen::VectorXd mixture_sigma(const std::vector<std::size_t>& greedy, std::size_t n_actions,
                              double greedy_fraction) {
  const std::size_t S = greedy.size();
  const double base = (1.0 - greedy_fraction) / static_cast<double>(n_actions * S);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(S * n_actions), base);
  for (std::size_t s = 0; s < S; ++s)
    w(static_cast<Eigen::Index>(s * n_actions + greedy[s])) += greedy_fraction / static_cast<double>(S);
  return w;
}

WeightedNorm mu_norm(const std::vector<double>& mu, std::size_t n) {
  if (mu.empty()) return WeightedNorm::uniform(n, 1.0);
  if (mu.size() != n) throw std::invalid_argument("mu has the wrong length");
  WeightedNorm out{Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(n)), 1.0};
  out.validate();
  return out;
}

TrainerConfig iteration_trainer(const FqiConfig& cfg, std::size_t k) {
  TrainerConfig t = cfg.trainer;
  t.seed = derive_seed(cfg.seed, "trainer/" + std::to_string(k));
  return t;
}

bool finite_fit(const FitReport& r) { return !r.diverged && std::isfinite(r.final_mse); }

// Transitions of a finite model drawn from sigma, or every (s, a, s') once
// weighted by P in exhaustive mode.
struct FiniteDraws {
  std::vector<TransitionSample> samples;
  std::vector<std::size_t> input_action;  // regression action (joint for games)
  std::vector<double> weights;            // exhaustive mode only
};

FiniteDraws draw_mdp(const TabularMDP& mdp, const SamplingSpec& spec, std::size_t n,
                     const Eigen::VectorXd& sigma, Rng& rng) {
  FiniteDraws d;
  const std::size_t A = mdp.n_actions();
  if (spec.kind == SamplingSpec::Kind::kExhaustive) {
    for (std::size_t s = 0; s < mdp.n_states(); ++s)
      for (std::size_t a = 0; a < A; ++a) {
        const auto row = mdp.row(s, a);
        for (std::size_t next = 0; next < mdp.n_states(); ++next) {
          if (row[next] <= 0.0) continue;
          TransitionSample t;
          t.state = mdp.state(s);
          t.action = a;
          t.reward = mdp.reward_mean()(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
          t.next_state = mdp.state(next);
          d.samples.push_back(std::move(t));
          d.input_action.push_back(a);
          d.weights.push_back(row[next]);
        }
      }
    return d;
  }
  const std::span<const double> probs(sigma.data(), static_cast<std::size_t>(sigma.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = sample_discrete(rng, probs);
    d.samples.push_back(sample_transition(mdp, x / A, x % A, rng));
    d.input_action.push_back(x % A);
  }
  return d;
}

FiniteDraws draw_game(const TabularMarkovGame& game, const SamplingSpec& spec, std::size_t n,
                      const Eigen::VectorXd& sigma, Rng& rng) {
  FiniteDraws d;
  const std::size_t A = game.n_actions_p1();
  const std::size_t B = game.n_actions_p2();
  if (spec.kind == SamplingSpec::Kind::kExhaustive) {
    for (std::size_t s = 0; s < game.n_states(); ++s)
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b) {
          const auto row = game.row(s, a, b);
          for (std::size_t next = 0; next < game.n_states(); ++next) {
            if (row[next] <= 0.0) continue;
            TransitionSample t;
            t.state = game.state(s);
            t.action = a;
            t.action2 = b;
            t.reward = game.reward(s, a, b);
            t.next_state = game.state(next);
            d.samples.push_back(std::move(t));
            d.input_action.push_back(a * B + b);
            d.weights.push_back(row[next]);
          }
        }
    return d;
  }
  const std::span<const double> probs(sigma.data(), static_cast<std::size_t>(sigma.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = sample_discrete(rng, probs);
    const std::size_t joint = x % (A * B);
    d.samples.push_back(sample_transition(game, x / (A * B), joint / B, joint % B, rng));
    d.input_action.push_back(joint);
  }
  return d;
}

RegressionDataset make_dataset(const FiniteDraws& d, std::vector<double> targets) {
  RegressionDataset data;
  data.inputs.reserve(d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    data.inputs.push_back({d.samples[i].state, d.input_action[i]});
  data.targets = std::move(targets);
  data.weights = d.weights;
  return data;
}

std::unique_ptr<QFunction> fresh_or_warm(const FqiConfig& cfg, const QFunction* current,
                                         std::size_t k, std::size_t n_states,
                                         std::size_t state_dim, std::size_t n_actions,
                                         double v_max, Rng& init_rng) {
  if (cfg.warm_start && k > 0 && current != nullptr) return current->clone();
  return make_approximator(cfg.approximator, n_states, state_dim, n_actions, v_max, init_rng);
}

}  // namespace

void FqiConfig::validate() const {
  if (samples_per_iteration == 0) throw std::invalid_argument("samples_per_iteration must be >= 1");
  if (sampling.kind == SamplingSpec::Kind::kOnPolicyMixture &&
      !(sampling.greedy_fraction >= 0.0 && sampling.greedy_fraction <= 1.0))
    throw std::invalid_argument("sampling.greedy_fraction must lie in [0,1]");
  if (!(trainer.learning_rate > 0.0)) throw std::invalid_argument("trainer.learning_rate must be > 0");
  if (trainer.epochs == 0) throw std::invalid_argument("trainer.epochs must be >= 1");
}

std::vector<double> compute_targets(std::span<const TransitionSample> batch, const QFunction& q,
                                    double gamma) {
  std::vector<double> y;
  y.reserve(batch.size());
  for (const auto& t : batch) y.push_back(t.reward + gamma * max_over_actions(q, t.next_state));
  return y;
}

Eigen::MatrixXd joint_q_matrix(const QFunction& q, const State& s, std::size_t n_a,
                               std::size_t n_b) {
  if (q.n_actions() != n_a * n_b) throw std::invalid_argument("Q is not over n_a * n_b joint actions");
  const Eigen::VectorXd all = q.evaluate_all(s);
  return Eigen::Map<const RowMatrix>(all.data(), static_cast<Eigen::Index>(n_a),
                                     static_cast<Eigen::Index>(n_b));
}

std::vector<double> compute_minimax_targets(std::span<const TransitionSample> batch,
                                            const QFunction& q, double gamma, std::size_t n_a,
                                            std::size_t n_b) {
  std::vector<double> y;
  y.reserve(batch.size());
  for (const auto& t : batch)
    y.push_back(t.reward +
                gamma * matrix_game::solve(joint_q_matrix(q, t.next_state, n_a, n_b)).value);
  return y;
}

std::size_t greedy_action(const QFunction& q, const State& s) {
  const Eigen::VectorXd v = q.evaluate_all(s);
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < v.size(); ++a)
    if (v(a) > v(best)) best = a;
  return static_cast<std::size_t>(best);
}

FqiResult run_fqi(const TabularMDP& mdp, const FqiConfig& cfg) {
  cfg.validate();
  if (cfg.approximator.kind == ApproximatorSpec::Kind::kTwoLayerNtk)
    return run_fqi_projected_sgd(mdp, cfg);
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  const double v_max = default_v_max(mdp.r_max(), mdp.gamma());
  Rng sample_rng = make_stream(cfg.seed, "env");
  Rng init_rng = make_stream(cfg.seed, "init");

  const WeightedNorm mu = mu_norm(cfg.mu, S * A);
  const QTable q_star = value_iteration(mdp, kOracleTol).q;
  const Eigen::VectorXd base_sigma = finite_sigma(cfg.sampling, S * A);

  FqiResult result;
  std::unique_ptr<QFunction> q = std::make_unique<TabularQ>(S, A);
  QTable q_table = QTable::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A));
  if (cfg.record_iterates) result.iterates.push_back(q_table);

  std::optional<FiniteDraws> fixed;
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const auto start = Clock::now();
    Eigen::VectorXd sigma = base_sigma;
    if (cfg.sampling.kind == SamplingSpec::Kind::kOnPolicyMixture)
      sigma = mixture_sigma(greedy_actions(q_table), A, cfg.sampling.greedy_fraction);

    if (!fixed || cfg.fresh_samples_per_iteration)
      fixed = draw_mdp(mdp, cfg.sampling, cfg.samples_per_iteration, sigma, sample_rng);
    const RegressionDataset data = make_dataset(*fixed, compute_targets(fixed->samples, *q, mdp.gamma()));

    auto next = fresh_or_warm(cfg, q.get(), k, S, S, A, v_max, init_rng);
    const FitReport fit = next->fit(data, iteration_trainer(cfg, k));
    const QTable next_table = tabulate(*next, mdp);

    IterationRecord rec;
    rec.k = k + 1;
    rec.empirical_mse = fit.final_mse;
    if (!finite_fit(fit) || !next_table.allFinite()) {
      rec.wall_ms = elapsed_ms(start);
      result.trace.records.push_back(rec);
      result.diverged = true;
      break;
    }
    rec.one_step_error = one_step_bellman_error(next_table, q_table, mdp, WeightedNorm{sigma, 2.0});
    rec.suboptimality = suboptimality(mdp, greedy_policy(next_table), mu, q_star);
    q = std::move(next);
    q_table = next_table;
    if (cfg.record_iterates) result.iterates.push_back(q_table);
    rec.wall_ms = elapsed_ms(start);
    result.trace.records.push_back(rec);
  }
  result.policy = greedy_policy(q_table);
  result.q = std::move(q);
  return result;
}

FqiResult run_fqi(const ContinuousMDP& mdp, const FqiConfig& cfg) {
  cfg.validate();
  if (cfg.approximator.kind == ApproximatorSpec::Kind::kTwoLayerNtk)
    return run_fqi_projected_sgd(mdp, cfg);
  if (cfg.approximator.kind == ApproximatorSpec::Kind::kTabular)
    throw std::invalid_argument("a tabular approximator needs a finite state space");
  if (cfg.sampling.kind == SamplingSpec::Kind::kExplicit ||
      cfg.sampling.kind == SamplingSpec::Kind::kExhaustive)
    throw std::invalid_argument("continuous models support uniform or on-policy sampling only");
  const std::size_t A = mdp.n_actions();
  const double v_max = default_v_max(mdp.r_max(), mdp.gamma());
  Rng sample_rng = make_stream(cfg.seed, "env");
  Rng init_rng = make_stream(cfg.seed, "init");
  Rng diag_rng = make_stream(cfg.seed, "diagnostics");

  FqiResult result;
  std::unique_ptr<QFunction> q = std::make_unique<LinearQ>(mdp.state_dim(), A);
  std::vector<TransitionSample> batch;
  std::vector<std::size_t> actions;

  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const auto start = Clock::now();
    if (batch.empty() || cfg.fresh_samples_per_iteration) {
      batch.clear();
      actions.clear();
      for (std::size_t i = 0; i < cfg.samples_per_iteration; ++i) {
        const State s = mdp.random_state(sample_rng);
        std::size_t a = uniform_index(sample_rng, A);
        if (cfg.sampling.kind == SamplingSpec::Kind::kOnPolicyMixture &&
            uniform01(sample_rng) < cfg.sampling.greedy_fraction)
          a = greedy_action(*q, s);
        batch.push_back(sample_transition(mdp, s, a, sample_rng));
        actions.push_back(a);
      }
    }
    RegressionDataset data;
    for (std::size_t i = 0; i < batch.size(); ++i) data.inputs.push_back({batch[i].state, actions[i]});
    data.targets = compute_targets(batch, *q, mdp.gamma());

    auto next = fresh_or_warm(cfg, q.get(), k, 0, mdp.state_dim(), A, v_max, init_rng);
    const FitReport fit = next->fit(data, iteration_trainer(cfg, k));

    IterationRecord rec;
    rec.k = k + 1;
    rec.empirical_mse = fit.final_mse;
    if (!finite_fit(fit)) {
      rec.wall_ms = elapsed_ms(start);
      result.trace.records.push_back(rec);
      result.diverged = true;
      break;
    }
    if (cfg.continuous_error_samples > 0)
      rec.one_step_error = one_step_bellman_error(*next, *q, mdp, cfg.continuous_error_samples,
                                                  cfg.continuous_inner_samples, diag_rng)
                               .value;
    q = std::move(next);
    rec.wall_ms = elapsed_ms(start);
    result.trace.records.push_back(rec);
  }
  result.q = std::move(q);
  return result;
}

FqiResult run_minimax_fqi(const TabularMarkovGame& game, const FqiConfig& cfg) {
  cfg.validate();
  if (cfg.sampling.kind == SamplingSpec::Kind::kOnPolicyMixture)
    throw std::invalid_argument("on-policy sampling is not defined for games");
  if (cfg.approximator.kind == ApproximatorSpec::Kind::kTwoLayerNtk)
    throw std::invalid_argument("projected SGD is only available for single-agent models");
  const std::size_t S = game.n_states();
  const std::size_t A = game.n_actions_p1();
  const std::size_t B = game.n_actions_p2();
  const double v_max = default_v_max(game.r_max(), game.gamma());
  Rng sample_rng = make_stream(cfg.seed, "env");
  Rng init_rng = make_stream(cfg.seed, "init");

  const WeightedNorm mu = mu_norm(cfg.mu, S * A * B);
  const GameQTable q_star = nash_value_iteration(game, kOracleTol).q;
  const Eigen::VectorXd sigma = finite_sigma(cfg.sampling, S * A * B);

  FqiResult result;
  std::unique_ptr<QFunction> q = std::make_unique<TabularQ>(S, A * B);
  GameQTable q_table(S, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(A), static_cast<Eigen::Index>(B)));
  if (cfg.record_iterates) result.game_iterates.push_back(q_table);

  std::optional<FiniteDraws> fixed;
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const auto start = Clock::now();
    if (!fixed || cfg.fresh_samples_per_iteration)
      fixed = draw_game(game, cfg.sampling, cfg.samples_per_iteration, sigma, sample_rng);
    // One LP per state instead of one per sample.
    const Eigen::VectorXd values = game_state_values(q_table);
    std::vector<double> targets;
    targets.reserve(fixed->samples.size());
    for (const auto& t : fixed->samples)
      targets.push_back(t.reward + game.gamma() * values(static_cast<Eigen::Index>(t.next_state.index)));
    const RegressionDataset data = make_dataset(*fixed, std::move(targets));

    auto next = fresh_or_warm(cfg, q.get(), k, S, S, A * B, v_max, init_rng);
    const FitReport fit = next->fit(data, iteration_trainer(cfg, k));
    const GameQTable next_table = tabulate(*next, game);

    IterationRecord rec;
    rec.k = k + 1;
    rec.empirical_mse = fit.final_mse;
    bool finite = finite_fit(fit);
    for (const auto& m : next_table) finite = finite && m.allFinite();
    if (!finite) {
      rec.wall_ms = elapsed_ms(start);
      result.trace.records.push_back(rec);
      result.diverged = true;
      break;
    }
    rec.one_step_error = one_step_bellman_error(next_table, q_table, game, WeightedNorm{sigma, 2.0});
    rec.suboptimality =
        game_suboptimality(game, equilibrium_joint_policy(game, next_table).p1, mu, q_star);
    q = std::move(next);
    q_table = next_table;
    if (cfg.record_iterates) result.game_iterates.push_back(q_table);
    rec.wall_ms = elapsed_ms(start);
    result.trace.records.push_back(rec);
  }
  result.joint_policy = equilibrium_joint_policy(game, q_table);
  result.q = std::move(q);
  return result;
}

namespace {

// Shared Algorithm-5 loop; `draw` produces one fresh sample from sigma and
// `after_iteration` records model-specific diagnostics.
template <class Draw, class After>
FqiResult projected_sgd_loop(const FqiConfig& cfg, TwoLayerNtkNetwork init, double gamma,
                             Draw&& draw, After&& after_iteration) {
  const std::size_t steps = cfg.sgd_steps.value_or(init.width() / 2);
  const double eta = cfg.sgd_eta > 0.0
                         ? cfg.sgd_eta
                         : 0.1 / std::sqrt(static_cast<double>(std::max<std::size_t>(steps, 1)));
  FqiResult result;
  auto q = std::make_unique<TwoLayerNtkNetwork>(init);
  after_iteration(result, nullptr, *q, 0, 0.0, Clock::now());
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const auto start = Clock::now();
    TwoLayerNtkNetwork net = init;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(init.weights().rows(), init.weights().cols());
    double sq_err = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const TransitionSample sample = draw(*q);
      const double y = sample.reward + gamma * max_over_actions(*q, sample.next_state);
      const Eigen::VectorXd x = net.input(sample.state, sample.action);
      const double r = net.evaluate_input(x) - y;
      sq_err += r * r;
      projected_sgd_step(net, x, y, eta);
      result.max_ball_distance = std::max(result.max_ball_distance, net.distance_from_anchor());
      sum += net.weights();
    }
    auto next = std::make_unique<TwoLayerNtkNetwork>(init);
    if (steps > 0) next->set_weights(sum / static_cast<double>(steps));
    const double mse = steps > 0 ? sq_err / static_cast<double>(steps) : 0.0;
    if (!std::isfinite(mse) || !next->weights().allFinite()) {
      IterationRecord rec;
      rec.k = k + 1;
      rec.empirical_mse = mse;
      rec.wall_ms = elapsed_ms(start);
      result.trace.records.push_back(rec);
      result.diverged = true;
      break;
    }
    after_iteration(result, q.get(), *next, k + 1, mse, start);
    q = std::move(next);
  }
  result.q = std::move(q);
  return result;
}

}  // namespace

FqiResult run_fqi_projected_sgd(const ContinuousMDP& mdp, const FqiConfig& cfg) {
  cfg.validate();
  const std::size_t A = mdp.n_actions();
  Rng init_rng = make_stream(cfg.seed, "init");
  Rng sample_rng = make_stream(cfg.seed, "env");
  Rng diag_rng = make_stream(cfg.seed, "diagnostics");
  TwoLayerNtkNetwork init = symmetric_init(cfg.approximator.ntk_half_width, mdp.state_dim(), A,
                                           cfg.approximator.ntk_radius, init_rng);
  auto draw = [&](const QFunction& q) {
    const State s = mdp.random_state(sample_rng);
    std::size_t a = uniform_index(sample_rng, A);
    if (cfg.sampling.kind == SamplingSpec::Kind::kOnPolicyMixture &&
        uniform01(sample_rng) < cfg.sampling.greedy_fraction)
      a = greedy_action(q, s);
    return sample_transition(mdp, s, a, sample_rng);
  };
  auto after = [&](FqiResult& res, const QFunction* prev, const QFunction& next, std::size_t k,
                   double mse, Clock::time_point start) {
    if (prev == nullptr) return;
    IterationRecord rec;
    rec.k = k;
    rec.empirical_mse = mse;
    if (cfg.continuous_error_samples > 0)
      rec.one_step_error = one_step_bellman_error(next, *prev, mdp, cfg.continuous_error_samples,
                                                  cfg.continuous_inner_samples, diag_rng)
                               .value;
    rec.wall_ms = elapsed_ms(start);
    res.trace.records.push_back(rec);
  };
  return projected_sgd_loop(cfg, std::move(init), mdp.gamma(), draw, after);
}

FqiResult run_fqi_projected_sgd(const TabularMDP& mdp, const FqiConfig& cfg) {
  cfg.validate();
  if (cfg.sampling.kind == SamplingSpec::Kind::kExhaustive)
    throw std::invalid_argument("projected SGD draws single samples; exhaustive sampling is not supported");
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  Rng init_rng = make_stream(cfg.seed, "init");
  Rng sample_rng = make_stream(cfg.seed, "env");
  TwoLayerNtkNetwork init = symmetric_init(cfg.approximator.ntk_half_width, S, A,
                                           cfg.approximator.ntk_radius, init_rng);
  const WeightedNorm mu = mu_norm(cfg.mu, S * A);
  const QTable q_star = value_iteration(mdp, kOracleTol).q;
  const Eigen::VectorXd base_sigma = finite_sigma(cfg.sampling, S * A);
  Eigen::VectorXd sigma = base_sigma;
  QTable prev_table;

  auto draw = [&](const QFunction&) {
    const std::size_t x = sample_discrete(
        sample_rng, std::span<const double>(sigma.data(), static_cast<std::size_t>(sigma.size())));
    return sample_transition(mdp, x / A, x % A, sample_rng);
  };
  auto after = [&](FqiResult& res, const QFunction* prev, const QFunction& next, std::size_t k,
                   double mse, Clock::time_point start) {
    const QTable table = tabulate(next, mdp);
    if (cfg.record_iterates) res.iterates.push_back(table);
    if (prev != nullptr) {
      IterationRecord rec;
      rec.k = k;
      rec.empirical_mse = mse;
      rec.one_step_error = one_step_bellman_error(table, prev_table, mdp, WeightedNorm{sigma, 2.0});
      rec.suboptimality = suboptimality(mdp, greedy_policy(table), mu, q_star);
      rec.wall_ms = elapsed_ms(start);
      res.trace.records.push_back(rec);
    }
    prev_table = table;
    if (cfg.sampling.kind == SamplingSpec::Kind::kOnPolicyMixture)
      sigma = mixture_sigma(greedy_actions(table), A, cfg.sampling.greedy_fraction);
  };
  FqiResult result = projected_sgd_loop(cfg, std::move(init), mdp.gamma(), draw, after);
  result.policy = greedy_policy(prev_table);
  return result;
}

}  // namespace fqlab
