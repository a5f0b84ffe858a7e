#include "fqlab/dqn.hpp"

#include <cmath>
#include <stdexcept>

#include "fqlab/diagnostics.hpp"
#include "fqlab/fqi.hpp"
#include "fqlab/matrix_game.hpp"

namespace fqlab {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : items_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be >= 1");
}

void ReplayBuffer::push(TransitionSample t) {
  if (size_ < items_.size()) {
    items_[(head_ + size_) % items_.size()] = std::move(t);
    ++size_;
  } else {
    items_[head_] = std::move(t);
    head_ = (head_ + 1) % items_.size();
  }
}

const TransitionSample& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

const TransitionSample& ReplayBuffer::sample(Rng& rng) const {
  if (size_ == 0) throw std::out_of_range("sampling from an empty replay buffer");
  return at(uniform_index(rng, size_));
}

void DqnConfig::validate() const {
  if (total_steps == 0) throw std::invalid_argument("total_steps must be >= 1");
  if (minibatch == 0) throw std::invalid_argument("minibatch must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");
  if (target_sync_period == 0) throw std::invalid_argument("target_sync_period must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("step_size must be > 0");
  if (replay_capacity == 0) throw std::invalid_argument("replay_capacity must be >= 1");
}

std::size_t epsilon_greedy_action(const QFunction& q, const State& state, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0,1]");
  if (uniform01(rng) < epsilon) return uniform_index(rng, q.n_actions());
  return greedy_action(q, state);
}

double second_player_value(const Eigen::MatrixXd& q_state) {
  return matrix_game::solve(q_state.transpose()).value;
}

namespace {

std::vector<bool> absorbing_states(const RowMatrix& transition, std::size_t n_states,
                                   std::size_t n_rows_per_state) {
  std::vector<bool> out(n_states, false);
  for (std::size_t s = 0; s < n_states; ++s) {
    bool self = true;
    for (std::size_t r = 0; r < n_rows_per_state && self; ++r)
      self = transition(static_cast<Eigen::Index>(s * n_rows_per_state + r),
                        static_cast<Eigen::Index>(s)) == 1.0;
    out[s] = self;
  }
  return out;
}

// Shared online loop. `act` picks the stored transition from the current
// state; `target_value` is the bootstrap value of a next state under the
// frozen network; `evaluate` returns the periodic evaluation.
template <class Act, class TargetValue, class Evaluate>
DqnResult online_loop(const DqnConfig& cfg, std::unique_ptr<QFunction> online, std::size_t n_states,
                      const std::vector<bool>& absorbing, double gamma, Act&& act,
                      TargetValue&& target_value, Evaluate&& evaluate,
                      const DqnObserver& observer) {
  if (cfg.start_state >= n_states) throw std::out_of_range("start_state out of range");
  Rng batch_rng = make_stream(cfg.seed, "minibatch");
  ReplayBuffer replay(cfg.replay_capacity);
  std::unique_ptr<QFunction> target = online->clone();

  DqnResult result;
  result.trace.reserve(cfg.total_steps);
  std::size_t s = cfg.start_state;
  std::vector<TransitionSample> batch(cfg.minibatch);
  std::vector<StateAction> inputs(cfg.minibatch);
  std::vector<double> targets(cfg.minibatch);

  for (std::size_t t = 1; t <= cfg.total_steps; ++t) {
    TransitionSample tr = act(*online, s);
    const std::size_t next = tr.next_state.index;
    replay.push(std::move(tr));

    for (std::size_t i = 0; i < cfg.minibatch; ++i) {
      batch[i] = replay.sample(batch_rng);
      inputs[i] = {batch[i].state, batch[i].action};
      targets[i] = batch[i].reward + gamma * target_value(*target, batch[i].next_state);
    }
    DqnStepRecord rec;
    rec.t = t;
    rec.epsilon = cfg.epsilon;
    rec.loss = online->gradient_step(inputs, targets, cfg.step_size);

    if (t % cfg.target_sync_period == 0) {
      target = online->clone();
      rec.synced = true;
      ++result.sync_count;
    }
    if (cfg.eval_period > 0 && t % cfg.eval_period == 0) rec.eval_value = evaluate(*online);
    if (observer) observer(DqnStepView{t, *online, *target, rec.synced, batch, replay});
    result.trace.push_back(rec);
    if (!std::isfinite(rec.loss)) {
      result.diverged = true;
      break;
    }
    s = (cfg.reset_on_absorbing && absorbing[next]) ? cfg.start_state : next;
  }
  result.q = std::move(online);
  return result;
}

}  // namespace

DqnResult dqn_train(const TabularMDP& mdp, const DqnConfig& cfg, const DqnObserver& observer) {
  cfg.validate();
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  Rng init_rng = make_stream(cfg.seed, "init");
  Rng explore_rng = make_stream(cfg.seed, "explore");
  Rng env_rng = make_stream(cfg.seed, "env");
  auto online = make_approximator(cfg.approximator, S, S, A, mdp.r_max() / (1.0 - mdp.gamma()), init_rng);

  auto act = [&](const QFunction& q, std::size_t s) {
    const std::size_t a = epsilon_greedy_action(q, mdp.state(s), cfg.epsilon, explore_rng);
    return sample_transition(mdp, s, a, env_rng);
  };
  auto target_value = [](const QFunction& q, const State& next) { return max_over_actions(q, next); };
  auto evaluate = [&](const QFunction& q) {
    const QTable table = tabulate(q, mdp);
    const QTable q_pi = policy_evaluation(mdp, greedy_policy(table));
    const auto start = static_cast<Eigen::Index>(cfg.start_state);
    return q_pi(start, static_cast<Eigen::Index>(greedy_actions(table)[cfg.start_state]));
  };
  DqnResult result = online_loop(cfg, std::move(online), S, absorbing_states(mdp.transition(), S, A),
                                 mdp.gamma(), act, target_value, evaluate, observer);
  result.policy = greedy_policy(tabulate(*result.q, mdp));
  return result;
}

DqnResult minimax_dqn_train(const TabularMarkovGame& game, const DqnConfig& cfg,
                            const TabularPolicy& opponent_policy, const DqnObserver& observer) {
  cfg.validate();
  const std::size_t S = game.n_states();
  const std::size_t A = game.n_actions_p1();
  const std::size_t B = game.n_actions_p2();
  if (opponent_policy.n_states() != S || opponent_policy.n_actions() != A)
    throw std::invalid_argument("opponent policy shape does not match the game");
  opponent_policy.validate();
  Rng init_rng = make_stream(cfg.seed, "init");
  Rng explore_rng = make_stream(cfg.seed, "explore");
  Rng opponent_rng = make_stream(cfg.seed, "opponent");
  Rng env_rng = make_stream(cfg.seed, "env");
  auto online =
      make_approximator(cfg.approximator, S, S, A * B, game.r_max() / (1.0 - game.gamma()), init_rng);

  auto act = [&](const QFunction& q, std::size_t s) {
    const State st = game.state(s);
    std::size_t b;
    if (uniform01(explore_rng) < cfg.epsilon) {
      b = uniform_index(explore_rng, B);
    } else {
      const auto sol = matrix_game::solve(joint_q_matrix(q, st, A, B).transpose());
      b = sample_discrete(explore_rng, std::span<const double>(sol.row_strategy.data(), B));
    }
    const Eigen::VectorXd pi_s = opponent_policy.probs.row(static_cast<Eigen::Index>(s)).transpose();
    const std::size_t a = sample_discrete(opponent_rng, std::span<const double>(pi_s.data(), A));
    TransitionSample tr = sample_transition(game, s, a, b, env_rng);
    tr.reward = -tr.reward;
    tr.action = a * B + b;
    tr.action2 = b;
    return tr;
  };
  auto target_value = [&](const QFunction& q, const State& next) {
    return second_player_value(joint_q_matrix(q, next, A, B));
  };
  auto learner_table = [&](const QFunction& q) {
    GameQTable table = tabulate(q, game);
    for (auto& m : table) m = -m;
    return table;
  };
  auto evaluate = [&](const QFunction& q) {
    const JointPolicy jp = equilibrium_joint_policy(game, learner_table(q));
    const GameQTable q_pi = joint_policy_evaluation(game, opponent_policy, jp.p2);
    const auto s0 = static_cast<Eigen::Index>(cfg.start_state);
    return -(opponent_policy.probs.row(s0) * q_pi[cfg.start_state] * jp.p2.probs.row(s0).transpose())(0, 0);
  };
  DqnResult result = online_loop(cfg, std::move(online), S, absorbing_states(game.transition(), S, A * B),
                                 game.gamma(), act, target_value, evaluate, observer);
  result.joint_policy = equilibrium_joint_policy(game, learner_table(*result.q));
  return result;
}

}  // namespace fqlab
