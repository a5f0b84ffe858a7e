#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fqlab/approximators.hpp"
#include "fqlab/envs.hpp"
#include "fqlab/exact_solver.hpp"

namespace fqlab {

/// FIFO ring of transitions with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(TransitionSample t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return items_.size(); }
  bool empty() const { return size_ == 0; }

  /// i = 0 is the oldest stored transition.
  const TransitionSample& at(std::size_t i) const;
  const TransitionSample& latest() const { return at(size_ - 1); }
  const TransitionSample& sample(Rng& rng) const;

 private:
  std::vector<TransitionSample> items_;
  std::size_t head_ = 0;  // slot of the oldest element
  std::size_t size_ = 0;
};

struct DqnConfig {
  std::size_t total_steps = 20000;      // T
  std::size_t minibatch = 32;           // n
  double epsilon = 0.1;
  std::size_t target_sync_period = 100; // T_target
  double step_size = 0.5;               // constant alpha_t
  std::size_t replay_capacity = 10000;
  ApproximatorSpec approximator;
  std::uint64_t seed = 0;
  std::size_t start_state = 0;
  bool reset_on_absorbing = true;
  std::size_t eval_period = 1000;       // 0 disables periodic greedy evaluation

  void validate() const;
};

struct DqnStepRecord {
  std::size_t t = 0;
  double loss = 0.0;
  double epsilon = 0.0;
  bool synced = false;
  std::optional<double> eval_value;  // greedy policy's V(start) when evaluated
};

struct DqnResult {
  std::unique_ptr<QFunction> q;
  std::optional<TabularPolicy> policy;
  std::optional<JointPolicy> joint_policy;
  std::vector<DqnStepRecord> trace;
  std::size_t sync_count = 0;
  bool diverged = false;
};

/// Read-only view handed to an observer after every training step.
struct DqnStepView {
  std::size_t t;
  const QFunction& online;
  const QFunction& target;
  bool synced;
  std::span<const TransitionSample> minibatch;
  const ReplayBuffer& replay;
};

using DqnObserver = std::function<void(const DqnStepView&)>;

/// Uniform action with probability epsilon, otherwise the lowest-index
/// argmax of Q(state, .). Accepts epsilon in [0, 1].
std::size_t epsilon_greedy_action(const QFunction& q, const State& state, double epsilon, Rng& rng);

/// Deep Q-network loop: act epsilon-greedily, store, sample a minibatch,
/// regress on targets from the frozen target network, sync every
/// T_target steps. Transitions into absorbing states restart the episode
/// at start_state when reset_on_absorbing is set.
DqnResult dqn_train(const TabularMDP& mdp, const DqnConfig& config,
                    const DqnObserver& observer = {});

/// Minimax-DQN for the second player against a fixed first-player policy.
/// The learner's Q is over joint actions a * n_b + b and models the negated
/// payoff; it acts by the maximizing strategy of Q(s)^T and bootstraps on
/// max_nu min_pi of the target network.
DqnResult minimax_dqn_train(const TabularMarkovGame& game, const DqnConfig& config,
                            const TabularPolicy& opponent_policy, const DqnObserver& observer = {});

/// Value of the maximizing player-two strategy for Q(s)^T (i.e. max over nu
/// of min over pi).
double second_player_value(const Eigen::MatrixXd& q_state);

}  // namespace fqlab
