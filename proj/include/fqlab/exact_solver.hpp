#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fqlab/envs.hpp"

namespace fqlab {

/// Action-value table, n_states x n_actions.
using QTable = Eigen::MatrixXd;

/// Game action-value table: one n_a x n_b matrix per state.
using GameQTable = std::vector<Eigen::MatrixXd>;

/// Stochastic policy, one probability row per state.
struct TabularPolicy {
  Eigen::MatrixXd probs;

  std::size_t n_states() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs.cols()); }

  /// Throws std::invalid_argument unless every row is on the simplex (1e-12).
  void validate() const;

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);
  static TabularPolicy deterministic(const std::vector<std::size_t>& actions, std::size_t n_actions);
};

struct JointPolicy {
  TabularPolicy p1;
  TabularPolicy p2;
};

/// Thrown when an iterative solver runs out of iterations. Carries the last
/// sup-norm step so the caller can see how far it got.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct ValueIterationResult {
  QTable q;
  std::size_t iterations = 0;
  double residual = 0.0;  // ||T Q - Q||_inf at the returned Q
};

struct GameValueIterationResult {
  GameQTable q;
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Single-agent operators ----------------------------------------------------

/// (TQ)(s,a) = r(s,a) + gamma * sum_s' P(s'|s,a) max_a' Q(s',a').
QTable bellman_optimality(const TabularMDP& mdp, const QTable& q);

/// (T^pi Q)(s,a) = r(s,a) + gamma * (P^pi Q)(s,a).
QTable bellman_policy(const TabularMDP& mdp, const QTable& q, const TabularPolicy& pi);

/// (P^pi f)(s,a) = sum_s' P(s'|s,a) sum_a' pi(a'|s') f(s',a').
QTable apply_p_pi(const TabularMDP& mdp, const QTable& f, const TabularPolicy& pi);

/// Iterates Q_{k+1} = T Q_k from Q_0 = 0 until ||Q_{k+1} - Q_k||_inf <=
/// tol (1 - gamma) / (2 gamma), which puts the result within tol of Q* and
/// gives ||T Q - Q||_inf <= tol. Throws ConvergenceError past max_iters.
ValueIterationResult value_iteration(const TabularMDP& mdp, double tol,
                                     std::size_t max_iters = 100000);

/// Q_0 = 0, Q_1 = T Q_0, ..., Q_K.
std::vector<QTable> value_iteration_iterates(const TabularMDP& mdp, std::size_t k);

/// Lowest-index maximizer of each row.
std::vector<std::size_t> greedy_actions(const QTable& q);
TabularPolicy greedy_policy(const QTable& q);

/// Q^pi by a dense solve of V = r_pi + gamma P_pi V, then Q = r + gamma P V.
QTable policy_evaluation(const TabularMDP& mdp, const TabularPolicy& pi);

// Zero-sum Markov games -----------------------------------------------------

/// (TQ)(s,a,b) = r(s,a,b) + gamma * sum_s' P(s'|s,a,b) val(Q(s',.,.)).
GameQTable game_bellman_optimality(const TabularMarkovGame& game, const GameQTable& q);

/// Matrix-game values of Q(s,.,.) for every s.
Eigen::VectorXd game_state_values(const GameQTable& q);

GameValueIterationResult nash_value_iteration(const TabularMarkovGame& game, double tol,
                                              std::size_t max_iters = 100000);
std::vector<GameQTable> nash_value_iteration_iterates(const TabularMarkovGame& game, std::size_t k);

/// Per-state minimax strategies of Q(s,.,.); p1 maximizes, p2 minimizes.
JointPolicy equilibrium_joint_policy(const TabularMarkovGame& game, const GameQTable& q);

/// The MDP player two faces when player one is fixed to pi. Player two
/// maximizes the negated payoff.
TabularMDP induced_opponent_mdp(const TabularMarkovGame& game, const TabularPolicy& pi);

/// nu*_pi: greedy policy of the optimal Q of induced_opponent_mdp(game, pi).
TabularPolicy best_response_policy(const TabularMarkovGame& game, const TabularPolicy& pi);

/// Q^{pi,nu}(s,a,b) by an exact dense solve.
GameQTable joint_policy_evaluation(const TabularMarkovGame& game, const TabularPolicy& pi,
                                   const TabularPolicy& nu);

/// Reads a game with a single player-two action as an MDP over player one's
/// actions. Throws unless n_actions_p2 == 1.
TabularMDP single_agent_view(const TabularMarkovGame& game);

/// Helpers used throughout the diagnostics and tests.
double sup_norm(const QTable& q);
double sup_norm(const GameQTable& q);
GameQTable game_difference(const GameQTable& a, const GameQTable& b);

}  // namespace fqlab
