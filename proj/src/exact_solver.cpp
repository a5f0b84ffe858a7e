#include "fqlab/exact_solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fqlab/matrix_game.hpp"

namespace fqlab {

namespace {

void check_q_shape(const TabularMDP& mdp, const QTable& q) {
  if (static_cast<std::size_t>(q.rows()) != mdp.n_states() ||
      static_cast<std::size_t>(q.cols()) != mdp.n_actions())
    throw std::invalid_argument("Q table shape does not match the MDP");
}

void check_policy_shape(std::size_t n_states, std::size_t n_actions, const TabularPolicy& pi) {
  if (pi.n_states() != n_states || pi.n_actions() != n_actions)
    throw std::invalid_argument("policy shape does not match the model");
  pi.validate();
}

void check_game_q_shape(const TabularMarkovGame& game, const GameQTable& q) {
  if (q.size() != game.n_states())
    throw std::invalid_argument("game Q table has the wrong number of states");
  for (const auto& m : q)
    if (static_cast<std::size_t>(m.rows()) != game.n_actions_p1() ||
        static_cast<std::size_t>(m.cols()) != game.n_actions_p2())
      throw std::invalid_argument("game Q table slice has the wrong shape");
}

// (P V) laid out as an n_states x n_actions table.
QTable expected_next(const TabularMDP& mdp, const Eigen::VectorXd& v) {
  const Eigen::VectorXd pv = mdp.transition() * v;
  return Eigen::Map<const RowMatrix>(pv.data(), static_cast<Eigen::Index>(mdp.n_states()),
                                     static_cast<Eigen::Index>(mdp.n_actions()));
}

GameQTable game_backup(const TabularMarkovGame& game, const Eigen::VectorXd& v) {
  const Eigen::VectorXd pv = game.transition() * v;
  GameQTable out(game.n_states());
  const auto n_a = static_cast<Eigen::Index>(game.n_actions_p1());
  const auto n_b = static_cast<Eigen::Index>(game.n_actions_p2());
  for (std::size_t s = 0; s < game.n_states(); ++s) {
    out[s] = game.reward_mean()[s] +
             game.gamma() * Eigen::Map<const RowMatrix>(pv.data() + static_cast<Eigen::Index>(s) * n_a * n_b,
                                                        n_a, n_b);
  }
  return out;
}

// Dense solve of (I - gamma P) v = r with a singularity guard.
Eigen::VectorXd solve_discounted(const Eigen::MatrixXd& p, const Eigen::VectorXd& r, double gamma) {
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(p.rows(), p.cols()) - gamma * p;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible()) throw std::runtime_error("policy evaluation system is singular");
  return lu.solve(r);
}

}  // namespace

void TabularPolicy::validate() const {
  if (probs.rows() == 0 || probs.cols() == 0) throw std::invalid_argument("empty policy");
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    if ((probs.row(s).array() < 0.0).any() || !probs.row(s).allFinite())
      throw std::invalid_argument("policy row " + std::to_string(s) + " has a negative entry");
    if (std::abs(probs.row(s).sum() - 1.0) > 1e-12)
      throw std::invalid_argument("policy row " + std::to_string(s) + " does not sum to 1");
  }
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  return TabularPolicy{Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_states),
                                                 static_cast<Eigen::Index>(n_actions),
                                                 1.0 / static_cast<double>(n_actions))};
}

TabularPolicy TabularPolicy::deterministic(const std::vector<std::size_t>& actions,
                                           std::size_t n_actions) {
  TabularPolicy pi{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()),
                                         static_cast<Eigen::Index>(n_actions))};
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= n_actions) throw std::out_of_range("action index out of range");
    pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
  }
  return pi;
}

QTable bellman_optimality(const TabularMDP& mdp, const QTable& q) {
  check_q_shape(mdp, q);
  const Eigen::VectorXd v = q.rowwise().maxCoeff();
  return mdp.reward_mean() + mdp.gamma() * expected_next(mdp, v);
}

QTable apply_p_pi(const TabularMDP& mdp, const QTable& f, const TabularPolicy& pi) {
  check_q_shape(mdp, f);
  check_policy_shape(mdp.n_states(), mdp.n_actions(), pi);
  const Eigen::VectorXd v = pi.probs.cwiseProduct(f).rowwise().sum();
  return expected_next(mdp, v);
}

QTable bellman_policy(const TabularMDP& mdp, const QTable& q, const TabularPolicy& pi) {
  return mdp.reward_mean() + mdp.gamma() * apply_p_pi(mdp, q, pi);
}

ValueIterationResult value_iteration(const TabularMDP& mdp, double tol, std::size_t max_iters) {
  if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
  const double step_tol = tol * (1.0 - mdp.gamma()) / (2.0 * mdp.gamma());
  QTable q = QTable::Zero(static_cast<Eigen::Index>(mdp.n_states()),
                          static_cast<Eigen::Index>(mdp.n_actions()));
  double step = 0.0;
  for (std::size_t k = 1; k <= max_iters; ++k) {
    QTable next = bellman_optimality(mdp, q);
    step = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (step <= step_tol) {
      const double residual = (bellman_optimality(mdp, q) - q).cwiseAbs().maxCoeff();
      return {std::move(q), k, residual};
    }
  }
  throw ConvergenceError("value iteration hit max_iters with step " + std::to_string(step), step);
}

std::vector<QTable> value_iteration_iterates(const TabularMDP& mdp, std::size_t k) {
  std::vector<QTable> out;
  out.reserve(k + 1);
  out.push_back(QTable::Zero(static_cast<Eigen::Index>(mdp.n_states()),
                             static_cast<Eigen::Index>(mdp.n_actions())));
  for (std::size_t i = 0; i < k; ++i) out.push_back(bellman_optimality(mdp, out.back()));
  return out;
}

std::vector<std::size_t> greedy_actions(const QTable& q) {
  std::vector<std::size_t> out(static_cast<std::size_t>(q.rows()), 0);
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.cols(); ++a)
      if (q(s, a) > q(s, best)) best = a;
    out[static_cast<std::size_t>(s)] = static_cast<std::size_t>(best);
  }
  return out;
}

TabularPolicy greedy_policy(const QTable& q) {
  return TabularPolicy::deterministic(greedy_actions(q), static_cast<std::size_t>(q.cols()));
}

QTable policy_evaluation(const TabularMDP& mdp, const TabularPolicy& pi) {
  check_policy_shape(mdp.n_states(), mdp.n_actions(), pi);
  const auto S = static_cast<Eigen::Index>(mdp.n_states());
  const auto A = static_cast<Eigen::Index>(mdp.n_actions());
  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(S, S);
  Eigen::VectorXd r_pi = pi.probs.cwiseProduct(mdp.reward_mean()).rowwise().sum();
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a)
      p_pi.row(s) += pi.probs(s, a) * mdp.transition().row(s * A + a);
  const Eigen::VectorXd v = solve_discounted(p_pi, r_pi, mdp.gamma());
  return mdp.reward_mean() + mdp.gamma() * expected_next(mdp, v);
}

Eigen::VectorXd game_state_values(const GameQTable& q) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(q.size()));
  for (std::size_t s = 0; s < q.size(); ++s)
    v(static_cast<Eigen::Index>(s)) = matrix_game::maximin_over_distributions(q[s]);
  return v;
}

GameQTable game_bellman_optimality(const TabularMarkovGame& game, const GameQTable& q) {
  check_game_q_shape(game, q);
  return game_backup(game, game_state_values(q));
}

GameValueIterationResult nash_value_iteration(const TabularMarkovGame& game, double tol,
                                              std::size_t max_iters) {
  if (!(tol > 0.0)) throw std::invalid_argument("nash_value_iteration: tol must be positive");
  const double step_tol = tol * (1.0 - game.gamma()) / (2.0 * game.gamma());
  GameQTable q(game.n_states(), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(game.n_actions_p1()),
                                                      static_cast<Eigen::Index>(game.n_actions_p2())));
  double step = 0.0;
  for (std::size_t k = 1; k <= max_iters; ++k) {
    GameQTable next = game_bellman_optimality(game, q);
    step = sup_norm(game_difference(next, q));
    q = std::move(next);
    if (step <= step_tol) {
      const double residual = sup_norm(game_difference(game_bellman_optimality(game, q), q));
      return {std::move(q), k, residual};
    }
  }
  throw ConvergenceError("Nash value iteration hit max_iters with step " + std::to_string(step),
                         step);
}

std::vector<GameQTable> nash_value_iteration_iterates(const TabularMarkovGame& game, std::size_t k) {
  std::vector<GameQTable> out;
  out.reserve(k + 1);
  out.emplace_back(game.n_states(), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(game.n_actions_p1()),
                                                          static_cast<Eigen::Index>(game.n_actions_p2())));
  for (std::size_t i = 0; i < k; ++i) out.push_back(game_bellman_optimality(game, out.back()));
  return out;
}

JointPolicy equilibrium_joint_policy(const TabularMarkovGame& game, const GameQTable& q) {
  check_game_q_shape(game, q);
  const auto S = static_cast<Eigen::Index>(game.n_states());
  JointPolicy out{TabularPolicy{Eigen::MatrixXd(S, static_cast<Eigen::Index>(game.n_actions_p1()))},
                  TabularPolicy{Eigen::MatrixXd(S, static_cast<Eigen::Index>(game.n_actions_p2()))}};
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto sol = matrix_game::solve(q[static_cast<std::size_t>(s)]);
    out.p1.probs.row(s) = sol.row_strategy.transpose();
    out.p2.probs.row(s) = sol.col_strategy.transpose();
  }
  return out;
}

TabularMDP induced_opponent_mdp(const TabularMarkovGame& game, const TabularPolicy& pi) {
  check_policy_shape(game.n_states(), game.n_actions_p1(), pi);
  const auto S = static_cast<Eigen::Index>(game.n_states());
  const auto A = static_cast<Eigen::Index>(game.n_actions_p1());
  const auto B = static_cast<Eigen::Index>(game.n_actions_p2());
  RowMatrix transition = RowMatrix::Zero(S * B, S);
  Eigen::MatrixXd reward = Eigen::MatrixXd::Zero(S, B);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index a = 0; a < A; ++a) {
        const double w = pi.probs(s, a);
        if (w == 0.0) continue;
        transition.row(s * B + b) += w * game.transition().row((s * A + a) * B + b);
        reward(s, b) -= w * game.reward_mean()[static_cast<std::size_t>(s)](a, b);
      }
      // Renormalize away rounding so the row passes the 1e-12 stochasticity check.
      transition.row(s * B + b) /= transition.row(s * B + b).sum();
    }
  }
  reward = reward.cwiseMax(-game.r_max()).cwiseMin(game.r_max());
  return TabularMDP(std::move(transition), std::move(reward), game.gamma(), game.r_max());
}

TabularPolicy best_response_policy(const TabularMarkovGame& game, const TabularPolicy& pi) {
  const TabularMDP induced = induced_opponent_mdp(game, pi);
  return greedy_policy(value_iteration(induced, 1e-11).q);
}

GameQTable joint_policy_evaluation(const TabularMarkovGame& game, const TabularPolicy& pi,
                                   const TabularPolicy& nu) {
  check_policy_shape(game.n_states(), game.n_actions_p1(), pi);
  check_policy_shape(game.n_states(), game.n_actions_p2(), nu);
  const auto S = static_cast<Eigen::Index>(game.n_states());
  const auto A = static_cast<Eigen::Index>(game.n_actions_p1());
  const auto B = static_cast<Eigen::Index>(game.n_actions_p2());
  Eigen::MatrixXd p_joint = Eigen::MatrixXd::Zero(S, S);
  Eigen::VectorXd r_joint = Eigen::VectorXd::Zero(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index a = 0; a < A; ++a) {
      for (Eigen::Index b = 0; b < B; ++b) {
        const double w = pi.probs(s, a) * nu.probs(s, b);
        if (w == 0.0) continue;
        p_joint.row(s) += w * game.transition().row((s * A + a) * B + b);
        r_joint(s) += w * game.reward_mean()[static_cast<std::size_t>(s)](a, b);
      }
    }
  }
  return game_backup(game, solve_discounted(p_joint, r_joint, game.gamma()));
}

TabularMDP single_agent_view(const TabularMarkovGame& game) {
  if (game.n_actions_p2() != 1)
    throw std::invalid_argument("single_agent_view needs a game with one player-two action");
  const auto S = static_cast<Eigen::Index>(game.n_states());
  const auto A = static_cast<Eigen::Index>(game.n_actions_p1());
  Eigen::MatrixXd reward(S, A);
  for (Eigen::Index s = 0; s < S; ++s) reward.row(s) = game.reward_mean()[static_cast<std::size_t>(s)].col(0).transpose();
  return TabularMDP(game.transition(), std::move(reward), game.gamma(), game.r_max(), game.noise());
}

double sup_norm(const QTable& q) { return q.size() == 0 ? 0.0 : q.cwiseAbs().maxCoeff(); }

double sup_norm(const GameQTable& q) {
  double out = 0.0;
  for (const auto& m : q) out = std::max(out, sup_norm(m));
  return out;
}

GameQTable game_difference(const GameQTable& a, const GameQTable& b) {
  if (a.size() != b.size()) throw std::invalid_argument("game tables differ in state count");
  GameQTable out(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) out[s] = a[s] - b[s];
  return out;
}

}  // namespace fqlab
