#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fqlab/rng.hpp"

namespace fqlab {

/// Row-major so that each transition row P(. | s, a) is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A state as seen by approximators. Tabular models fill `index` and a
/// one-hot `coords`; continuous models fill `coords` in [0,1]^r.
struct State {
  std::size_t index = 0;
  Eigen::VectorXd coords;
};

struct TransitionSample {
  State state;
  std::size_t action = 0;
  std::optional<std::size_t> action2;
  double reward = 0.0;
  State next_state;
};

/// Finite MDP with a dense transition tensor. Row (s * n_actions + a) of
/// `transition` is P(. | s, a). Rewards are reward_mean(s, a) plus uniform
/// noise whose halfwidth is shrunk per cell so the realized reward stays in
/// [-r_max, r_max] and the mean stays exact.
class TabularMDP {
 public:
  TabularMDP(RowMatrix transition, Eigen::MatrixXd reward_mean, double gamma,
             double r_max, double reward_noise_halfwidth = 0.0);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }
  double r_max() const { return r_max_; }
  double noise() const { return noise_; }

  const RowMatrix& transition() const { return transition_; }
  const Eigen::MatrixXd& reward_mean() const { return reward_; }

  double prob(std::size_t s, std::size_t a, std::size_t next) const {
    return transition_(row_index(s, a), next);
  }
  std::span<const double> row(std::size_t s, std::size_t a) const {
    return {transition_.data() + row_index(s, a) * n_states_, n_states_};
  }
  std::size_t row_index(std::size_t s, std::size_t a) const { return s * n_actions_ + a; }

  State state(std::size_t s) const;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  RowMatrix transition_;
  Eigen::MatrixXd reward_;
  double gamma_;
  double r_max_;
  double noise_;
};

/// Two-player zero-sum Markov game. Row ((s * n_a + a) * n_b + b) of
/// `transition` is P(. | s, a, b); `reward_mean[s]` is the n_a x n_b stage
/// payoff to the maximizing first player.
class TabularMarkovGame {
 public:
  TabularMarkovGame(RowMatrix transition, std::vector<Eigen::MatrixXd> reward_mean,
                    double gamma, double r_max, double reward_noise_halfwidth = 0.0);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions_p1() const { return n_a_; }
  std::size_t n_actions_p2() const { return n_b_; }
  double gamma() const { return gamma_; }
  double r_max() const { return r_max_; }
  double noise() const { return noise_; }

  const RowMatrix& transition() const { return transition_; }
  const std::vector<Eigen::MatrixXd>& reward_mean() const { return reward_; }
  double reward(std::size_t s, std::size_t a, std::size_t b) const { return reward_[s](a, b); }

  double prob(std::size_t s, std::size_t a, std::size_t b, std::size_t next) const {
    return transition_(row_index(s, a, b), next);
  }
  std::span<const double> row(std::size_t s, std::size_t a, std::size_t b) const {
    return {transition_.data() + row_index(s, a, b) * n_states_, n_states_};
  }
  std::size_t row_index(std::size_t s, std::size_t a, std::size_t b) const {
    return (s * n_a_ + a) * n_b_ + b;
  }

  State state(std::size_t s) const;

 private:
  std::size_t n_states_;
  std::size_t n_a_;
  std::size_t n_b_;
  RowMatrix transition_;
  std::vector<Eigen::MatrixXd> reward_;
  double gamma_;
  double r_max_;
  double noise_;
};

/// Smooth bump: amplitude * exp(-|x - center|^2 / (2 width^2)).
struct Bump {
  Eigen::VectorXd center;
  double width = 0.2;
  double amplitude = 1.0;
};

/// Continuous-state MDP on [0,1]^r with finitely many actions.
///   reward(s, a)  = r_max * tanh(sum of bumps for a evaluated at s)
///   next(s, a, e) = clip(s + drift[a] + noise_std * e, 0, 1),  e ~ N(0, I)
class ContinuousMDP {
 public:
  ContinuousMDP(std::size_t state_dim, std::vector<std::vector<Bump>> reward_bumps,
                std::vector<Eigen::VectorXd> drift, double noise_std, double gamma, double r_max);

  std::size_t state_dim() const { return dim_; }
  std::size_t n_actions() const { return drift_.size(); }
  double gamma() const { return gamma_; }
  double r_max() const { return r_max_; }
  double noise_std() const { return noise_std_; }
  const std::vector<std::vector<Bump>>& reward_bumps() const { return bumps_; }
  const std::vector<Eigen::VectorXd>& drift() const { return drift_; }

  double reward(const Eigen::VectorXd& s, std::size_t a) const;
  Eigen::VectorXd next_state(const Eigen::VectorXd& s, std::size_t a,
                             const Eigen::VectorXd& noise) const;
  State random_state(Rng& rng) const;

 private:
  std::size_t dim_;
  std::vector<std::vector<Bump>> bumps_;
  std::vector<Eigen::VectorXd> drift_;
  double noise_std_;
  double gamma_;
  double r_max_;
};

TabularMDP make_random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, double r_max,
                           double concentration, std::uint64_t seed);

struct GridCell {
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Actions: 0 = north (y + 1), 1 = south (y - 1), 2 = east (x + 1),
/// 3 = west (x - 1). Moves off the grid leave the agent in place. With
/// probability slip_prob the chosen action is replaced by a uniformly drawn
/// one. Entering the goal pays goal_reward, every other move pays
/// step_reward, and the goal is absorbing with reward 0. Cell (x, y) is
/// state y * width + x.
TabularMDP make_gridworld(std::size_t width, std::size_t height, GridCell goal, double step_reward,
                          double goal_reward, double slip_prob, double gamma);

TabularMarkovGame make_random_game(std::size_t n_states, std::size_t n_a, std::size_t n_b,
                                   double gamma, double r_max, std::uint64_t seed,
                                   double concentration = 1.0);

/// Seeded bump-mixture continuous MDP. Drifts point in random directions
/// per action with magnitude 0.1.
ContinuousMDP make_continuous_mdp(std::size_t state_dim, std::size_t n_actions, double gamma,
                                  double r_max, std::uint64_t seed, std::size_t bumps_per_action = 3,
                                  double noise_std = 0.05);

TransitionSample sample_transition(const TabularMDP& mdp, std::size_t s, std::size_t a, Rng& rng);
TransitionSample sample_transition(const TabularMarkovGame& game, std::size_t s, std::size_t a,
                                   std::size_t b, Rng& rng);
TransitionSample sample_transition(const ContinuousMDP& mdp, const State& s, std::size_t a,
                                   Rng& rng);

}  // namespace fqlab
