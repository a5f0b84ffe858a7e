#include "fqlab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fqlab {

namespace {

constexpr double kRowTol = 1e-12;

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("gamma must lie in (0,1), got " + std::to_string(gamma));
}

void check_stochastic_rows(const RowMatrix& transition, std::size_t expected_rows,
                           std::size_t n_states) {
  if (static_cast<std::size_t>(transition.rows()) != expected_rows ||
      static_cast<std::size_t>(transition.cols()) != n_states)
    throw std::invalid_argument("transition tensor has the wrong shape");
  for (Eigen::Index r = 0; r < transition.rows(); ++r) {
    if ((transition.row(r).array() < 0.0).any() || !transition.row(r).allFinite())
      throw std::invalid_argument("transition row " + std::to_string(r) + " has a negative entry");
    if (std::abs(transition.row(r).sum() - 1.0) > kRowTol)
      throw std::invalid_argument("transition row " + std::to_string(r) + " does not sum to 1");
  }
}

void check_reward_bound(const Eigen::MatrixXd& reward, double r_max) {
  if (!reward.allFinite() || reward.cwiseAbs().maxCoeff() > r_max)
    throw std::invalid_argument("reward mean exceeds r_max in absolute value");
}

Eigen::VectorXd one_hot(std::size_t i, std::size_t n) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  v(static_cast<Eigen::Index>(i)) = 1.0;
  return v;
}

// Symmetric Dirichlet row via normalized Gamma draws.
void dirichlet_row(Rng& rng, double concentration, Eigen::Ref<Eigen::RowVectorXd> out) {
  std::gamma_distribution<double> gamma_dist(concentration, 1.0);
  double total = 0.0;
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    out(j) = gamma_dist(rng);
    total += out(j);
  }
  if (!(total > 0.0)) {
    // Every draw underflowed; fall back to a point mass on a random state.
    out.setZero();
    out(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(out.size())))) = 1.0;
    return;
  }
  out /= total;
}

double noisy_reward(double mean, double halfwidth, double r_max, Rng& rng) {
  const double room = std::max(0.0, std::min(halfwidth, r_max - std::abs(mean)));
  if (room == 0.0) return mean;
  return mean + (2.0 * uniform01(rng) - 1.0) * room;
}

}  // namespace

TabularMDP::TabularMDP(RowMatrix transition, Eigen::MatrixXd reward_mean, double gamma,
                       double r_max, double reward_noise_halfwidth)
    : n_states_(static_cast<std::size_t>(reward_mean.rows())),
      n_actions_(static_cast<std::size_t>(reward_mean.cols())),
      transition_(std::move(transition)),
      reward_(std::move(reward_mean)),
      gamma_(gamma),
      r_max_(r_max),
      noise_(reward_noise_halfwidth) {
  if (n_states_ == 0 || n_actions_ == 0) throw std::invalid_argument("empty state or action set");
  check_gamma(gamma_);
  if (!(r_max_ > 0.0)) throw std::invalid_argument("r_max must be positive");
  if (!(noise_ >= 0.0)) throw std::invalid_argument("reward noise halfwidth must be nonnegative");
  check_stochastic_rows(transition_, n_states_ * n_actions_, n_states_);
  check_reward_bound(reward_, r_max_);
}

State TabularMDP::state(std::size_t s) const { return State{s, one_hot(s, n_states_)}; }

TabularMarkovGame::TabularMarkovGame(RowMatrix transition,
                                     std::vector<Eigen::MatrixXd> reward_mean, double gamma,
                                     double r_max, double reward_noise_halfwidth)
    : n_states_(reward_mean.size()),
      n_a_(reward_mean.empty() ? 0 : static_cast<std::size_t>(reward_mean.front().rows())),
      n_b_(reward_mean.empty() ? 0 : static_cast<std::size_t>(reward_mean.front().cols())),
      transition_(std::move(transition)),
      reward_(std::move(reward_mean)),
      gamma_(gamma),
      r_max_(r_max),
      noise_(reward_noise_halfwidth) {
  if (n_states_ == 0 || n_a_ == 0 || n_b_ == 0)
    throw std::invalid_argument("empty state or action set");
  check_gamma(gamma_);
  if (!(r_max_ > 0.0)) throw std::invalid_argument("r_max must be positive");
  if (!(noise_ >= 0.0)) throw std::invalid_argument("reward noise halfwidth must be nonnegative");
  for (const auto& m : reward_) {
    if (static_cast<std::size_t>(m.rows()) != n_a_ || static_cast<std::size_t>(m.cols()) != n_b_)
      throw std::invalid_argument("reward matrices must share one n_a x n_b shape");
    check_reward_bound(m, r_max_);
  }
  check_stochastic_rows(transition_, n_states_ * n_a_ * n_b_, n_states_);
}

State TabularMarkovGame::state(std::size_t s) const { return State{s, one_hot(s, n_states_)}; }

ContinuousMDP::ContinuousMDP(std::size_t state_dim, std::vector<std::vector<Bump>> reward_bumps,
                             std::vector<Eigen::VectorXd> drift, double noise_std, double gamma,
                             double r_max)
    : dim_(state_dim),
      bumps_(std::move(reward_bumps)),
      drift_(std::move(drift)),
      noise_std_(noise_std),
      gamma_(gamma),
      r_max_(r_max) {
  if (dim_ == 0 || drift_.empty()) throw std::invalid_argument("empty state or action set");
  if (bumps_.size() != drift_.size())
    throw std::invalid_argument("need one bump list and one drift per action");
  check_gamma(gamma_);
  if (!(r_max_ > 0.0)) throw std::invalid_argument("r_max must be positive");
  if (!(noise_std_ >= 0.0)) throw std::invalid_argument("noise_std must be nonnegative");
  for (const auto& d : drift_)
    if (static_cast<std::size_t>(d.size()) != dim_) throw std::invalid_argument("drift dimension");
  for (const auto& list : bumps_)
    for (const auto& b : list)
      if (static_cast<std::size_t>(b.center.size()) != dim_ || !(b.width > 0.0))
        throw std::invalid_argument("bad bump");
}

double ContinuousMDP::reward(const Eigen::VectorXd& s, std::size_t a) const {
  double acc = 0.0;
  for (const auto& b : bumps_.at(a))
    acc += b.amplitude * std::exp(-(s - b.center).squaredNorm() / (2.0 * b.width * b.width));
  return r_max_ * std::tanh(acc);
}

Eigen::VectorXd ContinuousMDP::next_state(const Eigen::VectorXd& s, std::size_t a,
                                          const Eigen::VectorXd& noise) const {
  Eigen::VectorXd next = s + drift_.at(a) + noise_std_ * noise;
  return next.cwiseMax(0.0).cwiseMin(1.0);
}

State ContinuousMDP::random_state(Rng& rng) const {
  State st;
  st.coords.resize(static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < st.coords.size(); ++i) st.coords(i) = uniform01(rng);
  return st;
}

TabularMDP make_random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, double r_max,
                           double concentration, std::uint64_t seed) {
  if (n_states == 0 || n_actions == 0) throw std::invalid_argument("dimensions must be positive");
  check_gamma(gamma);
  if (!(r_max > 0.0)) throw std::invalid_argument("r_max must be positive");
  if (!(concentration > 0.0)) throw std::invalid_argument("concentration must be positive");
  Rng rng(seed);
  const auto S = static_cast<Eigen::Index>(n_states);
  const auto A = static_cast<Eigen::Index>(n_actions);
  RowMatrix transition(S * A, S);
  for (Eigen::Index r = 0; r < S * A; ++r) dirichlet_row(rng, concentration, transition.row(r));
  Eigen::MatrixXd reward(S, A);
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a) reward(s, a) = r_max * (2.0 * uniform01(rng) - 1.0);
  return TabularMDP(std::move(transition), std::move(reward), gamma, r_max);
}

TabularMDP make_gridworld(std::size_t width, std::size_t height, GridCell goal, double step_reward,
                          double goal_reward, double slip_prob, double gamma) {
  if (width == 0 || height == 0) throw std::invalid_argument("grid must be nonempty");
  if (goal.x >= width || goal.y >= height) throw std::invalid_argument("goal cell outside grid");
  if (!(slip_prob >= 0.0 && slip_prob < 1.0))
    throw std::invalid_argument("slip_prob must lie in [0,1)");
  check_gamma(gamma);
  constexpr std::size_t kActions = 4;
  const std::size_t n = width * height;
  const std::size_t goal_state = goal.y * width + goal.x;

  auto move = [&](std::size_t s, std::size_t a) {
    std::size_t x = s % width;
    std::size_t y = s / width;
    switch (a) {
      case 0: if (y + 1 < height) ++y; break;
      case 1: if (y > 0) --y; break;
      case 2: if (x + 1 < width) ++x; break;
      default: if (x > 0) --x; break;
    }
    return y * width + x;
  };

  RowMatrix transition = RowMatrix::Zero(static_cast<Eigen::Index>(n * kActions),
                                                     static_cast<Eigen::Index>(n));
  Eigen::MatrixXd reward = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), kActions);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a = 0; a < kActions; ++a) {
      const auto row = static_cast<Eigen::Index>(s * kActions + a);
      if (s == goal_state) {
        transition(row, static_cast<Eigen::Index>(s)) = 1.0;
        continue;
      }
      for (std::size_t actual = 0; actual < kActions; ++actual) {
        double p = slip_prob / static_cast<double>(kActions);
        if (actual == a) p += 1.0 - slip_prob;
        if (p == 0.0) continue;
        const std::size_t next = move(s, actual);
        transition(row, static_cast<Eigen::Index>(next)) += p;
        reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) +=
            p * (next == goal_state ? goal_reward : step_reward);
      }
    }
  }
  const double r_max = std::max({std::abs(step_reward), std::abs(goal_reward), 1e-12});
  // Slip mixtures can round a reward a hair past r_max.
  reward = reward.cwiseMax(-r_max).cwiseMin(r_max);
  return TabularMDP(std::move(transition), std::move(reward), gamma, r_max);
}

TabularMarkovGame make_random_game(std::size_t n_states, std::size_t n_a, std::size_t n_b,
                                   double gamma, double r_max, std::uint64_t seed,
                                   double concentration) {
  if (n_states == 0 || n_a == 0 || n_b == 0)
    throw std::invalid_argument("dimensions must be positive");
  check_gamma(gamma);
  if (!(r_max > 0.0)) throw std::invalid_argument("r_max must be positive");
  if (!(concentration > 0.0)) throw std::invalid_argument("concentration must be positive");
  Rng rng(seed);
  const auto S = static_cast<Eigen::Index>(n_states);
  const auto rows = static_cast<Eigen::Index>(n_states * n_a * n_b);
  RowMatrix transition(rows, S);
  for (Eigen::Index r = 0; r < rows; ++r) dirichlet_row(rng, concentration, transition.row(r));
  std::vector<Eigen::MatrixXd> reward(n_states);
  for (auto& m : reward) {
    m.resize(static_cast<Eigen::Index>(n_a), static_cast<Eigen::Index>(n_b));
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b) m(a, b) = r_max * (2.0 * uniform01(rng) - 1.0);
  }
  return TabularMarkovGame(std::move(transition), std::move(reward), gamma, r_max);
}

ContinuousMDP make_continuous_mdp(std::size_t state_dim, std::size_t n_actions, double gamma,
                                  double r_max, std::uint64_t seed, std::size_t bumps_per_action,
                                  double noise_std) {
  if (state_dim == 0 || n_actions == 0) throw std::invalid_argument("dimensions must be positive");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(state_dim);
  std::vector<std::vector<Bump>> bumps(n_actions);
  std::vector<Eigen::VectorXd> drift(n_actions);
  for (std::size_t a = 0; a < n_actions; ++a) {
    for (std::size_t k = 0; k < bumps_per_action; ++k) {
      Bump b;
      b.center.resize(d);
      for (Eigen::Index i = 0; i < d; ++i) b.center(i) = uniform01(rng);
      b.width = 0.15 + 0.2 * uniform01(rng);
      b.amplitude = 2.0 * uniform01(rng) - 1.0;
      bumps[a].push_back(std::move(b));
    }
    // Unit direction drawn uniformly on the sphere, scaled to 0.1.
    std::normal_distribution<double> normal;
    Eigen::VectorXd dir(d);
    for (Eigen::Index i = 0; i < d; ++i) dir(i) = normal(rng);
    const double norm = dir.norm();
    drift[a] = norm > 0.0 ? Eigen::VectorXd(0.1 * dir / norm) : Eigen::VectorXd::Zero(d);
  }
  return ContinuousMDP(state_dim, std::move(bumps), std::move(drift), noise_std, gamma, r_max);
}

TransitionSample sample_transition(const TabularMDP& mdp, std::size_t s, std::size_t a, Rng& rng) {
  if (s >= mdp.n_states() || a >= mdp.n_actions())
    throw std::out_of_range("state or action index out of range");
  TransitionSample out;
  out.state = mdp.state(s);
  out.action = a;
  out.reward = noisy_reward(mdp.reward_mean()(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)),
                            mdp.noise(), mdp.r_max(), rng);
  out.next_state = mdp.state(sample_discrete(rng, mdp.row(s, a)));
  return out;
}

TransitionSample sample_transition(const TabularMarkovGame& game, std::size_t s, std::size_t a,
                                   std::size_t b, Rng& rng) {
  if (s >= game.n_states() || a >= game.n_actions_p1() || b >= game.n_actions_p2())
    throw std::out_of_range("state or action index out of range");
  TransitionSample out;
  out.state = game.state(s);
  out.action = a;
  out.action2 = b;
  out.reward = noisy_reward(game.reward(s, a, b), game.noise(), game.r_max(), rng);
  out.next_state = game.state(sample_discrete(rng, game.row(s, a, b)));
  return out;
}

TransitionSample sample_transition(const ContinuousMDP& mdp, const State& s, std::size_t a,
                                   Rng& rng) {
  if (a >= mdp.n_actions()) throw std::out_of_range("action index out of range");
  if (static_cast<std::size_t>(s.coords.size()) != mdp.state_dim())
    throw std::out_of_range("state dimension mismatch");
  std::normal_distribution<double> normal;
  Eigen::VectorXd noise(s.coords.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = normal(rng);
  TransitionSample out;
  out.state = s;
  out.action = a;
  out.reward = mdp.reward(s.coords, a);
  out.next_state.coords = mdp.next_state(s.coords, a, noise);
  return out;
}

}  // namespace fqlab
