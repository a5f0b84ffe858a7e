#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fqlab/approximators.hpp"
#include "fqlab/diagnostics.hpp"
#include "fqlab/matrix_game.hpp"
#include "test_support.hpp"

using namespace fqlab;

namespace {

Eigen::VectorXd random_simplex(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
  return v / v.sum();
}

// |A| = 1 with a doubly stochastic kernel: the uniform measure is invariant.
TabularMDP doubly_stochastic_mdp(double gamma) {
  RowMatrix p(3, 3);
  p << 0.5, 0.3, 0.2,
       0.2, 0.5, 0.3,
       0.3, 0.2, 0.5;
  return TabularMDP(p, Eigen::MatrixXd::Constant(3, 1, 0.5), gamma, 1.0);
}

// Every (s, a) moves to a uniformly random state.
TabularMDP uniform_transition_mdp(std::size_t S, std::size_t A, double gamma) {
  RowMatrix p = RowMatrix::Constant(static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S),
                                    1.0 / static_cast<double>(S));
  return TabularMDP(p, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A)), gamma, 1.0);
}

// State 0: action 0 stays (reward 0), action 1 moves to the absorbing state 1 (reward 1).
TabularMDP two_state_mdp() {
  RowMatrix p(4, 2);
  p << 1, 0,
       0, 1,
       0, 1,
       0, 1;
  Eigen::MatrixXd r(2, 2);
  r << 0, 1, 0, 0;
  return TabularMDP(p, r, 0.5, 1.0);
}

}  // namespace

TEST(WeightedNorm, ConstantFunction) {
  const Eigen::VectorXd f = Eigen::VectorXd::Constant(6, -2.5);
  for (double p : {1.0, 2.0, 3.7})
    EXPECT_NEAR(weighted_lp_norm(f, WeightedNorm{random_simplex(6, 1), p}), 2.5, 1e-12);
}

TEST(WeightedNorm, SignedPairL1) {
  EXPECT_NEAR(weighted_lp_norm(Eigen::VectorXd(Eigen::Vector2d(1.0, -1.0)), WeightedNorm::uniform(2, 1.0)), 1.0, 1e-15);
}

TEST(WeightedNorm, MatchesNaiveSum) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd f(10);
    for (Eigen::Index i = 0; i < 10; ++i) f(i) = n01(rng);
    const Eigen::VectorXd w = random_simplex(10, static_cast<std::uint64_t>(trial));
    const double p = 1.0 + 0.5 * (trial % 4);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < 10; ++i) acc += w(i) * std::pow(std::abs(f(i)), p);
    EXPECT_NEAR(weighted_lp_norm(f, WeightedNorm{w, p}), std::pow(acc, 1.0 / p), 1e-12);
  }
}

TEST(WeightedNorm, FlattensRowMajor) {
  QTable q(2, 3);
  q << 1, 2, 3, 4, 5, 6;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(6);
  w(1) = 1.0;
  EXPECT_EQ(weighted_lp_norm(q, WeightedNorm{w, 2.0}), 2.0);
  GameQTable g{Eigen::MatrixXd(2, 2), Eigen::MatrixXd(2, 2)};
  g[0] << 1, 2, 3, 4;
  g[1] << 5, 6, 7, 8;
  w = Eigen::VectorXd::Zero(8);
  w(6) = 1.0;
  EXPECT_EQ(weighted_lp_norm(g, WeightedNorm{w, 1.0}), 7.0);
}

TEST(WeightedNorm, RejectsBadMeasures) {
  const Eigen::VectorXd f = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(weighted_lp_norm(f, WeightedNorm{Eigen::Vector2d(0.7, 0.7), 2.0}), std::invalid_argument);
  EXPECT_THROW(weighted_lp_norm(f, WeightedNorm{Eigen::Vector2d(1.5, -0.5), 2.0}), std::invalid_argument);
  EXPECT_THROW(weighted_lp_norm(f, WeightedNorm{Eigen::Vector2d(0.5, 0.5), 0.5}), std::invalid_argument);
  EXPECT_THROW(weighted_lp_norm(f, WeightedNorm::uniform(3)), std::invalid_argument);
  EXPECT_THROW(WeightedNorm::uniform(0), std::invalid_argument);
}

TEST(OneStepError, ExactUpdateIsZero) {
  const TabularMDP mdp = oracle::random_mdp(4, 3, 0.9, 11);
  QTable prev = QTable::Random(4, 3);
  EXPECT_NEAR(one_step_bellman_error(oracle::bellman(mdp, prev), prev, mdp, WeightedNorm::uniform(12)), 0.0, 1e-15);
}

TEST(OneStepError, ConstantShift) {
  const TabularMDP mdp = oracle::random_mdp(4, 3, 0.9, 12);
  const QTable prev = QTable::Random(4, 3);
  const QTable next = (oracle::bellman(mdp, prev).array() + 0.3).matrix();
  for (double p : {1.0, 2.0})
    EXPECT_NEAR(one_step_bellman_error(next, prev, mdp, WeightedNorm{random_simplex(12, 3), p}), 0.3, 1e-12);
}

TEST(OneStepError, GameMatchesLoopOperator) {
  const TabularMarkovGame g = make_random_game(3, 2, 2, 0.8, 1.0, 4);
  GameQTable prev(3, Eigen::MatrixXd::Random(2, 2));
  const GameQTable tq = oracle::game_bellman(g, prev, [](const Eigen::MatrixXd& m) {
    return matrix_game::solve(m).value;
  });
  GameQTable next = tq;
  next[1](0, 1) += 0.4;
  const WeightedNorm sigma = WeightedNorm::uniform(12, 1.0);
  EXPECT_NEAR(one_step_bellman_error(tq, prev, g, sigma), 0.0, 1e-9);
  EXPECT_NEAR(one_step_bellman_error(next, prev, g, sigma), 0.4 / 12.0, 1e-9);
}

TEST(OneStepError, MonteCarloContinuous) {
  // With Q_prev = 0, T Q_prev = r exactly, so the error is |r|_2.
  const ContinuousMDP mdp = make_continuous_mdp(1, 2, 0.9, 1.0, 5);
  const LinearQ zero(1, 2);
  Rng rng(0);
  const MonteCarloEstimate est = one_step_bellman_error(zero, zero, mdp, 20000, 1, rng);
  double acc = 0.0;
  const int grid = 20000;
  for (int i = 0; i < grid; ++i) {
    const Eigen::VectorXd s = Eigen::VectorXd::Constant(1, (i + 0.5) / grid);
    for (std::size_t a = 0; a < 2; ++a) acc += std::pow(mdp.reward(s, a), 2);
  }
  const double exact = std::sqrt(acc / (2.0 * grid));
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_NEAR(est.value, exact, 4.0 * est.std_error);
}

TEST(MonteCarloNorm, StandardErrorShrinks) {
  // f(s, a) = s on [0,1]: |f|_2 = 1/sqrt(3).
  const ContinuousMDP mdp = make_continuous_mdp(1, 2, 0.9, 1.0, 6);
  LinearQ f(1, 2);
  f.coefficients().row(1).setOnes();
  Rng rng(1);
  const MonteCarloEstimate small = weighted_lp_norm(f, mdp, 2.0, 1000, rng);
  const MonteCarloEstimate large = weighted_lp_norm(f, mdp, 2.0, 64000, rng);
  EXPECT_NEAR(large.value, 1.0 / std::sqrt(3.0), 4.0 * large.std_error);
  EXPECT_NEAR(small.value, 1.0 / std::sqrt(3.0), 4.0 * small.std_error);
  EXPECT_NEAR(small.std_error / large.std_error, 8.0, 1.0);
  EXPECT_THROW(weighted_lp_norm(f, mdp, 2.0, 1, rng), std::invalid_argument);
}

TEST(Kappa, UniformTransitionsGiveSqrtTwo) {
  const TabularMDP mdp = uniform_transition_mdp(3, 2, 0.9);
  const Eigen::VectorXd sigma = Eigen::VectorXd::Constant(6, 1.0 / 6.0);
  for (std::size_t m = 1; m <= 3; ++m) {
    const KappaResult k = concentration_coefficient(mdp, random_simplex(6, m), sigma, m);
    EXPECT_TRUE(k.exhaustive);
    EXPECT_NEAR(k.value, std::sqrt(2.0), 1e-12);
  }
}

TEST(Kappa, InvariantMeasureGivesOne) {
  const TabularMDP mdp = doubly_stochastic_mdp(0.9);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  for (std::size_t m = 1; m <= 5; ++m) EXPECT_NEAR(concentration_coefficient(mdp, u, u, m).value, 1.0, 1e-12);
}

TEST(Kappa, ExhaustiveMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const TabularMDP mdp = oracle::random_mdp(3, 2, 0.9, 100 + seed);
    const Eigen::VectorXd mu = random_simplex(6, 2 * seed);
    const Eigen::VectorXd sigma = random_simplex(6, 2 * seed + 1);
    for (std::size_t m = 1; m <= 3; ++m) {
      const KappaResult k = concentration_coefficient(mdp, mu, sigma, m, KappaMode::kExhaustive);
      EXPECT_NEAR(k.value, oracle::kappa_brute(mdp, mu, sigma, m), 1e-12);
      EXPECT_EQ(k.sequences, static_cast<std::size_t>(std::pow(8.0, static_cast<double>(m))));
    }
  }
}

TEST(Kappa, MonteCarloIsLowerBound) {
  const TabularMDP mdp = oracle::random_mdp(3, 2, 0.9, 21);
  const Eigen::VectorXd mu = random_simplex(6, 5);
  const Eigen::VectorXd sigma = random_simplex(6, 6);
  for (std::size_t m = 1; m <= 3; ++m) {
    const KappaResult ex = concentration_coefficient(mdp, mu, sigma, m, KappaMode::kExhaustive);
    const KappaResult mc = concentration_coefficient(mdp, mu, sigma, m, KappaMode::kMonteCarlo, 2000, 3);
    EXPECT_FALSE(mc.exhaustive);
    EXPECT_LE(mc.value, ex.value + 1e-12);
    EXPECT_GT(mc.value, 0.9 * ex.value);
  }
}

TEST(Kappa, StochasticPoliciesNeverExceedVertices) {
  const TabularMDP mdp = oracle::random_mdp(3, 2, 0.9, 22);
  const Eigen::VectorXd mu = random_simplex(6, 7);
  const Eigen::VectorXd sigma = random_simplex(6, 8);
  const double ex = concentration_coefficient(mdp, mu, sigma, 2).value;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd d = mu;
    for (int step = 0; step < 2; ++step) {
      TabularPolicy pi{Eigen::MatrixXd(3, 2)};
      for (Eigen::Index s = 0; s < 3; ++s) {
        const double x = u(rng);
        pi.probs(s, 0) = x;
        pi.probs(s, 1) = 1.0 - x;
      }
      d = pushforward(mdp, d, pi);
    }
    EXPECT_LE(std::sqrt((d.array().square() / sigma.array()).sum()), ex + 1e-12);
  }
}

TEST(Kappa, InfiniteWithoutSupport) {
  const TabularMDP mdp = uniform_transition_mdp(2, 2, 0.9);
  const Eigen::VectorXd sigma = Eigen::Vector4d(0.5, 0.0, 0.5, 0.0);
  const KappaResult k = concentration_coefficient(mdp, Eigen::Vector4d::Constant(0.25), sigma, 1);
  EXPECT_TRUE(k.infinite);
  EXPECT_TRUE(std::isinf(k.value));
  EXPECT_TRUE(phi_estimate(mdp, Eigen::Vector4d::Constant(0.25), sigma, 2).infinite);
}

TEST(Kappa, GuardsAndValidation) {
  const TabularMDP big = oracle::random_mdp(10, 4, 0.9, 3);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(40, 1.0 / 40.0);
  EXPECT_THROW(concentration_coefficient(big, u, u, 1, KappaMode::kExhaustive), std::invalid_argument);
  EXPECT_FALSE(concentration_coefficient(big, u, u, 1, KappaMode::kAuto, 100).exhaustive);
  EXPECT_THROW(concentration_coefficient(big, u, u, 0), std::invalid_argument);
  EXPECT_THROW(concentration_coefficient(big, Eigen::VectorXd::Ones(40), u, 1), std::invalid_argument);
}

TEST(Pushforward, MatchesExplicitMatrix) {
  const TabularMDP mdp = oracle::random_mdp(3, 2, 0.9, 31);
  const TabularPolicy pi{Eigen::MatrixXd((Eigen::MatrixXd(3, 2) << 0.2, 0.8, 1, 0, 0.5, 0.5).finished())};
  const Eigen::VectorXd mu = random_simplex(6, 4);
  const Eigen::VectorXd expected = (mu.transpose() * oracle::p_pi_matrix(mdp, pi)).transpose();
  EXPECT_LE((pushforward(mdp, mu, pi) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Phi, UnitKappaSumsToOne) {
  const TabularMDP mdp = doubly_stochastic_mdp(0.9);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  const PhiEstimate phi = phi_estimate(mdp, u, u, 6);
  EXPECT_NEAR(phi.kappa_sup, 1.0, 1e-12);
  EXPECT_NEAR(phi.total(), 1.0, 1e-12);
  for (std::size_t m = 1; m < 40; ++m)
    EXPECT_NEAR(phi_truncated_sum(std::vector<double>(m, 1.0), 0.7) + phi_tail_bound(1.0, m, 0.7), 1.0, 1e-12);
}

TEST(Phi, SingleTermIsScaledKappa) {
  const TabularMDP mdp = oracle::random_mdp(3, 2, 0.8, 41);
  const Eigen::VectorXd mu = random_simplex(6, 1);
  const Eigen::VectorXd sigma = random_simplex(6, 2);
  const PhiEstimate phi = phi_estimate(mdp, mu, sigma, 1);
  const double k1 = oracle::kappa_brute(mdp, mu, sigma, 1);
  EXPECT_NEAR(phi.truncated, 0.04 * k1, 1e-12);
  EXPECT_NEAR(phi.tail_bound, k1 * 0.8 * (2.0 - 0.8), 1e-12);
}

TEST(Phi, TruncatedSumGrowsWithHorizon) {
  const TabularMDP mdp = oracle::random_mdp(3, 2, 0.9, 42);
  const Eigen::VectorXd mu = random_simplex(6, 3);
  const Eigen::VectorXd sigma = random_simplex(6, 4);
  double prev = 0.0;
  for (std::size_t m = 1; m <= 4; ++m) {
    const PhiEstimate phi = phi_estimate(mdp, mu, sigma, m);
    EXPECT_GE(phi.truncated, prev);
    EXPECT_TRUE(phi.exhaustive);
    prev = phi.truncated;
  }
}

TEST(Bound, WorkedExample) {
  const BoundInputs in{0.1, 1.0, 0.9, 10, 1.0};
  const double second = 4.0 * std::pow(0.9, 11) / 0.01;
  EXPECT_NEAR(second, 125.524238436, 1e-8);
  EXPECT_NEAR(error_propagation_bound(in), 18.0 + second, 1e-9);
  EXPECT_NEAR(error_propagation_bound(in), 143.524238436, 1e-8);
}

TEST(Bound, ZeroErrorLeavesGeometricTerm) {
  for (std::size_t k : {0u, 3u, 50u})
    EXPECT_NEAR(error_propagation_bound({0.0, 2.0, 0.8, k, 1.5}), 4.0 * std::pow(0.8, k + 1.0) * 1.5 / 0.04, 1e-10);
}

TEST(Bound, LargeKLimit) {
  EXPECT_NEAR(error_propagation_bound({0.2, 1.3, 0.9, 2000, 1.0}), 2.0 * 1.3 * 0.9 * 0.2 / 0.01, 1e-9);
}

TEST(Bound, Monotonicity) {
  const BoundInputs base{0.1, 1.5, 0.9, 10, 1.0};
  const double b = error_propagation_bound(base);
  BoundInputs in = base;
  in.eps_max = 0.2;
  EXPECT_GT(error_propagation_bound(in), b);
  in = base;
  in.phi = 2.0;
  EXPECT_GT(error_propagation_bound(in), b);
  in = base;
  in.r_max = 2.0;
  EXPECT_GT(error_propagation_bound(in), b);
  in = base;
  in.k = 11;
  EXPECT_LT(error_propagation_bound(in), b);
  in = base;
  in.gamma = 1.0;
  EXPECT_THROW(error_propagation_bound(in), std::invalid_argument);
  in = base;
  in.eps_max = -1.0;
  EXPECT_THROW(error_propagation_bound(in), std::invalid_argument);
}

TEST(Suboptimality, OptimalPolicyIsZero) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TabularMDP mdp = oracle::random_mdp(5, 3, 0.9, 200 + seed);
    const TabularPolicy pi = greedy_policy(oracle::q_star(mdp));
    EXPECT_NEAR(suboptimality(mdp, pi, WeightedNorm{random_simplex(15, seed), 1.0}), 0.0, 1e-9);
  }
}

TEST(Suboptimality, HandExample) {
  const TabularMDP mdp = two_state_mdp();
  // Q* = [[0.5, 1], [0, 0]]; always taking action 0 gives Q^pi = [[0, 1], [0, 0]].
  const TabularPolicy stay = TabularPolicy::deterministic({0, 0}, 2);
  EXPECT_NEAR(suboptimality(mdp, stay, WeightedNorm::uniform(4, 1.0)), 0.125, 1e-12);
  const QTable qs = (QTable(2, 2) << 0.5, 1.0, 0.0, 0.0).finished();
  EXPECT_NEAR(suboptimality(mdp, stay, WeightedNorm::uniform(4, 1.0), qs), 0.125, 1e-12);
  EXPECT_NEAR(suboptimality(mdp, TabularPolicy::deterministic({1, 0}, 2), WeightedNorm::uniform(4, 1.0)), 0.0, 1e-12);
}

TEST(Suboptimality, NonnegativeForRandomPolicies) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TabularMDP mdp = oracle::random_mdp(4, 3, 0.9, 300 + seed);
    TabularPolicy pi{Eigen::MatrixXd(4, 3)};
    for (Eigen::Index s = 0; s < 4; ++s) {
      for (Eigen::Index a = 0; a < 3; ++a) pi.probs(s, a) = u(rng);
      pi.probs.row(s) /= pi.probs.row(s).sum();
    }
    const QTable gap = oracle::q_star(mdp) - oracle::q_pi(mdp, pi);
    EXPECT_GE(gap.minCoeff(), -1e-9);
    EXPECT_NEAR(suboptimality(mdp, pi, WeightedNorm::uniform(12, 1.0)), gap.cwiseAbs().mean(), 1e-9);
  }
}

TEST(GameSuboptimality, EquilibriumIsZero) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TabularMarkovGame g = make_random_game(3, 2, 3, 0.8, 1.0, seed);
    const GameQTable q = nash_value_iteration(g, 1e-12).q;
    const JointPolicy eq = equilibrium_joint_policy(g, q);
    EXPECT_NEAR(game_suboptimality(g, eq.p1, WeightedNorm::uniform(18, 1.0), q), 0.0, 1e-8);
  }
}

TEST(GameSuboptimality, SingleOpponentActionReducesToMdp) {
  const TabularMDP mdp = oracle::random_mdp(4, 3, 0.85, 51);
  const TabularMarkovGame g = oracle::game_from_mdp(mdp);
  const TabularPolicy pi = TabularPolicy::uniform(4, 3);
  const WeightedNorm mu{random_simplex(12, 9), 1.0};
  EXPECT_NEAR(game_suboptimality(g, pi, mu), suboptimality(mdp, pi, mu), 1e-9);
}

TEST(GameSuboptimality, NonnegativeAndPositiveOffEquilibrium) {
  const TabularMarkovGame g = oracle::matching_pennies_game(0.9);
  const double pure = game_suboptimality(g, TabularPolicy::deterministic({0}, 2), WeightedNorm::uniform(4, 1.0));
  // A pure strategy loses 1 per step against its best response: Q^{pi,nu} = Q* - 0.9 * 10.
  EXPECT_NEAR(pure, 9.0, 1e-8);
  EXPECT_NEAR(game_suboptimality(g, TabularPolicy::uniform(1, 2), WeightedNorm::uniform(4, 1.0)), 0.0, 1e-9);
}

TEST(Sandwich, ExactIteratesSatisfyBothSides) {
  const TabularMDP mdp = oracle::random_mdp(4, 3, 0.9, 61);
  const std::vector<QTable> it = oracle::vi_iterates(mdp, 15);
  const SandwichReport r = verify_sandwich(mdp, it, oracle::q_star(mdp));
  EXPECT_EQ(r.upper_violation.size(), 15u);
  EXPECT_LE(r.max_violation, 1e-12);
}

TEST(Sandwich, NoisyIteratesSatisfyBothSides) {
  const TabularMDP mdp = oracle::random_mdp(4, 3, 0.9, 62);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0.0, 0.3);
  std::vector<QTable> it{QTable::Zero(4, 3)};
  for (int k = 0; k < 15; ++k) {
    QTable next = oracle::bellman(mdp, it.back());
    for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += n01(rng);
    it.push_back(next);
  }
  const std::vector<QTable> rho = one_step_residuals(mdp, it);
  ASSERT_EQ(rho.size(), 15u);
  EXPECT_LE((rho[3] - (oracle::bellman(mdp, it[3]) - it[4])).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE(verify_sandwich(mdp, it, rho, oracle::q_star(mdp)).max_violation, 1e-12);
}

TEST(Sandwich, DetectsWrongResiduals) {
  const TabularMDP mdp = oracle::random_mdp(4, 3, 0.9, 63);
  std::vector<QTable> it = oracle::vi_iterates(mdp, 6);
  it[4](1, 1) += 0.5;
  std::vector<QTable> zero(6, QTable::Zero(4, 3));
  const SandwichReport r = verify_sandwich(mdp, it, zero, oracle::q_star(mdp));
  EXPECT_GT(r.max_violation, 0.4);
  EXPECT_GT(r.lower_violation[3], 0.4);
  EXPECT_THROW(verify_sandwich(mdp, it, std::vector<QTable>(2, QTable::Zero(4, 3)), oracle::q_star(mdp)),
               std::invalid_argument);
}

TEST(Trace, EpsMax) {
  DiagnosticsTrace t;
  EXPECT_EQ(t.eps_max(), 0.0);
  t.records.push_back({0, 0.0, std::nullopt, std::nullopt, 0.0});
  t.records.push_back({1, 0.0, 0.3, std::nullopt, 0.0});
  t.records.push_back({2, 0.0, 0.1, std::nullopt, 0.0});
  EXPECT_EQ(t.eps_max(), 0.3);
}

TEST(Tabulate, RoundTripsTables) {
  const TabularMDP mdp = oracle::random_mdp(3, 2, 0.9, 71);
  const QTable q = QTable::Random(3, 2);
  EXPECT_TRUE(tabulate(TabularQ(q), mdp) == q);
}
