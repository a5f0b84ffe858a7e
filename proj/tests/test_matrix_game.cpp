#include <gtest/gtest.h>

#include <random>

#include "fqlab/matrix_game.hpp"
#include "test_support.hpp"

using namespace fqlab::matrix_game;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

void expect_on_simplex(const Eigen::VectorXd& x) {
  EXPECT_NEAR(x.sum(), 1.0, 1e-12);
  EXPECT_GE(x.minCoeff(), 0.0);
}

}  // namespace

TEST(MatrixGame, MatchingPennies) {
  Eigen::MatrixXd m(2, 2);
  m << 1, -1, -1, 1;
  const Solution s = solve(m);
  EXPECT_NEAR(s.value, 0.0, 1e-10);
  EXPECT_NEAR(s.row_strategy(0), 0.5, 1e-10);
  EXPECT_NEAR(s.col_strategy(0), 0.5, 1e-10);
}

TEST(MatrixGame, RockPaperScissors) {
  Eigen::MatrixXd m(3, 3);
  m << 0, -1, 1, 1, 0, -1, -1, 1, 0;
  const Solution s = solve(m);
  EXPECT_NEAR(s.value, 0.0, 1e-10);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(s.row_strategy(i), 1.0 / 3.0, 1e-10);
    EXPECT_NEAR(s.col_strategy(i), 1.0 / 3.0, 1e-10);
  }
}

TEST(MatrixGame, TwoByTwoAgainstGridSearch) {
  Eigen::MatrixXd m(2, 2);
  m << 3, 1, 0, 2;
  const Solution s = solve(m);
  EXPECT_NEAR(s.value, 1.5, 1e-12);
  EXPECT_NEAR(oracle::grid_value_2xn(m), 1.5, 1e-9);
  EXPECT_NEAR(s.row_strategy(0), 0.5, 1e-12);
}

TEST(MatrixGame, TwoByNAgainstGridSearch) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Eigen::MatrixXd m = random_matrix(rng, 2, 2 + i % 5);
    EXPECT_NEAR(solve(m).value, oracle::grid_value_2xn(m), 1e-8);
  }
}

TEST(MatrixGame, BestResponseValues) {
  Eigen::MatrixXd mp(2, 2);
  mp << 1, -1, -1, 1;
  EXPECT_NEAR(best_response_value(mp, Eigen::Vector2d(0.5, 0.5), Side::kRow), 0.0, 1e-15);
  Eigen::MatrixXd m(2, 2);
  m << 3, 1, 0, 2;
  EXPECT_EQ(best_response_value(m, Eigen::Vector2d(1.0, 0.0), Side::kRow), 1.0);
  EXPECT_EQ(best_response_value(m, Eigen::Vector2d(1.0, 0.0), Side::kCol), 3.0);
  EXPECT_THROW(best_response_value(m, Eigen::Vector3d(1, 0, 0), Side::kRow), std::invalid_argument);
}

TEST(MatrixGame, StrongDualityAndExploitabilityOnRandomMatrices) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 10);
  for (int i = 0; i < 200; ++i) {
    const Eigen::MatrixXd m = random_matrix(rng, dim(rng), dim(rng));
    const Solution s = solve(m);
    expect_on_simplex(s.row_strategy);
    expect_on_simplex(s.col_strategy);
    const double lower = oracle::row_guarantee(m, s.row_strategy);
    const double upper = oracle::col_guarantee(m, s.col_strategy);
    EXPECT_LE(upper - lower, 1e-8);
    EXPECT_LE(exploitability(m, s), 1e-8);
    EXPECT_NEAR(best_response_value(m, s.row_strategy, Side::kRow), s.value, 1e-8);
    EXPECT_NEAR(best_response_value(m, s.col_strategy, Side::kCol), s.value, 1e-8);
    EXPECT_NEAR(maximin_over_distributions(m), s.value, 1e-8);
  }
}

TEST(MatrixGame, ShiftAndScaleEquivariance) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 30; ++i) {
    const Eigen::MatrixXd m = random_matrix(rng, 4, 5);
    const Solution base = solve(m);
    const Solution shifted = solve(m.array() + 2.5);
    EXPECT_NEAR(shifted.value, base.value + 2.5, 1e-9);
    EXPECT_LE(exploitability(m, Solution{base.value, shifted.row_strategy, shifted.col_strategy}), 1e-8);
    const Solution scaled = solve(3.0 * m);
    EXPECT_NEAR(scaled.value, 3.0 * base.value, 1e-9);
  }
}

TEST(MatrixGame, ConstantPayoffIsUniform) {
  const Solution s = solve(Eigen::MatrixXd::Constant(3, 2, -0.7));
  EXPECT_EQ(s.value, -0.7);
  EXPECT_NEAR(s.row_strategy(2), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.col_strategy(1), 0.5, 1e-15);
}

TEST(MatrixGame, OneByOneAndPureSaddle) {
  EXPECT_EQ(solve(Eigen::MatrixXd::Constant(1, 1, 4.0)).value, 4.0);
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;  // saddle at (1, 0)
  const Solution s = solve(m);
  EXPECT_NEAR(s.value, 4.0, 1e-12);
  EXPECT_NEAR(s.row_strategy(1), 1.0, 1e-12);
  EXPECT_NEAR(s.col_strategy(0), 1.0, 1e-12);
}

TEST(MatrixGame, RejectsEmptyOrNonFinite) {
  EXPECT_THROW(solve(Eigen::MatrixXd(0, 2)), std::invalid_argument);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
  m(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(solve(m), std::invalid_argument);
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(solve(m), std::invalid_argument);
}

TEST(MatrixGame, DeterministicAcrossCalls) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd m = random_matrix(rng, 6, 6);
  const Solution a = solve(m), b = solve(m);
  EXPECT_EQ(a.value, b.value);
  EXPECT_TRUE(a.row_strategy == b.row_strategy);
  EXPECT_TRUE(a.col_strategy == b.col_strategy);
}
