#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace fqlab::matrix_game {

/// Value and minimax strategies of a zero-sum matrix game. The row player
/// maximizes x^T M y, the column player minimizes it.
struct Solution {
  double value = 0.0;
  Eigen::VectorXd row_strategy;
  Eigen::VectorXd col_strategy;
};

enum class Side { kRow, kCol };

class LpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solves the game by primal simplex with Bland's rule on
///   maximize sum(y)  s.t.  (M - min(M) + 1) y <= 1,  y >= 0,
/// reading the column strategy from the primal and the row strategy from
/// the duals. A constant payoff matrix returns uniform strategies.
///
/// `tol` is the pivot tolerance; strategies are reported on the simplex.
/// Throws std::invalid_argument on an empty or non-finite matrix and
/// LpError if the pivot cap is hit.
Solution solve(const Eigen::MatrixXd& payoff, double tol = 1e-12);

/// Guaranteed payoff of a strategy: min_j (M^T x)_j for a row strategy,
/// max_i (M y)_i for a column strategy.
double best_response_value(const Eigen::MatrixXd& payoff, const Eigen::VectorXd& strategy,
                           Side side);

/// max over row mixtures of min over column mixtures; same number as
/// solve(payoff).value.
double maximin_over_distributions(const Eigen::MatrixXd& payoff);

/// Largest amount either player gives up against a best response:
/// max(value - best_response_value(x, row), best_response_value(y, col) - value).
double exploitability(const Eigen::MatrixXd& payoff, const Solution& solution);

}  // namespace fqlab::matrix_game
