#include "fqlab/matrix_game.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fqlab::matrix_game {

namespace {

constexpr int kMaxPivots = 100000;

void check_payoff(const Eigen::MatrixXd& payoff) {
  if (payoff.rows() == 0 || payoff.cols() == 0)
    throw std::invalid_argument("matrix game needs at least one row and one column");
  if (!payoff.allFinite()) throw std::invalid_argument("matrix game payoff must be finite");
}

void check_simplex(const Eigen::VectorXd& p) {
  if ((p.array() < -1e-12).any() || std::abs(p.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("strategy must lie on the probability simplex");
}

Eigen::VectorXd to_simplex(Eigen::VectorXd v) {
  v = v.cwiseMax(0.0);
  const double total = v.sum();
  if (total > 0.0) v /= total;
  return v;
}

}  // namespace

Solution solve(const Eigen::MatrixXd& payoff, double tol) {
  check_payoff(payoff);
  const Eigen::Index m = payoff.rows();
  const Eigen::Index n = payoff.cols();
  const double lo = payoff.minCoeff();
  const double hi = payoff.maxCoeff();

  Solution out;
  if (hi == lo) {
    out.value = lo;
    out.row_strategy = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
    out.col_strategy = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    return out;
  }

  // Tableau columns: n structural y's, m slacks, right-hand side.
  const Eigen::Index width = n + m + 1;
  Eigen::MatrixXd tab = Eigen::MatrixXd::Zero(m, width);
  tab.leftCols(n) = payoff.array() - lo + 1.0;
  tab.block(0, n, m, m).setIdentity();
  tab.col(width - 1).setOnes();
  // Reduced costs c_j - z_j for the maximization; objective value tracked apart.
  Eigen::RowVectorXd reduced = Eigen::RowVectorXd::Zero(width - 1);
  reduced.head(n).setOnes();
  double objective = 0.0;

  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;

  int pivots = 0;
  while (true) {
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < width - 1; ++j) {
      if (reduced(j) > tol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;

    Eigen::Index leave = -1;
    double best_ratio = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double a = tab(i, enter);
      if (a <= tol) continue;
      const double ratio = tab(i, width - 1) / a;
      if (leave < 0 || ratio < best_ratio ||
          (ratio == best_ratio &&
           basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
        leave = i;
        best_ratio = ratio;
      }
    }
    // Bounded because every payoff entry is >= 1 after the shift.
    if (leave < 0) throw LpError("matrix game LP reported unbounded");

    tab.row(leave) /= tab(leave, enter);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (i == leave) continue;
      const double f = tab(i, enter);
      if (f != 0.0) tab.row(i) -= f * tab.row(leave);
    }
    const double f = reduced(enter);
    reduced -= f * tab.row(leave).head(width - 1);
    objective += f * tab(leave, width - 1);
    basis[static_cast<std::size_t>(leave)] = enter;

    if (++pivots > kMaxPivots)
      throw LpError("matrix game LP exceeded " + std::to_string(kMaxPivots) + " pivots");
  }

  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index var = basis[static_cast<std::size_t>(i)];
    if (var < n) y(var) = tab(i, width - 1);
  }
  // Duals of the <= rows are minus the slack reduced costs.
  Eigen::VectorXd x = -reduced.segment(n, m).transpose();

  out.value = 1.0 / objective + lo - 1.0;
  out.row_strategy = to_simplex(std::move(x));
  out.col_strategy = to_simplex(std::move(y));
  return out;
}

double best_response_value(const Eigen::MatrixXd& payoff, const Eigen::VectorXd& strategy,
                           Side side) {
  check_payoff(payoff);
  if (side == Side::kRow) {
    if (strategy.size() != payoff.rows())
      throw std::invalid_argument("row strategy length must equal the number of rows");
    check_simplex(strategy);
    return (payoff.transpose() * strategy).minCoeff();
  }
  if (strategy.size() != payoff.cols())
    throw std::invalid_argument("column strategy length must equal the number of columns");
  check_simplex(strategy);
  return (payoff * strategy).maxCoeff();
}

double maximin_over_distributions(const Eigen::MatrixXd& payoff) { return solve(payoff).value; }

double exploitability(const Eigen::MatrixXd& payoff, const Solution& solution) {
  const double row_gap =
      solution.value - best_response_value(payoff, solution.row_strategy, Side::kRow);
  const double col_gap =
      best_response_value(payoff, solution.col_strategy, Side::kCol) - solution.value;
  return std::max(row_gap, col_gap);
}

}  // namespace fqlab::matrix_game
