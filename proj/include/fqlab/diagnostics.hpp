#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fqlab/approximators.hpp"
#include "fqlab/envs.hpp"
#include "fqlab/exact_solver.hpp"

namespace fqlab {

/// Explicit measure over a flattened finite space (S x A laid out s * A + a,
/// or S x A x B laid out (s * A + a) * B + b) together with the order p.
struct WeightedNorm {
  Eigen::VectorXd weights;
  double p = 2.0;

  static WeightedNorm uniform(std::size_t n, double p = 2.0);
  void validate() const;
};

struct MonteCarloEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// One row of a per-iteration trace.
struct IterationRecord {
  std::size_t k = 0;
  double empirical_mse = 0.0;
  std::optional<double> one_step_error;  // |T Q_{k-1} - Q_k|_sigma
  std::optional<double> suboptimality;   // |Q* - Q^{pi_k}|_{1,mu}
  double wall_ms = 0.0;
};

struct DiagnosticsTrace {
  std::vector<IterationRecord> records;

  /// Largest recorded one-step error (epsilon_max), or 0 when none recorded.
  double eps_max() const;
};

/// Row-major flattening of a Q table / game table to match WeightedNorm.
Eigen::VectorXd flatten(const QTable& q);
Eigen::VectorXd flatten(const GameQTable& q);

/// (sum_x nu(x) |f(x)|^p)^{1/p}.
double weighted_lp_norm(const Eigen::VectorXd& f, const WeightedNorm& norm);
double weighted_lp_norm(const QTable& f, const WeightedNorm& norm);
double weighted_lp_norm(const GameQTable& f, const WeightedNorm& norm);

/// Monte Carlo L_p norm of f over uniform states in [0,1]^r and uniform
/// actions. The standard error is that of the mean of |f|^p.
MonteCarloEstimate weighted_lp_norm(const QFunction& f, const ContinuousMDP& mdp, double p,
                                    std::size_t n_samples, Rng& rng);

/// |T q_prev - q_next|_sigma with the exact operator.
double one_step_bellman_error(const QTable& q_next, const QTable& q_prev, const TabularMDP& mdp,
                              const WeightedNorm& sigma);
double one_step_bellman_error(const GameQTable& q_next, const GameQTable& q_prev,
                              const TabularMarkovGame& game, const WeightedNorm& sigma);

/// Monte Carlo |T q_prev - q_next|_2 over uniform (s, a). T q_prev(s, a) is
/// estimated with `inner_samples` next-state draws per point.
MonteCarloEstimate one_step_bellman_error(const QFunction& q_next, const QFunction& q_prev,
                                          const ContinuousMDP& mdp, std::size_t n_samples,
                                          std::size_t inner_samples, Rng& rng);

enum class KappaMode { kAuto, kExhaustive, kMonteCarlo };

struct KappaResult {
  double value = 0.0;
  bool exhaustive = false;  // false: Monte Carlo lower bound
  bool infinite = false;    // pushforward puts mass where sigma has none
  std::size_t sequences = 0;
};

/// Largest number of policy sequences the exhaustive mode will enumerate.
inline constexpr double kMaxKappaSequences = 1e6;

/// m-th concentration coefficient
///   sup over policy sequences of sqrt(E_sigma |d(P^{pi_m}...P^{pi_1} mu) / d sigma|^2).
/// Exhaustive mode enumerates deterministic policy sequences (the objective
/// is convex in each policy, so a vertex attains the sup). Monte Carlo mode
/// samples deterministic and stochastic sequences and is a lower bound.
KappaResult concentration_coefficient(const TabularMDP& mdp, const Eigen::VectorXd& mu,
                                      const Eigen::VectorXd& sigma, std::size_t m,
                                      KappaMode mode = KappaMode::kAuto,
                                      std::size_t mc_sequences = 10000, std::uint64_t seed = 0);

/// Pushforward of mu through one step of P^pi.
Eigen::VectorXd pushforward(const TabularMDP& mdp, const Eigen::VectorXd& dist,
                            const TabularPolicy& pi);

struct PhiEstimate {
  double truncated = 0.0;  // (1-g)^2 sum_{m<=M} g^{m-1} m kappa(m)
  double tail_bound = 0.0; // same sum over m > M with kappa(m) <= kappa_sup
  double kappa_sup = 0.0;
  std::vector<double> kappas;
  bool exhaustive = true;
  bool infinite = false;

  double total() const { return truncated + tail_bound; }
};

PhiEstimate phi_estimate(const TabularMDP& mdp, const Eigen::VectorXd& mu,
                         const Eigen::VectorXd& sigma, std::size_t m_max,
                         KappaMode mode = KappaMode::kAuto);

/// (1-g)^2 sum_{m<=M} g^{m-1} m kappa_m, kappas[0] being kappa(1).
double phi_truncated_sum(const std::vector<double>& kappas, double gamma);
/// (1-g)^2 kappa_sup sum_{m>M} g^{m-1} m = kappa_sup g^M (M + 1 - M g).
double phi_tail_bound(double kappa_sup, std::size_t m_max, double gamma);

struct BoundInputs {
  double eps_max = 0.0;
  double phi = 0.0;
  double gamma = 0.9;
  std::size_t k = 0;
  double r_max = 1.0;

  void validate() const;
};

/// 2 phi gamma / (1-gamma)^2 * eps_max + 4 gamma^{K+1} / (1-gamma)^2 * r_max.
double error_propagation_bound(const BoundInputs& in);

/// |Q* - Q^pi|_{1,mu}. `q_star` may be passed to skip re-solving.
double suboptimality(const TabularMDP& mdp, const TabularPolicy& pi, const WeightedNorm& mu,
                     const std::optional<QTable>& q_star = std::nullopt);

/// |Q* - Q^{pi, nu*_pi}|_{1,mu} with nu*_pi the best response to pi.
double game_suboptimality(const TabularMarkovGame& game, const TabularPolicy& pi,
                          const WeightedNorm& mu,
                          const std::optional<GameQTable>& q_star = std::nullopt);

struct SandwichReport {
  std::vector<double> upper_violation;  // per k: max of (Q*-Q_{k+1}) - upper
  std::vector<double> lower_violation;  // per k: max of lower - (Q*-Q_{k+1})
  double max_violation = 0.0;
};

/// rho_{k+1} = T Q_k - Q_{k+1}.
std::vector<QTable> one_step_residuals(const TabularMDP& mdp, const std::vector<QTable>& iterates);

/// Checks, for every k,
///   g P^{pi*}(Q* - Q_k) + rho_{k+1} >= Q* - Q_{k+1} >= g P^{pi_k}(Q* - Q_k) + rho_{k+1}
/// elementwise, where pi_k is greedy for Q_k and pi* greedy for Q*.
SandwichReport verify_sandwich(const TabularMDP& mdp, const std::vector<QTable>& iterates,
                               const std::vector<QTable>& residuals, const QTable& q_star);
SandwichReport verify_sandwich(const TabularMDP& mdp, const std::vector<QTable>& iterates,
                               const QTable& q_star);

/// Evaluates a function approximator on every state of a tabular model.
QTable tabulate(const QFunction& q, const TabularMDP& mdp);
GameQTable tabulate(const QFunction& q, const TabularMarkovGame& game);

}  // namespace fqlab
