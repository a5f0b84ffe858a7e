#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fqlab/approximators.hpp"
#include "fqlab/diagnostics.hpp"
#include "fqlab/envs.hpp"
#include "fqlab/exact_solver.hpp"

namespace fqlab {

/// Distribution of the (S, A[, B]) regression inputs.
struct SamplingSpec {
  enum class Kind {
    kUniform,          // uniform over S x A (uniform states in [0,1]^r when continuous)
    kExplicit,         // `weights` over the flattened finite input space
    kOnPolicyMixture,  // uniform state; greedy action w.p. greedy_fraction, else uniform
    kExhaustive,       // every (s, a, s') once, weighted by P(s'|s,a), mean rewards
  };

  Kind kind = Kind::kUniform;
  std::vector<double> weights;
  double greedy_fraction = 0.5;
  bool require_full_support = false;
};

struct FqiConfig {
  std::size_t iterations = 10;              // K
  std::size_t samples_per_iteration = 1000; // n
  ApproximatorSpec approximator;
  TrainerConfig trainer;
  SamplingSpec sampling;
  std::uint64_t seed = 0;
  bool fresh_samples_per_iteration = true;
  bool warm_start = false;

  // Projected-SGD variant.
  std::optional<std::size_t> sgd_steps;  // T; unset means T = m
  double sgd_eta = 0.0;                  // <= 0 means 0.1 / sqrt(T)

  // Diagnostics.
  std::vector<double> mu;                    // suboptimality measure; empty = uniform
  bool record_iterates = false;              // keep the tabulated Q_0..Q_K
  std::size_t continuous_error_samples = 0;  // Monte Carlo points for continuous one-step error
  std::size_t continuous_inner_samples = 32;

  void validate() const;
};

struct FqiResult {
  std::unique_ptr<QFunction> q;              // Q_K
  std::optional<TabularPolicy> policy;       // greedy w.r.t. Q_K (tabular MDPs)
  std::optional<JointPolicy> joint_policy;   // equilibrium w.r.t. Q_K (games)
  DiagnosticsTrace trace;
  std::vector<QTable> iterates;              // record_iterates on MDPs
  std::vector<GameQTable> game_iterates;     // record_iterates on games
  double max_ball_distance = 0.0;            // projected SGD only
  bool diverged = false;
};

/// Y_i = r_i + gamma * max_a Q(s'_i, a).
std::vector<double> compute_targets(std::span<const TransitionSample> batch, const QFunction& q,
                                    double gamma);

/// Y_i = r_i + gamma * val(Q(s'_i, ., .)), with Q over joint actions a * n_b + b.
std::vector<double> compute_minimax_targets(std::span<const TransitionSample> batch,
                                            const QFunction& q, double gamma, std::size_t n_a,
                                            std::size_t n_b);

/// Q(s, ., .) as an n_a x n_b matrix from a joint-action approximator.
Eigen::MatrixXd joint_q_matrix(const QFunction& q, const State& s, std::size_t n_a,
                               std::size_t n_b);

/// Fitted Q-iteration: K rounds of {draw n samples from sigma, regress
/// Y = r + gamma max Q_k(s', .) on a fresh approximator}, from Q_0 = 0.
FqiResult run_fqi(const TabularMDP& mdp, const FqiConfig& config);
FqiResult run_fqi(const ContinuousMDP& mdp, const FqiConfig& config);

/// Minimax-FQI over joint actions; the output policy is the equilibrium
/// joint policy of Q_K.
FqiResult run_minimax_fqi(const TabularMarkovGame& game, const FqiConfig& config);

/// FQI where each regression is T projected-SGD steps on fresh single
/// samples, restarted from one shared symmetric initialization, with
/// Q_{k+1} taken at the averaged iterate.
FqiResult run_fqi_projected_sgd(const ContinuousMDP& mdp, const FqiConfig& config);
FqiResult run_fqi_projected_sgd(const TabularMDP& mdp, const FqiConfig& config);

/// Greedy action of a generic Q (lowest index on ties).
std::size_t greedy_action(const QFunction& q, const State& s);

}  // namespace fqlab
