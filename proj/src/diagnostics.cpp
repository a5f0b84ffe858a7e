#include "fqlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fqlab {

namespace {

constexpr double kOracleTol = 1e-10;

void check_distribution(const Eigen::VectorXd& w, std::size_t n, const char* what) {
  if (static_cast<std::size_t>(w.size()) != n)
    throw std::invalid_argument(std::string(what) + " has the wrong length");
  if ((w.array() < 0.0).any() || !w.allFinite())
    throw std::invalid_argument(std::string(what) + " has a negative entry");
  if (std::abs(w.sum() - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + " does not sum to 1");
}

// sum_x p(x)^2 / sigma(x), or +inf when p has mass off sigma's support.
double chi_square_mass(const Eigen::VectorXd& p, const Eigen::VectorXd& sigma) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0.0) continue;
    if (sigma(i) <= 0.0) return std::numeric_limits<double>::infinity();
    acc += p(i) * p(i) / sigma(i);
  }
  return acc;
}

// Next state marginal given a state-action distribution.
Eigen::VectorXd next_state_marginal(const TabularMDP& mdp, const Eigen::VectorXd& dist) {
  return mdp.transition().transpose() * dist;
}

Eigen::VectorXd deterministic_step(const TabularMDP& mdp, const Eigen::VectorXd& dist,
                                   const std::vector<std::size_t>& actions) {
  const Eigen::VectorXd d = next_state_marginal(mdp, dist);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dist.size());
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    out(static_cast<Eigen::Index>(mdp.row_index(s, actions[s]))) = d(static_cast<Eigen::Index>(s));
  return out;
}

}  // namespace

WeightedNorm WeightedNorm::uniform(std::size_t n, double p) {
  if (n == 0) throw std::invalid_argument("uniform measure over an empty space");
  return WeightedNorm{Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)), p};
}

void WeightedNorm::validate() const {
  if (!(p >= 1.0)) throw std::invalid_argument("norm order p must be >= 1");
  check_distribution(weights, static_cast<std::size_t>(weights.size()), "norm measure");
}

double DiagnosticsTrace::eps_max() const {
  double out = 0.0;
  for (const auto& r : records)
    if (r.one_step_error) out = std::max(out, *r.one_step_error);
  return out;
}

Eigen::VectorXd flatten(const QTable& q) {
  Eigen::VectorXd out(q.size());
  Eigen::Map<RowMatrix>(out.data(), q.rows(), q.cols()) = q;
  return out;
}

Eigen::VectorXd flatten(const GameQTable& q) {
  Eigen::Index total = 0;
  for (const auto& m : q) total += m.size();
  Eigen::VectorXd out(total);
  Eigen::Index off = 0;
  for (const auto& m : q) {
    Eigen::Map<RowMatrix>(out.data() + off, m.rows(), m.cols()) = m;
    off += m.size();
  }
  return out;
}

double weighted_lp_norm(const Eigen::VectorXd& f, const WeightedNorm& norm) {
  norm.validate();
  if (f.size() != norm.weights.size())
    throw std::invalid_argument("function and measure sizes differ");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i)
    acc += norm.weights(i) * std::pow(std::abs(f(i)), norm.p);
  return std::pow(acc, 1.0 / norm.p);
}

double weighted_lp_norm(const QTable& f, const WeightedNorm& norm) {
  return weighted_lp_norm(flatten(f), norm);
}

double weighted_lp_norm(const GameQTable& f, const WeightedNorm& norm) {
  return weighted_lp_norm(flatten(f), norm);
}

MonteCarloEstimate weighted_lp_norm(const QFunction& f, const ContinuousMDP& mdp, double p,
                                    std::size_t n_samples, Rng& rng) {
  if (!(p >= 1.0)) throw std::invalid_argument("norm order p must be >= 1");
  if (n_samples < 2) throw std::invalid_argument("need at least two Monte Carlo samples");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const State s = mdp.random_state(rng);
    const std::size_t a = uniform_index(rng, mdp.n_actions());
    const double v = std::pow(std::abs(f.evaluate(s, a)), p);
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  MonteCarloEstimate out;
  out.samples = n_samples;
  out.value = std::pow(mean, 1.0 / p);
  out.std_error = mean > 0.0 ? std::sqrt(var / n) * out.value / (p * mean) : 0.0;
  return out;
}

double one_step_bellman_error(const QTable& q_next, const QTable& q_prev, const TabularMDP& mdp,
                              const WeightedNorm& sigma) {
  return weighted_lp_norm(QTable(bellman_optimality(mdp, q_prev) - q_next), sigma);
}

double one_step_bellman_error(const GameQTable& q_next, const GameQTable& q_prev,
                              const TabularMarkovGame& game, const WeightedNorm& sigma) {
  return weighted_lp_norm(game_difference(game_bellman_optimality(game, q_prev), q_next), sigma);
}

MonteCarloEstimate one_step_bellman_error(const QFunction& q_next, const QFunction& q_prev,
                                          const ContinuousMDP& mdp, std::size_t n_samples,
                                          std::size_t inner_samples, Rng& rng) {
  if (n_samples < 2 || inner_samples == 0)
    throw std::invalid_argument("need at least two outer and one inner Monte Carlo sample");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const State s = mdp.random_state(rng);
    const std::size_t a = uniform_index(rng, mdp.n_actions());
    double lookahead = 0.0;
    for (std::size_t j = 0; j < inner_samples; ++j) {
      const TransitionSample t = sample_transition(mdp, s, a, rng);
      lookahead += max_over_actions(q_prev, t.next_state);
    }
    const double tq = mdp.reward(s.coords, a) +
                      mdp.gamma() * lookahead / static_cast<double>(inner_samples);
    const double d = tq - q_next.evaluate(s, a);
    sum += d * d;
    sum_sq += d * d * d * d;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  MonteCarloEstimate out;
  out.samples = n_samples;
  out.value = std::sqrt(mean);
  out.std_error = mean > 0.0 ? std::sqrt(var / n) / (2.0 * out.value) : 0.0;
  return out;
}

Eigen::VectorXd pushforward(const TabularMDP& mdp, const Eigen::VectorXd& dist,
                            const TabularPolicy& pi) {
  if (static_cast<std::size_t>(dist.size()) != mdp.n_states() * mdp.n_actions())
    throw std::invalid_argument("distribution has the wrong length");
  if (pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions())
    throw std::invalid_argument("policy shape does not match the MDP");
  const Eigen::VectorXd d = next_state_marginal(mdp, dist);
  Eigen::VectorXd out(dist.size());
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a)
      out(static_cast<Eigen::Index>(mdp.row_index(s, a))) =
          d(static_cast<Eigen::Index>(s)) * pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  return out;
}

KappaResult concentration_coefficient(const TabularMDP& mdp, const Eigen::VectorXd& mu,
                                      const Eigen::VectorXd& sigma, std::size_t m,
                                      KappaMode mode, std::size_t mc_sequences,
                                      std::uint64_t seed) {
  const std::size_t n = mdp.n_states() * mdp.n_actions();
  check_distribution(mu, n, "mu");
  check_distribution(sigma, n, "sigma");
  if (m == 0) throw std::invalid_argument("concentration coefficient order m must be >= 1");

  const double log_sequences = static_cast<double>(mdp.n_states() * m) *
                               std::log(static_cast<double>(mdp.n_actions()));
  const bool feasible = log_sequences <= std::log(kMaxKappaSequences) + 1e-9;
  if (mode == KappaMode::kExhaustive && !feasible)
    throw std::invalid_argument("too many policy sequences for exhaustive enumeration");
  const bool exhaustive = mode == KappaMode::kExhaustive || (mode == KappaMode::kAuto && feasible);

  KappaResult out;
  out.exhaustive = exhaustive;
  double best = 0.0;

  if (exhaustive) {
    // Depth-first over deterministic policies, one per step.
    const std::size_t S = mdp.n_states();
    const std::size_t A = mdp.n_actions();
    std::vector<std::size_t> actions(S, 0);
    auto recurse = [&](auto&& self, const Eigen::VectorXd& dist, std::size_t depth) -> void {
      if (depth == m) {
        best = std::max(best, chi_square_mass(dist, sigma));
        ++out.sequences;
        return;
      }
      std::fill(actions.begin(), actions.end(), 0);
      while (true) {
        const std::vector<std::size_t> current = actions;
        self(self, deterministic_step(mdp, dist, current), depth + 1);
        actions = current;
        std::size_t pos = 0;
        while (pos < S && ++actions[pos] == A) actions[pos++] = 0;
        if (pos == S) break;
      }
    };
    recurse(recurse, mu, 0);
  } else {
    Rng rng(seed);
    std::gamma_distribution<double> unit_gamma(1.0, 1.0);
    for (std::size_t i = 0; i < mc_sequences; ++i) {
      Eigen::VectorXd dist = mu;
      const bool stochastic = (i % 2) == 1;
      for (std::size_t step = 0; step < m; ++step) {
        TabularPolicy pi{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mdp.n_states()),
                                               static_cast<Eigen::Index>(mdp.n_actions()))};
        for (Eigen::Index s = 0; s < pi.probs.rows(); ++s) {
          if (stochastic) {
            for (Eigen::Index a = 0; a < pi.probs.cols(); ++a) pi.probs(s, a) = unit_gamma(rng);
            pi.probs.row(s) /= pi.probs.row(s).sum();
          } else {
            pi.probs(s, static_cast<Eigen::Index>(uniform_index(rng, mdp.n_actions()))) = 1.0;
          }
        }
        dist = pushforward(mdp, dist, pi);
      }
      best = std::max(best, chi_square_mass(dist, sigma));
      ++out.sequences;
    }
  }
  out.infinite = std::isinf(best);
  out.value = std::sqrt(best);
  return out;
}

double phi_truncated_sum(const std::vector<double>& kappas, double gamma) {
  double acc = 0.0;
  for (std::size_t i = 0; i < kappas.size(); ++i) {
    const double m = static_cast<double>(i + 1);
    acc += std::pow(gamma, m - 1.0) * m * kappas[i];
  }
  return (1.0 - gamma) * (1.0 - gamma) * acc;
}

double phi_tail_bound(double kappa_sup, std::size_t m_max, double gamma) {
  const double m = static_cast<double>(m_max);
  return kappa_sup * std::pow(gamma, m) * (m + 1.0 - m * gamma);
}

PhiEstimate phi_estimate(const TabularMDP& mdp, const Eigen::VectorXd& mu,
                         const Eigen::VectorXd& sigma, std::size_t m_max, KappaMode mode) {
  if (m_max == 0) throw std::invalid_argument("phi_estimate needs m_max >= 1");
  PhiEstimate out;
  for (std::size_t m = 1; m <= m_max; ++m) {
    const KappaResult k = concentration_coefficient(mdp, mu, sigma, m, mode);
    out.kappas.push_back(k.value);
    out.exhaustive = out.exhaustive && k.exhaustive;
    out.infinite = out.infinite || k.infinite;
    out.kappa_sup = std::max(out.kappa_sup, k.value);
  }
  out.truncated = phi_truncated_sum(out.kappas, mdp.gamma());
  out.tail_bound = phi_tail_bound(out.kappa_sup, m_max, mdp.gamma());
  return out;
}

void BoundInputs::validate() const {
  if (!(eps_max >= 0.0) || !(phi >= 0.0) || !(r_max >= 0.0))
    throw std::invalid_argument("bound inputs must be nonnegative");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
}

double error_propagation_bound(const BoundInputs& in) {
  in.validate();
  const double denom = (1.0 - in.gamma) * (1.0 - in.gamma);
  return 2.0 * in.phi * in.gamma / denom * in.eps_max +
         4.0 * std::pow(in.gamma, static_cast<double>(in.k + 1)) / denom * in.r_max;
}

double suboptimality(const TabularMDP& mdp, const TabularPolicy& pi, const WeightedNorm& mu,
                     const std::optional<QTable>& q_star) {
  const QTable star = q_star ? *q_star : value_iteration(mdp, kOracleTol).q;
  const QTable q_pi = policy_evaluation(mdp, pi);
  WeightedNorm l1 = mu;
  l1.p = 1.0;
  return weighted_lp_norm(QTable(star - q_pi), l1);
}

double game_suboptimality(const TabularMarkovGame& game, const TabularPolicy& pi,
                          const WeightedNorm& mu, const std::optional<GameQTable>& q_star) {
  const GameQTable star = q_star ? *q_star : nash_value_iteration(game, kOracleTol).q;
  const TabularPolicy nu = best_response_policy(game, pi);
  const GameQTable q_pi = joint_policy_evaluation(game, pi, nu);
  WeightedNorm l1 = mu;
  l1.p = 1.0;
  return weighted_lp_norm(game_difference(star, q_pi), l1);
}

std::vector<QTable> one_step_residuals(const TabularMDP& mdp, const std::vector<QTable>& iterates) {
  std::vector<QTable> out;
  for (std::size_t k = 0; k + 1 < iterates.size(); ++k)
    out.push_back(bellman_optimality(mdp, iterates[k]) - iterates[k + 1]);
  return out;
}

SandwichReport verify_sandwich(const TabularMDP& mdp, const std::vector<QTable>& iterates,
                               const std::vector<QTable>& residuals, const QTable& q_star) {
  if (iterates.empty() || residuals.size() + 1 != iterates.size())
    throw std::invalid_argument("need K+1 iterates and K residuals");
  const TabularPolicy pi_star = greedy_policy(q_star);
  SandwichReport report;
  for (std::size_t k = 0; k < residuals.size(); ++k) {
    const QTable gap = q_star - iterates[k];
    const QTable middle = q_star - iterates[k + 1];
    const QTable upper = mdp.gamma() * apply_p_pi(mdp, gap, pi_star) + residuals[k];
    const QTable lower =
        mdp.gamma() * apply_p_pi(mdp, gap, greedy_policy(iterates[k])) + residuals[k];
    report.upper_violation.push_back((middle - upper).maxCoeff());
    report.lower_violation.push_back((lower - middle).maxCoeff());
    report.max_violation = std::max({report.max_violation, report.upper_violation.back(),
                                     report.lower_violation.back()});
  }
  return report;
}

SandwichReport verify_sandwich(const TabularMDP& mdp, const std::vector<QTable>& iterates,
                               const QTable& q_star) {
  return verify_sandwich(mdp, iterates, one_step_residuals(mdp, iterates), q_star);
}

QTable tabulate(const QFunction& q, const TabularMDP& mdp) {
  QTable out(static_cast<Eigen::Index>(mdp.n_states()), static_cast<Eigen::Index>(mdp.n_actions()));
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    out.row(static_cast<Eigen::Index>(s)) = q.evaluate_all(mdp.state(s)).transpose();
  return out;
}

GameQTable tabulate(const QFunction& q, const TabularMarkovGame& game) {
  GameQTable out(game.n_states());
  const auto n_a = static_cast<Eigen::Index>(game.n_actions_p1());
  const auto n_b = static_cast<Eigen::Index>(game.n_actions_p2());
  for (std::size_t s = 0; s < game.n_states(); ++s) {
    const Eigen::VectorXd all = q.evaluate_all(game.state(s));
    out[s] = Eigen::Map<const RowMatrix>(all.data(), n_a, n_b);
  }
  return out;
}

}  // namespace fqlab
