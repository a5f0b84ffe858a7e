#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fqlab/envs.hpp"
#include "fqlab/rng.hpp"

namespace fqlab {

/// One regression input. For games `action` is the joint index a * n_b + b.
struct StateAction {
  State state;
  std::size_t action = 0;
};

/// Least-squares data (S_i, A_i) -> Y_i with optional nonnegative weights
/// (empty means all ones).
struct RegressionDataset {
  std::vector<StateAction> inputs;
  std::vector<double> targets;
  std::vector<double> weights;

  std::size_t size() const { return inputs.size(); }
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
  void validate() const;
};

struct TrainerConfig {
  enum class Optimizer { kGradientDescent, kAdam };

  Optimizer optimizer = Optimizer::kGradientDescent;
  double learning_rate = 1e-2;
  std::size_t epochs = 2000;
  std::size_t batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;
  double ridge = 1e-8;         // linear models only
};

struct FitReport {
  double final_mse = 0.0;
  std::size_t epochs_run = 0;
  bool diverged = false;
  std::size_t clipped = 0;
  std::size_t pruned = 0;
};

/// Action-value function over a finite action set.
class QFunction {
 public:
  virtual ~QFunction() = default;

  virtual std::size_t n_actions() const = 0;
  virtual double evaluate(const State& s, std::size_t action) const = 0;
  virtual Eigen::VectorXd evaluate_all(const State& s) const;
  virtual std::unique_ptr<QFunction> clone() const = 0;

  /// Least-squares fit to the dataset. Throws std::invalid_argument on an
  /// empty dataset.
  virtual FitReport fit(const RegressionDataset& data, const TrainerConfig& trainer) = 0;

  /// theta <- theta + lr * mean_i (Y_i - Q(s_i, a_i)) grad Q(s_i, a_i).
  /// Returns the batch mean squared error before the step.
  virtual double gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                               double lr) = 0;
};

double max_over_actions(const QFunction& q, const State& s);

/// Lookup table indexed by State::index.
class TabularQ final : public QFunction {
 public:
  TabularQ(std::size_t n_states, std::size_t n_actions);
  explicit TabularQ(Eigen::MatrixXd table);

  std::size_t n_actions() const override { return static_cast<std::size_t>(table_.cols()); }
  double evaluate(const State& s, std::size_t action) const override;
  Eigen::VectorXd evaluate_all(const State& s) const override;
  std::unique_ptr<QFunction> clone() const override { return std::make_unique<TabularQ>(*this); }

  /// Weighted per-cell mean of the targets; cells without data keep their value.
  FitReport fit(const RegressionDataset& data, const TrainerConfig& trainer) override;
  double gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                       double lr) override;

  const Eigen::MatrixXd& table() const { return table_; }
  Eigen::MatrixXd& table() { return table_; }

 private:
  Eigen::MatrixXd table_;
};

/// Q(s, a) = beta_a . [1, s.coords].
class LinearQ final : public QFunction {
 public:
  LinearQ(std::size_t state_dim, std::size_t n_actions);

  std::size_t n_actions() const override { return static_cast<std::size_t>(coef_.cols()); }
  double evaluate(const State& s, std::size_t action) const override;
  std::unique_ptr<QFunction> clone() const override { return std::make_unique<LinearQ>(*this); }

  /// Per-action ridge normal equations (X^T W X + ridge I) beta = X^T W y.
  FitReport fit(const RegressionDataset& data, const TrainerConfig& trainer) override;
  double gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                       double lr) override;

  /// (state_dim + 1) x n_actions; row 0 is the intercept.
  const Eigen::MatrixXd& coefficients() const { return coef_; }
  Eigen::MatrixXd& coefficients() { return coef_; }

 private:
  Eigen::VectorXd features(const State& s) const;
  Eigen::MatrixXd coef_;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Scalar-output ReLU network W_{L+1} relu(W_L ... relu(W_1 x + v_1) ... + v_L) + v_{L+1}.
class ReluMlp {
 public:
  ReluMlp() = default;
  /// widths = {d_0, d_1, ..., d_L}; the output layer maps d_L -> 1.
  ReluMlp(const std::vector<std::size_t>& widths, Rng& rng);

  double forward(const Eigen::VectorXd& x) const;
  std::size_t input_dim() const;
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Parameters flattened layer by layer (weights row-major, then bias).
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& theta);

  /// Loss 0.5 * sum_i w_i (f(x_i) - y_i)^2 / sum_i w_i over the columns of
  /// `x`; writes its gradient (flat layout) into `grad`.
  double loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, Eigen::VectorXd& grad) const;

 private:
  std::vector<DenseLayer> layers_;
};

struct ConstraintReport {
  std::size_t clipped = 0;
  std::size_t pruned = 0;
};

/// Per-action ReLU heads sharing one input space, each constrained to
/// max |entry| <= 1 and at most `sparsity_budget` nonzero parameters, with
/// outputs clamped to [-v_max, v_max].
class SparseReluNetwork final : public QFunction {
 public:
  /// hidden_widths = {d_1, ..., d_L}. A sparsity budget of 0 means unlimited.
  SparseReluNetwork(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths,
                    std::size_t n_actions, std::size_t sparsity_budget, double v_max, Rng& rng,
                    bool truncate = true);

  std::size_t n_actions() const override { return heads_.size(); }
  double evaluate(const State& s, std::size_t action) const override;
  std::unique_ptr<QFunction> clone() const override {
    return std::make_unique<SparseReluNetwork>(*this);
  }

  /// Gradient descent (or Adam) on 0.5 * weighted MSE of the untruncated
  /// heads, with enforce_constraints after every epoch.
  FitReport fit(const RegressionDataset& data, const TrainerConfig& trainer) override;
  double gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                       double lr) override;

  double raw_output(const State& s, std::size_t action) const;
  std::vector<ReluMlp>& heads() { return heads_; }
  const std::vector<ReluMlp>& heads() const { return heads_; }
  std::size_t sparsity_budget() const { return sparsity_budget_; }
  double v_max() const { return v_max_; }
  bool truncates() const { return truncate_; }

 private:
  std::vector<ReluMlp> heads_;
  std::size_t sparsity_budget_;
  double v_max_;
  bool truncate_;
};

/// Clips every parameter to [-1, 1] and, per head, zeroes the smallest
/// magnitudes (earlier index first on ties) until at most `budget` are
/// nonzero.
ConstraintReport enforce_constraints(SparseReluNetwork& net);
ConstraintReport enforce_constraints(ReluMlp& head, std::size_t budget);

/// Two-layer network Q(s, a) = (2m)^{-1/2} sum_j b_j relu(W_j . x(s, a))
/// with x(s, a) = [s.coords, onehot(a)] / sqrt(state_dim + 1) so |x| <= 1.
/// Only W trains; b stays at its initial signs.
class TwoLayerNtkNetwork final : public QFunction {
 public:
  TwoLayerNtkNetwork(Eigen::VectorXd signs, Eigen::MatrixXd weights, Eigen::MatrixXd anchor,
                     std::size_t state_dim, std::size_t n_actions, double ball_radius);

  std::size_t n_actions() const override { return n_actions_; }
  double evaluate(const State& s, std::size_t action) const override;
  std::unique_ptr<QFunction> clone() const override {
    return std::make_unique<TwoLayerNtkNetwork>(*this);
  }

  /// One pass of projected SGD over the (shuffled) dataset followed by
  /// replacing W with the average iterate.
  FitReport fit(const RegressionDataset& data, const TrainerConfig& trainer) override;
  double gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                       double lr) override;

  Eigen::VectorXd input(const State& s, std::size_t action) const;
  double evaluate_input(const Eigen::VectorXd& x) const;
  /// dQ/dW at x, same shape as W.
  Eigen::MatrixXd gradient(const Eigen::VectorXd& x) const;

  std::size_t width() const { return static_cast<std::size_t>(signs_.size()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t state_dim() const { return state_dim_; }
  double ball_radius() const { return radius_; }
  const Eigen::VectorXd& signs() const { return signs_; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::MatrixXd& anchor() const { return anchor_; }

  /// Replaces W, projecting onto the ball around the anchor.
  void set_weights(Eigen::MatrixXd w);
  double distance_from_anchor() const { return (weights_ - anchor_).norm(); }

 private:
  Eigen::VectorXd signs_;
  Eigen::MatrixXd weights_;  // input_dim x 2m, column j is W_j
  Eigen::MatrixXd anchor_;
  std::size_t state_dim_;
  std::size_t n_actions_;
  double radius_;
};

/// b_j ~ Unif{-1, +1}, W_j ~ N(0, I/d) for j < m; b_{j+m} = -b_j and
/// W_{j+m} = W_j, so the network starts as the zero function.
TwoLayerNtkNetwork symmetric_init(std::size_t m, std::size_t state_dim, std::size_t n_actions,
                                  double ball_radius, Rng& rng);

/// W <- Proj_{|W - W0|_F <= B}(W - eta (Q(x) - y) dQ/dW).
void projected_sgd_step(TwoLayerNtkNetwork& net, const Eigen::VectorXd& x, double target,
                        double eta);

/// Euclidean projection of `w` onto the Frobenius ball of radius B at `center`.
Eigen::MatrixXd project_to_ball(const Eigen::MatrixXd& w, const Eigen::MatrixXd& center,
                                double radius);

Eigen::MatrixXd average_iterates(std::span<const Eigen::MatrixXd> history);

/// Backend selection for the engines.
struct ApproximatorSpec {
  enum class Kind { kTabular, kLinear, kSparseRelu, kTwoLayerNtk };

  Kind kind = Kind::kTabular;
  std::vector<std::size_t> hidden_widths{32, 32};
  std::size_t sparsity_budget = 0;
  double v_max = 0.0;  // <= 0: use r_max / (1 - gamma)
  bool truncate = true;
  std::size_t ntk_half_width = 64;
  double ntk_radius = 10.0;
};

/// Fresh approximator for a model with the given shape. For tabular models
/// `state_dim` is the one-hot length, i.e. n_states.
std::unique_ptr<QFunction> make_approximator(const ApproximatorSpec& spec, std::size_t n_states,
                                             std::size_t state_dim, std::size_t n_actions,
                                             double v_max, Rng& rng);

}  // namespace fqlab
