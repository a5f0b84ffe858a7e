#include "fqlab/approximators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fqlab {

namespace {

void check_action(std::size_t action, std::size_t n_actions) {
  if (action >= n_actions) throw std::out_of_range("action index out of range");
}

void check_batch(std::span<const StateAction> batch, std::span<const double> targets) {
  if (batch.size() != targets.size()) throw std::invalid_argument("batch and target sizes differ");
  if (batch.empty()) throw std::invalid_argument("empty minibatch");
}

double clamp_output(double v, double v_max, bool truncate) {
  return truncate ? std::clamp(v, -v_max, v_max) : v;
}

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t t = 0;
};

void adam_update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& st, double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (st.m.size() == 0) {
    st.m = Eigen::VectorXd::Zero(grad.size());
    st.v = Eigen::VectorXd::Zero(grad.size());
  }
  ++st.t;
  st.m = kBeta1 * st.m + (1.0 - kBeta1) * grad;
  st.v = kBeta2 * st.v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.t));
  theta.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + kEps);
}

}  // namespace

// Datasets ------------------------------------------------------------------

void RegressionDataset::validate() const {
  if (inputs.empty()) throw std::invalid_argument("regression dataset is empty");
  if (targets.size() != inputs.size())
    throw std::invalid_argument("regression dataset has mismatched input/target counts");
  if (!weights.empty() && weights.size() != inputs.size())
    throw std::invalid_argument("regression dataset has mismatched weight count");
  for (double y : targets)
    if (!std::isfinite(y)) throw std::invalid_argument("regression target is not finite");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("regression weight must be finite and nonnegative");
}

Eigen::VectorXd QFunction::evaluate_all(const State& s) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(n_actions()));
  for (std::size_t a = 0; a < n_actions(); ++a) out(static_cast<Eigen::Index>(a)) = evaluate(s, a);
  return out;
}

double max_over_actions(const QFunction& q, const State& s) { return q.evaluate_all(s).maxCoeff(); }

// Tabular -------------------------------------------------------------------

TabularQ::TabularQ(std::size_t n_states, std::size_t n_actions)
    : table_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_states),
                                   static_cast<Eigen::Index>(n_actions))) {
  if (n_states == 0 || n_actions == 0) throw std::invalid_argument("empty tabular Q");
}

TabularQ::TabularQ(Eigen::MatrixXd table) : table_(std::move(table)) {
  if (table_.size() == 0) throw std::invalid_argument("empty tabular Q");
}

double TabularQ::evaluate(const State& s, std::size_t action) const {
  if (s.index >= static_cast<std::size_t>(table_.rows()))
    throw std::out_of_range("state index out of range");
  check_action(action, n_actions());
  return table_(static_cast<Eigen::Index>(s.index), static_cast<Eigen::Index>(action));
}

Eigen::VectorXd TabularQ::evaluate_all(const State& s) const {
  if (s.index >= static_cast<std::size_t>(table_.rows()))
    throw std::out_of_range("state index out of range");
  return table_.row(static_cast<Eigen::Index>(s.index)).transpose();
}

FitReport TabularQ::fit(const RegressionDataset& data, const TrainerConfig&) {
  data.validate();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(table_.rows(), table_.cols());
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(table_.rows(), table_.cols());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& in = data.inputs[i];
    if (in.state.index >= static_cast<std::size_t>(table_.rows()))
      throw std::out_of_range("state index out of range");
    check_action(in.action, n_actions());
    const auto s = static_cast<Eigen::Index>(in.state.index);
    const auto a = static_cast<Eigen::Index>(in.action);
    sum(s, a) += data.weight(i) * data.targets[i];
    mass(s, a) += data.weight(i);
  }
  for (Eigen::Index s = 0; s < table_.rows(); ++s)
    for (Eigen::Index a = 0; a < table_.cols(); ++a)
      if (mass(s, a) > 0.0) table_(s, a) = sum(s, a) / mass(s, a);

  FitReport report;
  double total = 0.0;
  double err = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = evaluate(data.inputs[i].state, data.inputs[i].action) - data.targets[i];
    err += data.weight(i) * r * r;
    total += data.weight(i);
  }
  report.final_mse = total > 0.0 ? err / total : 0.0;
  report.epochs_run = 1;
  return report;
}

double TabularQ::gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                               double lr) {
  check_batch(batch, targets);
  Eigen::MatrixXd step = Eigen::MatrixXd::Zero(table_.rows(), table_.cols());
  double mse = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double resid = targets[i] - evaluate(batch[i].state, batch[i].action);
    mse += resid * resid;
    step(static_cast<Eigen::Index>(batch[i].state.index), static_cast<Eigen::Index>(batch[i].action)) +=
        resid;
  }
  const double n = static_cast<double>(batch.size());
  table_ += (lr / n) * step;
  return mse / n;
}

// Linear --------------------------------------------------------------------

LinearQ::LinearQ(std::size_t state_dim, std::size_t n_actions)
    : coef_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(state_dim + 1),
                                  static_cast<Eigen::Index>(n_actions))) {
  if (n_actions == 0) throw std::invalid_argument("linear Q needs at least one action");
}

Eigen::VectorXd LinearQ::features(const State& s) const {
  if (s.coords.size() + 1 != coef_.rows()) throw std::invalid_argument("state dimension mismatch");
  Eigen::VectorXd phi(coef_.rows());
  phi(0) = 1.0;
  phi.tail(s.coords.size()) = s.coords;
  return phi;
}

double LinearQ::evaluate(const State& s, std::size_t action) const {
  check_action(action, n_actions());
  return features(s).dot(coef_.col(static_cast<Eigen::Index>(action)));
}

FitReport LinearQ::fit(const RegressionDataset& data, const TrainerConfig& trainer) {
  data.validate();
  const Eigen::Index p = coef_.rows();
  std::vector<Eigen::MatrixXd> gram(n_actions(), Eigen::MatrixXd::Zero(p, p));
  std::vector<Eigen::VectorXd> rhs(n_actions(), Eigen::VectorXd::Zero(p));
  std::vector<double> mass(n_actions(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto a = data.inputs[i].action;
    check_action(a, n_actions());
    const Eigen::VectorXd phi = features(data.inputs[i].state);
    gram[a].noalias() += data.weight(i) * phi * phi.transpose();
    rhs[a] += data.weight(i) * data.targets[i] * phi;
    mass[a] += data.weight(i);
  }
  for (std::size_t a = 0; a < n_actions(); ++a) {
    if (mass[a] <= 0.0) continue;
    gram[a].diagonal().array() += trainer.ridge;
    coef_.col(static_cast<Eigen::Index>(a)) = gram[a].ldlt().solve(rhs[a]);
  }
  FitReport report;
  double err = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = evaluate(data.inputs[i].state, data.inputs[i].action) - data.targets[i];
    err += data.weight(i) * r * r;
    total += data.weight(i);
  }
  report.final_mse = total > 0.0 ? err / total : 0.0;
  report.epochs_run = 1;
  report.diverged = !std::isfinite(report.final_mse);
  return report;
}

double LinearQ::gradient_step(std::span<const StateAction> batch, std::span<const double> targets,
                              double lr) {
  check_batch(batch, targets);
  Eigen::MatrixXd step = Eigen::MatrixXd::Zero(coef_.rows(), coef_.cols());
  double mse = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_action(batch[i].action, n_actions());
    const Eigen::VectorXd phi = features(batch[i].state);
    const double resid = targets[i] - phi.dot(coef_.col(static_cast<Eigen::Index>(batch[i].action)));
    mse += resid * resid;
    step.col(static_cast<Eigen::Index>(batch[i].action)) += resid * phi;
  }
  const double n = static_cast<double>(batch.size());
  coef_ += (lr / n) * step;
  return mse / n;
}

// ReLU MLP ------------------------------------------------------------------

ReluMlp::ReluMlp(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.empty() || widths.front() == 0)
    throw std::invalid_argument("ReLU network needs a positive input width");
  std::vector<std::size_t> dims = widths;
  dims.push_back(1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l + 1] == 0) throw std::invalid_argument("ReLU network layer width must be positive");
    DenseLayer layer;
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    const auto in = static_cast<Eigen::Index>(dims[l]);
    // He-uniform, then clipped into the unit box.
    const double bound = std::min(1.0, std::sqrt(6.0 / static_cast<double>(in)));
    layer.weight.resize(out, in);
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index j = 0; j < in; ++j) layer.weight(i, j) = bound * (2.0 * uniform01(rng) - 1.0);
    layer.bias = Eigen::VectorXd::Zero(out);
    layers_.push_back(std::move(layer));
  }
}

std::size_t ReluMlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t ReluMlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

double ReluMlp::forward(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim())
    throw std::invalid_argument("ReLU network input dimension mismatch");
  Eigen::VectorXd h = x;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l)
    h = (layers_[l].weight * h + layers_[l].bias).cwiseMax(0.0);
  return (layers_.back().weight * h + layers_.back().bias)(0);
}

Eigen::VectorXd ReluMlp::flat_parameters() const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index off = 0;
  for (const auto& l : layers_) {
    Eigen::Map<RowMatrix>(theta.data() + off, l.weight.rows(), l.weight.cols()) = l.weight;
    off += l.weight.size();
    theta.segment(off, l.bias.size()) = l.bias;
    off += l.bias.size();
  }
  return theta;
}

void ReluMlp::set_flat_parameters(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count())
    throw std::invalid_argument("parameter vector has the wrong length");
  Eigen::Index off = 0;
  for (auto& l : layers_) {
    l.weight = Eigen::Map<const RowMatrix>(theta.data() + off, l.weight.rows(), l.weight.cols());
    off += l.weight.size();
    l.bias = theta.segment(off, l.bias.size());
    off += l.bias.size();
  }
}

double ReluMlp::loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& w, Eigen::VectorXd& grad) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim() || x.cols() != y.size() ||
      y.size() != w.size())
    throw std::invalid_argument("ReLU network batch shape mismatch");
  const double wsum = w.sum();
  grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count()));
  if (!(wsum > 0.0)) return 0.0;

  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(layers_.size());
  acts.push_back(x);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * acts.back();
    z.colwise() += layers_[l].bias;
    acts.push_back(z.cwiseMax(0.0));
  }
  Eigen::RowVectorXd out = layers_.back().weight * acts.back();
  out.array() += layers_.back().bias(0);
  const Eigen::RowVectorXd resid = out - y.transpose();
  const double loss = 0.5 * (resid.array().square() * w.transpose().array()).sum() / wsum;

  std::vector<Eigen::Index> offsets(layers_.size());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = off;
    off += layers_[l].weight.size() + layers_[l].bias.size();
  }

  Eigen::MatrixXd delta = (resid.array() * w.transpose().array() / wsum).matrix();
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    Eigen::Map<RowMatrix>(grad.data() + offsets[l], layer.weight.rows(), layer.weight.cols()) =
        delta * acts[l].transpose();
    grad.segment(offsets[l] + layer.weight.size(), layer.bias.size()) = delta.rowwise().sum();
    if (l > 0) {
      // acts[l] = relu(z_{l-1}); its positive pattern is the ReLU derivative.
      delta = (layer.weight.transpose() * delta).cwiseProduct(
          (acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

// Sparse ReLU network -------------------------------------------------------

SparseReluNetwork::SparseReluNetwork(std::size_t input_dim,
                                     const std::vector<std::size_t>& hidden_widths,
                                     std::size_t n_actions, std::size_t sparsity_budget,
                                     double v_max, Rng& rng, bool truncate)
    : sparsity_budget_(sparsity_budget), v_max_(v_max), truncate_(truncate) {
  if (n_actions == 0) throw std::invalid_argument("network needs at least one action");
  if (truncate_ && !(v_max_ > 0.0)) throw std::invalid_argument("v_max must be positive");
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
  for (std::size_t a = 0; a < n_actions; ++a) heads_.emplace_back(widths, rng);
  enforce_constraints(*this);
}

double SparseReluNetwork::raw_output(const State& s, std::size_t action) const {
  check_action(action, n_actions());
  return heads_[action].forward(s.coords);
}

double SparseReluNetwork::evaluate(const State& s, std::size_t action) const {
  return clamp_output(raw_output(s, action), v_max_, truncate_);
}

FitReport SparseReluNetwork::fit(const RegressionDataset& data, const TrainerConfig& trainer) {
  data.validate();
  const std::size_t n_heads = heads_.size();
  const auto d = static_cast<Eigen::Index>(heads_.front().input_dim());

  // Per-head design matrices with the dataset's indices kept for minibatching.
  std::vector<std::vector<std::size_t>> members(n_heads);
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_action(data.inputs[i].action, n_heads);
    if (data.inputs[i].state.coords.size() != d)
      throw std::invalid_argument("state dimension mismatch");
    members[data.inputs[i].action].push_back(i);
  }

  Rng rng(trainer.seed);
  std::vector<AdamState> adam(n_heads);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = trainer.batch_size == 0 ? data.size() : std::min(trainer.batch_size, data.size());

  auto step_on = [&](std::span<const std::size_t> idx) {
    std::vector<std::vector<std::size_t>> split(n_heads);
    for (std::size_t i : idx) split[data.inputs[i].action].push_back(i);
    bool finite = true;
    for (std::size_t h = 0; h < n_heads; ++h) {
      if (split[h].empty()) continue;
      const auto n = static_cast<Eigen::Index>(split[h].size());
      Eigen::MatrixXd x(d, n);
      Eigen::VectorXd y(n);
      Eigen::VectorXd w(n);
      for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = split[h][static_cast<std::size_t>(k)];
        x.col(k) = data.inputs[i].state.coords;
        y(k) = data.targets[i];
        w(k) = data.weight(i);
      }
      Eigen::VectorXd grad;
      const double loss = heads_[h].loss_and_gradient(x, y, w, grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        finite = false;
        continue;
      }
      Eigen::VectorXd theta = heads_[h].flat_parameters();
      if (trainer.optimizer == TrainerConfig::Optimizer::kAdam)
        adam_update(theta, grad, adam[h], trainer.learning_rate);
      else
        theta -= trainer.learning_rate * grad;
      heads_[h].set_flat_parameters(theta);
    }
    return finite;
  };

  FitReport report;
  for (std::size_t epoch = 0; epoch < trainer.epochs; ++epoch) {
    bool finite = true;
    if (batch == data.size()) {
      finite = step_on(order);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t len = std::min(batch, order.size() - start);
        finite = step_on(std::span<const std::size_t>(order).subspan(start, len)) && finite;
      }
    }
    const ConstraintReport c = enforce_constraints(*this);
    report.clipped += c.clipped;
    report.pruned += c.pruned;
    report.epochs_run = epoch + 1;
    if (!finite) {
      report.diverged = true;
      break;
    }
  }

  double err = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = evaluate(data.inputs[i].state, data.inputs[i].action) - data.targets[i];
    err += data.weight(i) * r * r;
    total += data.weight(i);
  }
  report.final_mse = total > 0.0 ? err / total : 0.0;
  if (!std::isfinite(report.final_mse)) report.diverged = true;
  return report;
}

double SparseReluNetwork::gradient_step(std::span<const StateAction> batch,
                                        std::span<const double> targets, double lr) {
  check_batch(batch, targets);
  const std::size_t n_heads = heads_.size();
  const auto d = static_cast<Eigen::Index>(heads_.front().input_dim());
  std::vector<std::vector<std::size_t>> split(n_heads);
  double mse = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_action(batch[i].action, n_heads);
    split[batch[i].action].push_back(i);
    const double r = targets[i] - raw_output(batch[i].state, batch[i].action);
    mse += r * r;
  }
  const double n_total = static_cast<double>(batch.size());
  for (std::size_t h = 0; h < n_heads; ++h) {
    if (split[h].empty()) continue;
    const auto n = static_cast<Eigen::Index>(split[h].size());
    Eigen::MatrixXd x(d, n);
    Eigen::VectorXd y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      x.col(k) = batch[split[h][static_cast<std::size_t>(k)]].state.coords;
      y(k) = targets[split[h][static_cast<std::size_t>(k)]];
    }
    Eigen::VectorXd grad;
    heads_[h].loss_and_gradient(x, y, Eigen::VectorXd::Ones(n), grad);
    // Head gradient is a per-head mean; rescale to the minibatch mean.
    heads_[h].set_flat_parameters(heads_[h].flat_parameters() -
                                  lr * (static_cast<double>(n) / n_total) * grad);
  }
  enforce_constraints(*this);
  return mse / n_total;
}

ConstraintReport enforce_constraints(ReluMlp& head, std::size_t budget) {
  ConstraintReport report;
  Eigen::VectorXd theta = head.flat_parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (std::abs(theta(i)) > 1.0) {
      theta(i) = std::clamp(theta(i), -1.0, 1.0);
      ++report.clipped;
    }
  }
  if (budget > 0) {
    std::vector<Eigen::Index> nonzero;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      if (theta(i) != 0.0) nonzero.push_back(i);
    if (nonzero.size() > budget) {
      std::stable_sort(nonzero.begin(), nonzero.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(theta(a)) < std::abs(theta(b));
      });
      const std::size_t drop = nonzero.size() - budget;
      for (std::size_t k = 0; k < drop; ++k) theta(nonzero[k]) = 0.0;
      report.pruned = drop;
    }
  }
  if (report.clipped > 0 || report.pruned > 0) head.set_flat_parameters(theta);
  return report;
}

ConstraintReport enforce_constraints(SparseReluNetwork& net) {
  ConstraintReport total;
  for (auto& head : net.heads()) {
    const ConstraintReport r = enforce_constraints(head, net.sparsity_budget());
    total.clipped += r.clipped;
    total.pruned += r.pruned;
  }
  return total;
}

// Two-layer NTK network -----------------------------------------------------

TwoLayerNtkNetwork::TwoLayerNtkNetwork(Eigen::VectorXd signs, Eigen::MatrixXd weights,
                                       Eigen::MatrixXd anchor, std::size_t state_dim,
                                       std::size_t n_actions, double ball_radius)
    : signs_(std::move(signs)),
      weights_(std::move(weights)),
      anchor_(std::move(anchor)),
      state_dim_(state_dim),
      n_actions_(n_actions),
      radius_(ball_radius) {
  if (signs_.size() == 0 || signs_.size() % 2 != 0)
    throw std::invalid_argument("two-layer network needs an even, positive width");
  if (weights_.cols() != signs_.size() || anchor_.rows() != weights_.rows() ||
      anchor_.cols() != weights_.cols())
    throw std::invalid_argument("two-layer network parameter shapes disagree");
  if (static_cast<std::size_t>(weights_.rows()) != state_dim_ + n_actions_)
    throw std::invalid_argument("two-layer network input dimension must be state_dim + n_actions");
  if (!(radius_ > 0.0)) throw std::invalid_argument("ball radius must be positive");
}

Eigen::VectorXd TwoLayerNtkNetwork::input(const State& s, std::size_t action) const {
  check_action(action, n_actions_);
  if (static_cast<std::size_t>(s.coords.size()) != state_dim_)
    throw std::invalid_argument("state dimension mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(weights_.rows());
  x.head(s.coords.size()) = s.coords;
  x(static_cast<Eigen::Index>(state_dim_ + action)) = 1.0;
  return x / std::sqrt(static_cast<double>(state_dim_ + 1));
}

double TwoLayerNtkNetwork::evaluate_input(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = weights_.transpose() * x;
  const Eigen::Index m = signs_.size() / 2;
  // Summed as mirrored pairs so the symmetric initialization is exactly zero.
  double acc = 0.0;
  for (Eigen::Index j = 0; j < m; ++j)
    acc += signs_(j) * std::max(u(j), 0.0) + signs_(j + m) * std::max(u(j + m), 0.0);
  return acc / std::sqrt(static_cast<double>(signs_.size()));
}

double TwoLayerNtkNetwork::evaluate(const State& s, std::size_t action) const {
  return evaluate_input(input(s, action));
}

Eigen::MatrixXd TwoLayerNtkNetwork::gradient(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = weights_.transpose() * x;
  const double scale = 1.0 / std::sqrt(static_cast<double>(signs_.size()));
  Eigen::RowVectorXd coef(signs_.size());
  for (Eigen::Index j = 0; j < signs_.size(); ++j) coef(j) = u(j) > 0.0 ? scale * signs_(j) : 0.0;
  return x * coef;
}

void TwoLayerNtkNetwork::set_weights(Eigen::MatrixXd w) {
  if (w.rows() != weights_.rows() || w.cols() != weights_.cols())
    throw std::invalid_argument("weight matrix shape mismatch");
  weights_ = project_to_ball(w, anchor_, radius_);
}

FitReport TwoLayerNtkNetwork::fit(const RegressionDataset& data, const TrainerConfig& trainer) {
  data.validate();
  Rng rng(trainer.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(weights_.rows(), weights_.cols());
  FitReport report;
  for (std::size_t i : order) {
    if (data.weight(i) > 0.0) {
      const Eigen::VectorXd x = input(data.inputs[i].state, data.inputs[i].action);
      projected_sgd_step(*this, x, data.targets[i], trainer.learning_rate * data.weight(i));
    }
    sum += weights_;
  }
  weights_ = project_to_ball(sum / static_cast<double>(data.size()), anchor_, radius_);
  double err = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = evaluate(data.inputs[i].state, data.inputs[i].action) - data.targets[i];
    err += data.weight(i) * r * r;
    total += data.weight(i);
  }
  report.final_mse = total > 0.0 ? err / total : 0.0;
  report.epochs_run = 1;
  report.diverged = !std::isfinite(report.final_mse);
  return report;
}

double TwoLayerNtkNetwork::gradient_step(std::span<const StateAction> batch,
                                         std::span<const double> targets, double lr) {
  check_batch(batch, targets);
  Eigen::MatrixXd step = Eigen::MatrixXd::Zero(weights_.rows(), weights_.cols());
  double mse = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd x = input(batch[i].state, batch[i].action);
    const double resid = targets[i] - evaluate_input(x);
    mse += resid * resid;
    step += resid * gradient(x);
  }
  const double n = static_cast<double>(batch.size());
  set_weights(weights_ + (lr / n) * step);
  return mse / n;
}

TwoLayerNtkNetwork symmetric_init(std::size_t m, std::size_t state_dim, std::size_t n_actions,
                                  double ball_radius, Rng& rng) {
  if (m == 0) throw std::invalid_argument("symmetric_init: m must be positive");
  const auto d = static_cast<Eigen::Index>(state_dim + n_actions);
  const auto half = static_cast<Eigen::Index>(m);
  Eigen::VectorXd signs(2 * half);
  Eigen::MatrixXd w(d, 2 * half);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (Eigen::Index j = 0; j < half; ++j) {
    signs(j) = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    for (Eigen::Index i = 0; i < d; ++i) w(i, j) = normal(rng);
    signs(j + half) = -signs(j);
    w.col(j + half) = w.col(j);
  }
  return TwoLayerNtkNetwork(std::move(signs), w, w, state_dim, n_actions, ball_radius);
}

Eigen::MatrixXd project_to_ball(const Eigen::MatrixXd& w, const Eigen::MatrixXd& center,
                                double radius) {
  const Eigen::MatrixXd diff = w - center;
  const double norm = diff.norm();
  if (norm <= radius) return w;
  return center + diff * (radius / norm);
}

void projected_sgd_step(TwoLayerNtkNetwork& net, const Eigen::VectorXd& x, double target,
                        double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("projected_sgd_step: eta must be positive");
  const double resid = net.evaluate_input(x) - target;
  const Eigen::MatrixXd grad = resid * net.gradient(x);
  if (!grad.allFinite()) throw std::runtime_error("projected_sgd_step: non-finite gradient");
  if (resid == 0.0) return;
  net.set_weights(net.weights() - eta * grad);
}

Eigen::MatrixXd average_iterates(std::span<const Eigen::MatrixXd> history) {
  if (history.empty()) throw std::invalid_argument("average_iterates: empty history");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(history.front().rows(), history.front().cols());
  for (const auto& w : history) {
    if (w.rows() != sum.rows() || w.cols() != sum.cols())
      throw std::invalid_argument("average_iterates: shape mismatch");
    sum += w;
  }
  return sum / static_cast<double>(history.size());
}

// Factory -------------------------------------------------------------------

std::unique_ptr<QFunction> make_approximator(const ApproximatorSpec& spec, std::size_t n_states,
                                             std::size_t state_dim, std::size_t n_actions,
                                             double v_max, Rng& rng) {
  const double cap = spec.v_max > 0.0 ? spec.v_max : v_max;
  switch (spec.kind) {
    case ApproximatorSpec::Kind::kTabular:
      if (n_states == 0) throw std::invalid_argument("tabular approximator needs a finite state set");
      return std::make_unique<TabularQ>(n_states, n_actions);
    case ApproximatorSpec::Kind::kLinear:
      return std::make_unique<LinearQ>(state_dim, n_actions);
    case ApproximatorSpec::Kind::kSparseRelu:
      return std::make_unique<SparseReluNetwork>(state_dim, spec.hidden_widths, n_actions,
                                                 spec.sparsity_budget, cap, rng, spec.truncate);
    case ApproximatorSpec::Kind::kTwoLayerNtk:
      return std::make_unique<TwoLayerNtkNetwork>(
          symmetric_init(spec.ntk_half_width, state_dim, n_actions, spec.ntk_radius, rng));
  }
  throw std::invalid_argument("unknown approximator kind");
}

}  // namespace fqlab
