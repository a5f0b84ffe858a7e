#include "fqlab/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fqlab::io {

namespace {

std::size_t dim(const Json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_number_unsigned())
    throw std::invalid_argument(std::string("model field '") + key + "' must be a nonnegative integer");
  return doc.at(key).get<std::size_t>();
}

double number(const Json& doc, const char* key, double fallback) {
  if (!doc.contains(key)) return fallback;
  if (!doc.at(key).is_number()) throw std::invalid_argument(std::string("field '") + key + "' must be a number");
  return doc.at(key).get<double>();
}

const Json& array_of(const Json& doc, std::size_t n, const std::string& what) {
  if (!doc.is_array() || doc.size() != n)
    throw std::invalid_argument(what + " must be an array of length " + std::to_string(n));
  return doc;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const Json& doc) {
  if (!doc.is_array()) throw std::invalid_argument("expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(doc.size()));
  for (std::size_t i = 0; i < doc.size(); ++i) v(static_cast<Eigen::Index>(i)) = doc[i].get<double>();
  return v;
}

}  // namespace

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Eigen::MatrixXd matrix_from_json(const Json& doc) {
  if (!doc.is_array() || doc.empty() || !doc[0].is_array() || doc[0].empty())
    throw std::invalid_argument("expected a nonempty array of nonempty rows");
  const std::size_t cols = doc[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(doc.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < doc.size(); ++r) {
    if (!doc[r].is_array() || doc[r].size() != cols) throw std::invalid_argument("ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!doc[r][c].is_number()) throw std::invalid_argument("matrix entries must be numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = doc[r][c].get<double>();
    }
  }
  return m;
}

Json model_to_json(const TabularMDP& mdp) {
  Json transition = Json::array();
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    Json per_action = Json::array();
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const auto row = mdp.row(s, a);
      per_action.push_back(Json(std::vector<double>(row.begin(), row.end())));
    }
    transition.push_back(std::move(per_action));
  }
  return Json{{"kind", "tabular_mdp"},
              {"n_states", mdp.n_states()},
              {"n_actions", mdp.n_actions()},
              {"gamma", mdp.gamma()},
              {"r_max", mdp.r_max()},
              {"noise", mdp.noise()},
              {"transition", std::move(transition)},
              {"reward_mean", matrix_to_json(mdp.reward_mean())}};
}

Json model_to_json(const TabularMarkovGame& game) {
  Json transition = Json::array();
  Json reward = Json::array();
  for (std::size_t s = 0; s < game.n_states(); ++s) {
    Json per_a = Json::array();
    for (std::size_t a = 0; a < game.n_actions_p1(); ++a) {
      Json per_b = Json::array();
      for (std::size_t b = 0; b < game.n_actions_p2(); ++b) {
        const auto row = game.row(s, a, b);
        per_b.push_back(Json(std::vector<double>(row.begin(), row.end())));
      }
      per_a.push_back(std::move(per_b));
    }
    transition.push_back(std::move(per_a));
    reward.push_back(matrix_to_json(game.reward_mean()[s]));
  }
  return Json{{"kind", "markov_game"},
              {"n_states", game.n_states()},
              {"n_actions", game.n_actions_p1()},
              {"n_actions2", game.n_actions_p2()},
              {"gamma", game.gamma()},
              {"r_max", game.r_max()},
              {"noise", game.noise()},
              {"transition", std::move(transition)},
              {"reward_mean", std::move(reward)}};
}

Json model_to_json(const ContinuousMDP& mdp) {
  Json drift = Json::array();
  for (const auto& d : mdp.drift()) drift.push_back(vector_to_json(d));
  Json bumps = Json::array();
  for (const auto& per_action : mdp.reward_bumps()) {
    Json list = Json::array();
    for (const auto& b : per_action)
      list.push_back(Json{{"center", vector_to_json(b.center)}, {"width", b.width}, {"amplitude", b.amplitude}});
    bumps.push_back(std::move(list));
  }
  return Json{{"kind", "continuous_mdp"},
              {"state_dim", mdp.state_dim()},
              {"n_actions", mdp.n_actions()},
              {"gamma", mdp.gamma()},
              {"r_max", mdp.r_max()},
              {"noise_std", mdp.noise_std()},
              {"drift", std::move(drift)},
              {"bumps", std::move(bumps)}};
}

Json model_to_json(const Model& model) {
  return std::visit([](const auto& m) { return model_to_json(m); }, model);
}

Model model_from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("kind") || !doc.at("kind").is_string())
    throw std::invalid_argument("model document needs a string 'kind'");
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "tabular_mdp") {
    const std::size_t S = dim(doc, "n_states");
    const std::size_t A = dim(doc, "n_actions");
    RowMatrix p(static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S));
    const Json& t = array_of(doc.at("transition"), S, "transition");
    for (std::size_t s = 0; s < S; ++s) {
      const Json& per_a = array_of(t[s], A, "transition[" + std::to_string(s) + "]");
      for (std::size_t a = 0; a < A; ++a) {
        const Json& row = array_of(per_a[a], S, "transition row");
        for (std::size_t n = 0; n < S; ++n)
          p(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(n)) = row[n].get<double>();
      }
    }
    const Eigen::MatrixXd r = matrix_from_json(doc.at("reward_mean"));
    if (static_cast<std::size_t>(r.rows()) != S || static_cast<std::size_t>(r.cols()) != A)
      throw std::invalid_argument("reward_mean must be n_states x n_actions");
    return TabularMDP(std::move(p), r, number(doc, "gamma", 0.0), number(doc, "r_max", 0.0),
                      number(doc, "noise", 0.0));
  }
  if (kind == "markov_game") {
    const std::size_t S = dim(doc, "n_states");
    const std::size_t A = dim(doc, "n_actions");
    const std::size_t B = dim(doc, "n_actions2");
    RowMatrix p(static_cast<Eigen::Index>(S * A * B), static_cast<Eigen::Index>(S));
    std::vector<Eigen::MatrixXd> reward;
    const Json& t = array_of(doc.at("transition"), S, "transition");
    const Json& rw = array_of(doc.at("reward_mean"), S, "reward_mean");
    for (std::size_t s = 0; s < S; ++s) {
      const Json& per_a = array_of(t[s], A, "transition[" + std::to_string(s) + "]");
      for (std::size_t a = 0; a < A; ++a) {
        const Json& per_b = array_of(per_a[a], B, "transition[s][a]");
        for (std::size_t b = 0; b < B; ++b) {
          const Json& row = array_of(per_b[b], S, "transition row");
          for (std::size_t n = 0; n < S; ++n)
            p(static_cast<Eigen::Index>((s * A + a) * B + b), static_cast<Eigen::Index>(n)) = row[n].get<double>();
        }
      }
      reward.push_back(matrix_from_json(rw[s]));
      if (static_cast<std::size_t>(reward.back().rows()) != A ||
          static_cast<std::size_t>(reward.back().cols()) != B)
        throw std::invalid_argument("reward_mean[s] must be n_actions x n_actions2");
    }
    return TabularMarkovGame(std::move(p), std::move(reward), number(doc, "gamma", 0.0),
                             number(doc, "r_max", 0.0), number(doc, "noise", 0.0));
  }
  if (kind == "continuous_mdp") {
    const std::size_t dim_r = dim(doc, "state_dim");
    const std::size_t A = dim(doc, "n_actions");
    std::vector<Eigen::VectorXd> drift;
    for (const auto& d : array_of(doc.at("drift"), A, "drift")) drift.push_back(vector_from_json(d));
    std::vector<std::vector<Bump>> bumps;
    for (const auto& list : array_of(doc.at("bumps"), A, "bumps")) {
      std::vector<Bump> per_action;
      for (const auto& b : list)
        per_action.push_back(Bump{vector_from_json(b.at("center")), b.at("width").get<double>(),
                                  b.at("amplitude").get<double>()});
      bumps.push_back(std::move(per_action));
    }
    return ContinuousMDP(dim_r, std::move(bumps), std::move(drift), number(doc, "noise_std", 0.0),
                         number(doc, "gamma", 0.0), number(doc, "r_max", 0.0));
  }
  throw std::invalid_argument("unknown model kind '" + kind + "'");
}

Json qtable_to_json(const QTable& q) { return matrix_to_json(q); }

Json qtable_to_json(const GameQTable& q) {
  Json out = Json::array();
  for (const auto& m : q) out.push_back(matrix_to_json(m));
  return out;
}

QTable qtable_from_json(const Json& doc) { return matrix_from_json(doc); }

GameQTable game_qtable_from_json(const Json& doc) {
  if (!doc.is_array()) throw std::invalid_argument("expected an array of per-state matrices");
  GameQTable out;
  for (const auto& m : doc) out.push_back(matrix_from_json(m));
  return out;
}

Json policy_to_json(const TabularPolicy& pi) { return matrix_to_json(pi.probs); }

TabularPolicy policy_from_json(const Json& doc) {
  TabularPolicy pi{matrix_from_json(doc)};
  pi.validate();
  return pi;
}

Json checkpoint(const QFunction& q) {
  if (const auto* t = dynamic_cast<const TabularQ*>(&q))
    return Json{{"kind", "tabular"}, {"table", matrix_to_json(t->table())}};
  if (const auto* l = dynamic_cast<const LinearQ*>(&q))
    return Json{{"kind", "linear"}, {"coefficients", matrix_to_json(l->coefficients())}};
  if (const auto* n = dynamic_cast<const SparseReluNetwork*>(&q)) {
    Json heads = Json::array();
    for (const auto& h : n->heads()) {
      Json layers = Json::array();
      for (const auto& layer : h.layers())
        layers.push_back(Json{{"weight", matrix_to_json(layer.weight)}, {"bias", vector_to_json(layer.bias)}});
      heads.push_back(std::move(layers));
    }
    return Json{{"kind", "sparse_relu"},
                {"sparsity_budget", n->sparsity_budget()},
                {"v_max", n->v_max()},
                {"truncate", n->truncates()},
                {"heads", std::move(heads)}};
  }
  if (const auto* w = dynamic_cast<const TwoLayerNtkNetwork*>(&q))
    return Json{{"kind", "two_layer_ntk"},
                {"state_dim", w->state_dim()},
                {"n_actions", w->n_actions()},
                {"ball_radius", w->ball_radius()},
                {"signs", vector_to_json(w->signs())},
                {"weights", matrix_to_json(w->weights())},
                {"anchor", matrix_to_json(w->anchor())}};
  throw std::invalid_argument("unsupported approximator for checkpointing");
}

std::unique_ptr<QFunction> restore(const Json& doc) {
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "tabular") return std::make_unique<TabularQ>(matrix_from_json(doc.at("table")));
  if (kind == "linear") {
    const Eigen::MatrixXd coef = matrix_from_json(doc.at("coefficients"));
    auto out = std::make_unique<LinearQ>(static_cast<std::size_t>(coef.rows()) - 1,
                                         static_cast<std::size_t>(coef.cols()));
    out->coefficients() = coef;
    return out;
  }
  if (kind == "sparse_relu") {
    const Json& heads = doc.at("heads");
    if (!heads.is_array() || heads.empty()) throw std::invalid_argument("checkpoint has no heads");
    std::vector<std::size_t> hidden;
    const Json& first = heads[0];
    for (std::size_t l = 0; l + 1 < first.size(); ++l)
      hidden.push_back(matrix_from_json(first[l].at("weight")).rows());
    const auto input_dim = static_cast<std::size_t>(matrix_from_json(first[0].at("weight")).cols());
    Rng scratch(0);
    auto out = std::make_unique<SparseReluNetwork>(input_dim, hidden, heads.size(),
                                                   doc.at("sparsity_budget").get<std::size_t>(),
                                                   doc.at("v_max").get<double>(), scratch,
                                                   doc.at("truncate").get<bool>());
    for (std::size_t a = 0; a < heads.size(); ++a) {
      auto& layers = out->heads()[a].layers();
      if (heads[a].size() != layers.size()) throw std::invalid_argument("heads disagree in depth");
      for (std::size_t l = 0; l < layers.size(); ++l) {
        Eigen::MatrixXd w = matrix_from_json(heads[a][l].at("weight"));
        Eigen::VectorXd b = vector_from_json(heads[a][l].at("bias"));
        if (w.rows() != layers[l].weight.rows() || w.cols() != layers[l].weight.cols() ||
            b.size() != layers[l].bias.size())
          throw std::invalid_argument("checkpoint layer shapes disagree");
        layers[l].weight = std::move(w);
        layers[l].bias = std::move(b);
      }
    }
    return out;
  }
  if (kind == "two_layer_ntk")
    return std::make_unique<TwoLayerNtkNetwork>(
        vector_from_json(doc.at("signs")), matrix_from_json(doc.at("weights")),
        matrix_from_json(doc.at("anchor")), doc.at("state_dim").get<std::size_t>(),
        doc.at("n_actions").get<std::size_t>(), doc.at("ball_radius").get<double>());
  throw std::invalid_argument("unknown checkpoint kind '" + kind + "'");
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fqi_trace_csv(const DiagnosticsTrace& trace) {
  std::ostringstream out;
  out << kFqiCsvHeader << '\n';
  for (const auto& r : trace.records) {
    out << r.k << ',' << format_double(r.empirical_mse) << ','
        << (r.one_step_error ? format_double(*r.one_step_error) : "") << ','
        << (r.suboptimality ? format_double(*r.suboptimality) : "") << ','
        << format_double(r.wall_ms) << '\n';
  }
  return out.str();
}

std::string dqn_trace_csv(const std::vector<DqnStepRecord>& trace) {
  std::ostringstream out;
  out << kDqnCsvHeader << '\n';
  for (const auto& r : trace) {
    out << r.t << ',' << format_double(r.loss) << ',' << format_double(r.epsilon) << ','
        << (r.synced ? 1 : 0) << ',' << (r.eval_value ? format_double(*r.eval_value) : "") << '\n';
  }
  return out.str();
}

}  // namespace fqlab::io
