#pragma once

#include <json.hpp>

#include <memory>
#include <string>
#include <variant>

#include "fqlab/approximators.hpp"
#include "fqlab/diagnostics.hpp"
#include "fqlab/dqn.hpp"
#include "fqlab/envs.hpp"
#include "fqlab/exact_solver.hpp"

namespace fqlab::io {

using Json = nlohmann::json;

using Model = std::variant<TabularMDP, TabularMarkovGame, ContinuousMDP>;

// Explicit model documents:
//   tabular_mdp:    transition[s][a][s'], reward_mean[s][a]
//   markov_game:    transition[s][a][b][s'], reward_mean[s][a][b]
//   continuous_mdp: drift[a][i], bumps[a][j] = {center, width, amplitude}
Json model_to_json(const TabularMDP& mdp);
Json model_to_json(const TabularMarkovGame& game);
Json model_to_json(const ContinuousMDP& mdp);
Json model_to_json(const Model& model);
Model model_from_json(const Json& doc);

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& doc);

Json qtable_to_json(const QTable& q);
Json qtable_to_json(const GameQTable& q);
QTable qtable_from_json(const Json& doc);
GameQTable game_qtable_from_json(const Json& doc);

Json policy_to_json(const TabularPolicy& pi);
TabularPolicy policy_from_json(const Json& doc);

/// Checkpoints reproduce every parameter bit for bit.
Json checkpoint(const QFunction& q);
std::unique_ptr<QFunction> restore(const Json& doc);

Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// %.17g, as written into CSV cells.
std::string format_double(double v);

inline constexpr const char* kFqiCsvHeader = "k,empirical_mse,one_step_error_sigma,suboptimality_1mu,wall_ms";
inline constexpr const char* kDqnCsvHeader = "t,loss,epsilon,synced,eval_value";

std::string fqi_trace_csv(const DiagnosticsTrace& trace);
std::string dqn_trace_csv(const std::vector<DqnStepRecord>& trace);

}  // namespace fqlab::io
