// SPDX-License-Identifier: Apache-2.0
#include "karn/model.hpp"

#include <stdexcept>

namespace karn {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::karn: return "karn";
    case ModelKind::rnn: return "rnn";
    case ModelKind::gru: return "gru";
    case ModelKind::lstm: return "lstm";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "karn") return ModelKind::karn;
  if (name == "rnn" || name == "vanilla") return ModelKind::rnn;
  if (name == "gru") return ModelKind::gru;
  if (name == "lstm") return ModelKind::lstm;
  throw std::invalid_argument("unknown model family '" + name + "' (expected karn, rnn, gru or lstm)");
}

CellKind cell_of(ModelKind kind) {
  switch (kind) {
    case ModelKind::rnn: return CellKind::vanilla;
    case ModelKind::gru: return CellKind::gru;
    case ModelKind::lstm: return CellKind::lstm;
    case ModelKind::karn: break;
  }
  throw std::invalid_argument("KARN is not a baseline cell");
}

ModelKind kind_of(const ForecastModel& model) {
  if (std::holds_alternative<KarnNetwork>(model)) return ModelKind::karn;
  switch (std::get<RecurrentBaseline>(model).cell()) {
    case CellKind::vanilla: return ModelKind::rnn;
    case CellKind::gru: return ModelKind::gru;
    case CellKind::lstm: return ModelKind::lstm;
  }
  return ModelKind::rnn;
}

ParameterSet& parameters(ForecastModel& model) {
  return std::visit([](auto& m) -> ParameterSet& { return m.parameters(); }, model);
}

const ParameterSet& parameters(const ForecastModel& model) {
  return std::visit([](const auto& m) -> const ParameterSet& { return m.parameters(); }, model);
}

int horizon_of(const ForecastModel& model) {
  return std::visit([](const auto& m) { return m.horizon(); }, model);
}

int input_dim_of(const ForecastModel& model) {
  return std::visit([](const auto& m) { return m.input_dim(); }, model);
}

Eigen::MatrixXd predict(const ForecastModel& model, const SequenceBatch& batch) {
  if (const auto* k = std::get_if<KarnNetwork>(&model)) return forward(*k, batch);
  return baseline_forward(std::get<RecurrentBaseline>(model), batch);
}

ad::Var forward(ad::Tape& tape, const ForecastModel& model, const std::vector<ad::Var>& bound,
                const std::vector<Eigen::MatrixXd>& steps) {
  if (const auto* k = std::get_if<KarnNetwork>(&model)) return forward(tape, *k, bound, steps);
  return baseline_forward(tape, std::get<RecurrentBaseline>(model), bound, steps);
}

}  // namespace karn
