// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "karn/baselines.hpp"
#include "karn/karn_model.hpp"

#include <string>
#include <variant>

namespace karn {

enum class ModelKind { karn, rnn, gru, lstm };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
CellKind cell_of(ModelKind kind);

/// Any forecaster the training loop can fit.
using ForecastModel = std::variant<KarnNetwork, RecurrentBaseline>;

ModelKind kind_of(const ForecastModel& model);
ParameterSet& parameters(ForecastModel& model);
const ParameterSet& parameters(const ForecastModel& model);
int horizon_of(const ForecastModel& model);
int input_dim_of(const ForecastModel& model);

/// (samples x horizon)
Eigen::MatrixXd predict(const ForecastModel& model, const SequenceBatch& batch);

/// Taped forecast, (horizon x samples).
ad::Var forward(ad::Tape& tape, const ForecastModel& model, const std::vector<ad::Var>& bound,
                const std::vector<Eigen::MatrixXd>& steps);

}  // namespace karn
