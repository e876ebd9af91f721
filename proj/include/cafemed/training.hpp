/*
 * Copyright 2026 The CafeMed Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cafemed/data/ehr.hpp"
#include "cafemed/eval.hpp"
#include "cafemed/model.hpp"
#include "cafemed/numerics/tensor.hpp"

// Objective and training loop.
namespace cafemed::training {

struct TrainConfig {
  double lr = 5e-4;
  double beta_ddi = 0.0005;
  double weight_decay = 0.005;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  double ddi_target = 0.06;
  std::string precision = "float32";  // or "float64"

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Mean logistic loss over all labels.
template <typename T>
nn::Tensor<T> bce_loss(const nn::Tensor<T>& logits, std::span<const T> targets);

// Dense constant adjacency [M, M] with both (i, j) and (j, i) set.
template <typename T>
nn::Tensor<T> ddi_adjacency(const data::DdiMatrix& ddi);

// Sum over rows of (1/M^2) * sum_ij A_ij sig(s_i) sig(s_j) for logits [R, M].
template <typename T>
nn::Tensor<T> ddi_loss(const nn::Tensor<T>& logits, const nn::Tensor<T>& adjacency);

// bce_loss + beta * ddi_loss for one visit.
template <typename T>
nn::Tensor<T> visit_loss(const nn::Tensor<T>& logits, std::span<const T> targets,
                         const nn::Tensor<T>& adjacency, double beta);

// Row-major multi-hot labels [T, M] for the medications of each visit.
template <typename T>
std::vector<T> multi_hot(std::span<const data::Visit> visits, std::size_t n_med);

struct LossCounters {
  std::size_t ddi_evaluations = 0;
};

// Sum of visit losses over a patient's visits for logits [T, M]. The
// adjacency is not touched when beta is zero.
template <typename T>
nn::Tensor<T> patient_loss(const nn::Tensor<T>& logits, std::span<const data::Visit> visits,
                           const nn::Tensor<T>& adjacency, double beta,
                           LossCounters* counters = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean patient loss
  eval::MetricValues val;
  bool ddi_above_target = false;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_jaccard = 0.0;
  std::size_t ddi_loss_evaluations = 0;
};

// Deterministic part of the log; wall-clock times go to timing_to_json.
nlohmann::ordered_json to_json(const TrainLog& log);
nlohmann::ordered_json timing_to_json(const TrainLog& log);

struct TrainInputs {
  data::Vocabularies vocab;
  std::span<const data::PatientRecord> train;
  std::span<const data::PatientRecord> val;
  model::EntityEffects effects;
  data::DdiMatrix ddi;
  std::uint64_t seed = 42;
};

template <typename T>
struct TrainResult {
  model::Model<T> model;  // parameters of the best validation epoch
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <typename T>
TrainResult<T> train(const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const TrainInputs& inputs, const EpochCallback& on_epoch = {});

}  // namespace cafemed::training
