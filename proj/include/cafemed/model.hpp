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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cafemed/charm.hpp"
#include "cafemed/cwg.hpp"
#include "cafemed/data/ehr.hpp"
#include "cafemed/numerics/ops.hpp"
#include "cafemed/numerics/params.hpp"
#include "cafemed/rng.hpp"

// The full recommender: embeddings, co-occurrence graph encoding, causal
// modulation, cross-modal fusion, per-modality GRUs and the query network.
namespace cafemed::model {

inline constexpr std::size_t kModalities = 3;

enum class Variant { kFull, kNoCwg, kNoCharm, kNone };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);
inline bool uses_cwg(Variant v) { return v == Variant::kFull || v == Variant::kNoCharm; }
inline bool uses_charm(Variant v) { return v == Variant::kFull || v == Variant::kNoCwg; }

struct ModelConfig {
  std::size_t d = 64;
  std::size_t slots = 16;
  double dropout = 0.7;
  Variant variant = Variant::kFull;
  bool use_med_history_cwg = true;
  double alpha = cwg::kDefaultAlpha;

  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
// Strict: unknown keys and wrong types raise ConfigError. Missing keys keep defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Symmetric-normalized co-occurrence adjacency per modality (diag, proc, med).
struct HomoGraphs {
  std::array<nn::CsrMatrix<double>, kModalities> adj;
};

HomoGraphs build_homo_graphs(std::span<const data::PatientRecord> train,
                             const data::Vocabularies& vocab);

// ReLU(A E W) over the whole table.
template <typename T>
nn::Tensor<T> homo_encode(const nn::CsrMatrix<T>& A, const nn::Tensor<T>& E,
                          const nn::Tensor<T>& W);

// Mean effect per entity for each modality; empty vectors mean "no effects".
struct EntityEffects {
  std::vector<double> diag, proc, med;
};

// Aggregates the (|D|+|P|) x |M| matrix and, when given, the |M| x |M|
// medication-history matrix.
EntityEffects aggregate_entity_effects(const data::CausalEffectMatrix& tau,
                                       const data::CausalEffectMatrix* med_tau,
                                       const data::Vocabularies& vocab);

template <typename T>
struct ModelParams {
  std::array<nn::Tensor<T>, kModalities> embedding;
  std::array<nn::Tensor<T>, kModalities> homo_W;
  std::array<cwg::CwgParams<T>, kModalities> cwg;
  charm::CharmParams<T> charm;
  std::array<nn::GruParams<T>, kModalities> gru;
  std::array<nn::Tensor<T>, kModalities> rho0, rho1;
  nn::Tensor<T> query_W1, query_b1, query_W2, query_b2;
};

// Padded entity slots for a patient's visits, one block of `slots` per visit.
struct SlotLayout {
  std::size_t n_visits = 0;
  std::size_t slots = 0;
  // [modality][visit * slots + w], kPadIndex where empty.
  std::array<std::vector<std::int64_t>, kModalities> ids;
};

// Keeps the last `slots` ids of each set in stored order; the med row at
// visit t holds the medications of visit t-1.
SlotLayout layout_visits(std::span<const data::Visit> visits, std::size_t slots);

template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, data::Vocabularies vocab, const HomoGraphs& graphs,
        const EntityEffects& effects, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const data::Vocabularies& vocab() const { return vocab_; }
  ModelParams<T>& params() { return p_; }
  const ModelParams<T>& params() const { return p_; }

  // Trainable parameters followed by constant buffers (graphs, aggregated effects).
  nn::ParamList<T> named_tensors() const;

  // Fused visit vectors e^(m), each [T, d].
  std::array<nn::Tensor<T>, kModalities> encode_visits(std::span<const data::Visit> visits,
                                                       bool train, Rng* dropout_rng) const;

  // Logits [T, |M|]; row t scores visit t from visits 0..t with the true
  // medications of earlier visits as history.
  nn::Tensor<T> forward(std::span<const data::Visit> visits, bool train = false,
                        Rng* dropout_rng = nullptr) const;

  // Concatenated patient representation [T, 6d] before the query network.
  nn::Tensor<T> patient_state(std::span<const data::Visit> visits, bool train = false,
                              Rng* dropout_rng = nullptr) const;

  // Writes the checkpoint plus model_config.json; `extra` keys are appended
  // to model_config.json.
  void save(const std::filesystem::path& dir, const nlohmann::ordered_json& extra = {}) const;
  // Reads parameters and buffers written by save() for the same config and vocab.
  void load(const std::filesystem::path& dir);

 private:
  void rebuild_graph_cache();

  ModelConfig cfg_;
  data::Vocabularies vocab_;
  ModelParams<T> p_;
  std::array<nn::Tensor<T>, kModalities> tau_bar_;     // [n, 1]
  std::array<nn::Tensor<T>, kModalities> graph_dense_; // [n, n]
  std::array<nn::CsrMatrix<T>, kModalities> graph_;
};

struct SavedModelInfo {
  ModelConfig config;
  data::Vocabularies vocab;
  std::string dtype;
  nlohmann::json raw;
};

SavedModelInfo read_model_info(const std::filesystem::path& dir);

// Rebuilds a model from a directory written by Model::save.
template <typename T>
Model<T> load_model(const std::filesystem::path& dir);

// {j : sigmoid(scores[j]) >= threshold}.
template <typename T>
std::vector<data::Id> predict(std::span<const T> scores, double threshold = 0.5);

}  // namespace cafemed::model
