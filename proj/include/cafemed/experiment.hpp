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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cafemed/data/ehr.hpp"
#include "cafemed/data/synthetic.hpp"
#include "cafemed/eval.hpp"
#include "cafemed/model.hpp"
#include "cafemed/training.hpp"

// Config-driven experiment steps shared by the command-line tool and the
// acceptance runner.
namespace cafemed::experiment {

struct ExperimentConfig {
  std::uint64_t seed = 42;
  data::SyntheticSpec data;  // data.seed is ignored; `seed` drives everything
  model::ModelConfig model;
  training::TrainConfig train;
};

nlohmann::ordered_json synthetic_spec_to_json(const data::SyntheticSpec& spec);
data::SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// Strict: unknown keys throw ConfigError. Missing fields keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
// No path means the built-in defaults.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path);

// FNV-1a hex over the canonical JSON of every section except the seed.
std::string config_digest(const ExperimentConfig& cfg);

// Provenance fields embedded in every output artifact.
nlohmann::ordered_json provenance(const ExperimentConfig& cfg);

// Writes JSON with a trailing newline; throws DataError on I/O failure.
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json(const std::filesystem::path& path);

struct DataBundle {
  data::Vocabularies vocab;
  std::vector<data::PatientRecord> train, val, test;
  data::DdiMatrix ddi;
};

// Synthetic cohort split 4:1:1 under the config seed.
struct GeneratedData {
  DataBundle bundle;
  data::CausalEffectMatrix tau_true;
  data::GroundTruth truth;
};
GeneratedData generate(const ExperimentConfig& cfg);

// gen-data: train/val/test.jsonl, ddi.json, tau_true.csv, rules.json and
// manifest.json under `out`.
void write_generated(const GeneratedData& gen, const ExperimentConfig& cfg,
                     const std::filesystem::path& out);

// Reads the gen-data layout. `ddi` overrides <dir>/ddi.json. The test split
// is optional.
DataBundle load_bundle(const std::filesystem::path& dir,
                       const std::optional<std::filesystem::path>& ddi = std::nullopt);

// Whether a variant reads the entity effect matrix through a CWG.
bool requires_tau(model::Variant v);

struct RunResult {
  training::TrainLog log;
  eval::MetricValues test;  // per-visit means over the whole test split
};

// Trains `variant` on bundle.train/val with the given entity effects
// (diagnoses then procedures) and scores the best epoch on bundle.test.
// Medication effects come from transitions in the training split. With
// `save_dir` the checkpoint is written there.
RunResult train_and_evaluate(const ExperimentConfig& cfg, const DataBundle& bundle,
                             const data::CausalEffectMatrix& tau, model::Variant variant,
                             std::uint64_t seed,
                             const std::optional<std::filesystem::path>& save_dir = std::nullopt,
                             const training::EpochCallback& on_epoch = {});

// Rows of tau permuted by a seeded shuffle.
data::CausalEffectMatrix shuffle_rows(const data::CausalEffectMatrix& tau, std::uint64_t seed);

struct AblationCell {
  model::Variant variant;
  std::size_t seed_index;
  RunResult result;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::size_t n_seeds = 0;
};

// All four variants for seeds derive_seed(cfg.seed, "ablate", k), k < n_seeds.
AblationResult run_ablation(const ExperimentConfig& cfg, const DataBundle& bundle,
                            const data::CausalEffectMatrix& tau, std::size_t n_seeds);

// Per-variant means and sample stds plus pairwise Jaccard ordering counts.
nlohmann::ordered_json ablation_to_json(const AblationResult& result);

}  // namespace cafemed::experiment
