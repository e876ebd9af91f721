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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cafemed/data/ehr.hpp"

namespace cafemed::data {

// Parameters of the planted-structure cohort generator. Defaults are a tenth
// of the MIMIC-III scale: ~600 patients, 2.4 visits each, 131 medications.
struct SyntheticSpec {
  std::size_t n_patients = 600;
  std::size_t n_diag = 196;
  std::size_t n_proc = 143;
  std::size_t n_med = 131;
  double avg_visits = 2.4;
  std::size_t n_latent_conditions = 40;
  // Magnitude of a single-antecedent rule's entry in the true effect matrix;
  // each half of a synergy rule gets half of it.
  double effect_strength = 1.0;
  double noise_rate = 0.1;
  std::size_t n_ddi_pairs = 150;
  std::uint64_t seed = 42;

  // Structure knobs.
  std::size_t n_synergy_conditions = 10;  // conditions carrying diag x proc AND-rules
  std::size_t meds_per_rule = 3;          // consequent size of a diagnosis rule
  std::size_t meds_per_synergy_rule = 2;  // consequent size of an AND-rule
  std::size_t n_shared_procs = 12;        // procedures shared between conditions
  std::size_t n_planted_ddi = 4;          // DDI pairs co-emitted by rules
  double chronic_fraction = 0.4;
  std::size_t max_visits = 30;

  // Throws SpecError on an infeasible combination.
  void validate() const;
};

// Fires when every antecedent diagnosis and procedure is present.
struct Rule {
  std::string kind;  // "single" | "synergy"
  std::vector<Id> diag;
  std::vector<Id> proc;
  std::vector<Id> med;
};

struct LatentCondition {
  std::vector<Id> diag;          // first entry is the rule antecedent
  std::vector<Id> proc_options;  // one is drawn per visit
  bool chronic = false;
};

struct GroundTruth {
  std::vector<LatentCondition> conditions;
  std::vector<Rule> rules;
  std::vector<std::pair<Id, Id>> planted_ddi;
};

struct SyntheticCohort {
  Dataset dataset;
  CausalEffectMatrix tau_true;
  DdiMatrix ddi;
  GroundTruth truth;
};

SyntheticCohort generate_synthetic(const SyntheticSpec& spec);

// Sorted union of the consequents of every rule firing on (diag, proc).
std::vector<Id> apply_rules(std::span<const Rule> rules, std::span<const Id> diag,
                            std::span<const Id> proc);

// rules.json sidecar content.
nlohmann::ordered_json ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

}  // namespace cafemed::data
