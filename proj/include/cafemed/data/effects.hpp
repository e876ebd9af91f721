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

#include <span>

#include "cafemed/data/ehr.hpp"

namespace cafemed::data {

// Frequency-contrast effect estimate over all visits:
//   tau[i][j] = P(med j | entity i present) - P(med j | entity i absent),
// clipped to [-1, 1]. Rows are diagnoses then procedures. An entity present in
// no visit or in every visit gets a zero row.
CausalEffectMatrix estimate_effects(std::span<const PatientRecord> records,
                                    const Vocabularies& vocab);

// Medication-history convention, |M| x |M|:
//   tau[i][j] = P(med j at t | med i at t-1) - P(med j at t | med i not at t-1)
// over consecutive visit pairs, with the same degenerate-support rule.
CausalEffectMatrix estimate_med_transitions(std::span<const PatientRecord> records,
                                            const Vocabularies& vocab);

}  // namespace cafemed::data
