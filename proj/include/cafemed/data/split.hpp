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
#include <vector>

#include "cafemed/data/ehr.hpp"

namespace cafemed::data {

struct Splits {
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> val;
  std::vector<PatientRecord> test;
};

// Patient-level 4:1:1 split: seeded shuffle, then a contiguous cut with
// floor(n/6) patients each for validation and test and the remainder for
// training. Needs at least 6 patients.
Splits split_dataset(std::span<const PatientRecord> records, std::uint64_t seed);

// `rounds` resamples of n_test patient indices, drawn with replacement; round
// r depends only on (seed, r).
std::vector<std::vector<std::size_t>> bootstrap_samples(std::size_t n_test, std::size_t rounds,
                                                        std::uint64_t seed);

}  // namespace cafemed::data
