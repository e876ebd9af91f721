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

#include "cafemed/data/split.hpp"

#include <numeric>

#include "cafemed/errors.hpp"
#include "cafemed/rng.hpp"

namespace cafemed::data {

Splits split_dataset(std::span<const PatientRecord> records, std::uint64_t seed) {
  const std::size_t n = records.size();
  if (n < 6) {
    throw DataError("split_dataset: need at least 6 patients, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const std::size_t n_val = n / 6, n_test = n / 6, n_train = n - n_val - n_test;
  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.push_back(records[order[i]]);
  }
  return s;
}

std::vector<std::vector<std::size_t>> bootstrap_samples(std::size_t n_test, std::size_t rounds,
                                                        std::uint64_t seed) {
  if (rounds == 0) throw ConfigError("bootstrap_samples: rounds must be at least 1");
  if (n_test == 0) throw DataError("bootstrap_samples: empty test set");
  std::vector<std::vector<std::size_t>> out(rounds);
  for (std::size_t r = 0; r < rounds; ++r) {
    Rng rng(derive_seed(seed, "bootstrap", r));
    out[r].resize(n_test);
    for (auto& idx : out[r]) idx = rng.below(n_test);
  }
  return out;
}

}  // namespace cafemed::data
