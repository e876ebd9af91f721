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

#include "cafemed/data/effects.hpp"

#include <algorithm>
#include <vector>

#include "cafemed/errors.hpp"

namespace cafemed::data {

namespace {

// Accumulates (entity set, medication set) observations and resolves the
// contrast.
class ContrastCounter {
 public:
  ContrastCounter(std::size_t n_entities, std::size_t n_med)
      : n_med_(n_med), present_(n_entities, 0), co_(n_entities * n_med, 0), med_total_(n_med, 0) {}

  void observe(std::span<const std::size_t> entities, std::span<const Id> meds) {
    ++n_obs_;
    for (Id m : meds) ++med_total_[m];
    for (std::size_t e : entities) {
      ++present_[e];
      for (Id m : meds) ++co_[e * n_med_ + m];
    }
  }

  CausalEffectMatrix resolve() const {
    CausalEffectMatrix tau(present_.size(), n_med_);
    for (std::size_t e = 0; e < present_.size(); ++e) {
      const std::size_t with = present_[e];
      if (with == 0 || with == n_obs_) continue;
      const double without = static_cast<double>(n_obs_ - with);
      for (std::size_t m = 0; m < n_med_; ++m) {
        const double co = static_cast<double>(co_[e * n_med_ + m]);
        const double v = co / static_cast<double>(with) -
                         (static_cast<double>(med_total_[m]) - co) / without;
        tau.at(e, m) = std::clamp(v, -1.0, 1.0);
      }
    }
    return tau;
  }

 private:
  std::size_t n_med_;
  std::size_t n_obs_ = 0;
  std::vector<std::size_t> present_;
  std::vector<std::size_t> co_;
  std::vector<std::size_t> med_total_;
};

}  // namespace

CausalEffectMatrix estimate_effects(std::span<const PatientRecord> records,
                                    const Vocabularies& vocab) {
  if (records.empty()) throw DataError("estimate_effects: no records");
  ContrastCounter counter(vocab.n_entities(), vocab.n_med);
  std::vector<std::size_t> entities;
  for (const auto& r : records) {
    validate_record(r, vocab);
    for (const auto& v : r.visits) {
      entities.clear();
      for (Id d : v.diag) entities.push_back(static_cast<std::size_t>(d));
      for (Id p : v.proc) entities.push_back(vocab.n_diag + static_cast<std::size_t>(p));
      counter.observe(entities, v.med);
    }
  }
  return counter.resolve();
}

CausalEffectMatrix estimate_med_transitions(std::span<const PatientRecord> records,
                                            const Vocabularies& vocab) {
  if (records.empty()) throw DataError("estimate_med_transitions: no records");
  ContrastCounter counter(vocab.n_med, vocab.n_med);
  std::vector<std::size_t> prev;
  for (const auto& r : records) {
    validate_record(r, vocab);
    for (std::size_t t = 1; t < r.visits.size(); ++t) {
      prev.assign(r.visits[t - 1].med.begin(), r.visits[t - 1].med.end());
      counter.observe(prev, r.visits[t].med);
    }
  }
  return counter.resolve();
}

}  // namespace cafemed::data
