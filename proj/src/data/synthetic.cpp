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

#include "cafemed/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "cafemed/errors.hpp"
#include "cafemed/rng.hpp"

namespace cafemed::data {

namespace {

std::vector<Id> iota_ids(std::size_t n) {
  std::vector<Id> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void sort_unique(std::vector<Id>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

bool contains(std::span<const Id> set, Id id) {
  return std::find(set.begin(), set.end(), id) != set.end();
}

std::vector<Id> sample_without_replacement(std::span<const Id> pool, std::size_t k, Rng& rng) {
  std::vector<Id> v(pool.begin(), pool.end());
  for (std::size_t i = 0; i < k; ++i) std::swap(v[i], v[i + rng.below(v.size() - i)]);
  v.resize(k);
  return v;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw SpecError("synthetic spec: " + m); };
  if (n_patients == 0 || n_diag == 0 || n_proc == 0 || n_med == 0)
    fail("counts and vocabulary sizes must be positive");
  if (n_latent_conditions == 0) fail("n_latent_conditions must be positive");
  if (!(noise_rate >= 0.0 && noise_rate < 0.5)) fail("noise_rate must lie in [0, 0.5)");
  if (!(avg_visits >= 1.0)) fail("avg_visits must be at least 1");
  if (max_visits == 0) fail("max_visits must be positive");
  if (!(effect_strength > 0.0 && effect_strength <= 1.0)) fail("effect_strength must lie in (0, 1]");
  if (!(chronic_fraction >= 0.0 && chronic_fraction <= 1.0)) fail("chronic_fraction must lie in [0, 1]");
  if (2 * n_latent_conditions > n_diag)
    fail("each latent condition needs two diagnoses: n_diag >= 2 * n_latent_conditions");
  if (n_shared_procs < 2 || n_shared_procs > n_proc)
    fail("n_shared_procs must lie in [2, n_proc]");
  if (n_synergy_conditions > n_latent_conditions)
    fail("n_synergy_conditions exceeds n_latent_conditions");
  if (meds_per_rule == 0) fail("meds_per_rule must be positive");
  const std::size_t exclusive = 2 * n_synergy_conditions * meds_per_synergy_rule;
  if (exclusive + meds_per_rule > n_med)
    fail("not enough medications for the synergy consequents plus one diagnosis rule");
  const std::size_t max_pairs = n_med * (n_med - 1) / 2;
  if (n_ddi_pairs > max_pairs)
    fail("n_ddi_pairs " + std::to_string(n_ddi_pairs) + " exceeds |M|(|M|-1)/2 = " +
         std::to_string(max_pairs));
  if (n_ddi_pairs == 0 || n_planted_ddi == 0) fail("at least one planted DDI pair is required");
  if (n_planted_ddi > n_ddi_pairs) fail("n_planted_ddi exceeds n_ddi_pairs");
  if (n_planted_ddi > n_latent_conditions) fail("n_planted_ddi exceeds n_latent_conditions");
  if (meds_per_rule < 2) fail("meds_per_rule must be >= 2 so a rule can emit a DDI pair");
}

std::vector<Id> apply_rules(std::span<const Rule> rules, std::span<const Id> diag,
                            std::span<const Id> proc) {
  std::vector<Id> out;
  for (const auto& r : rules) {
    const bool fires =
        std::all_of(r.diag.begin(), r.diag.end(), [&](Id d) { return contains(diag, d); }) &&
        std::all_of(r.proc.begin(), r.proc.end(), [&](Id p) { return contains(proc, p); });
    if (fires) out.insert(out.end(), r.med.begin(), r.med.end());
  }
  sort_unique(out);
  return out;
}

SyntheticCohort generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t K = spec.n_latent_conditions;
  Rng rng(derive_seed(spec.seed, "structure"));

  // Latent conditions: two private diagnoses, two procedure options drawn from
  // a shared pool so a procedure alone does not identify the condition.
  auto diag_ids = iota_ids(spec.n_diag);
  auto proc_ids = iota_ids(spec.n_proc);
  rng.shuffle(diag_ids);
  rng.shuffle(proc_ids);
  std::vector<Id> shared_procs(proc_ids.begin(), proc_ids.begin() + spec.n_shared_procs);
  std::vector<Id> background_diag(diag_ids.begin() + 2 * K, diag_ids.end());
  std::vector<Id> background_proc(proc_ids.begin() + spec.n_shared_procs, proc_ids.end());

  GroundTruth truth;
  const auto n_chronic = static_cast<std::size_t>(std::llround(spec.chronic_fraction * K));
  for (std::size_t k = 0; k < K; ++k) {
    LatentCondition c;
    c.diag = {diag_ids[2 * k], diag_ids[2 * k + 1]};
    c.proc_options = sample_without_replacement(shared_procs, 2, rng);
    c.chronic = k < n_chronic;
    truth.conditions.push_back(std::move(c));
  }

  // Medications: a block reserved for AND-rule consequents, the rest shared by
  // the diagnosis rules.
  auto med_ids = iota_ids(spec.n_med);
  rng.shuffle(med_ids);
  const std::size_t n_exclusive = 2 * spec.n_synergy_conditions * spec.meds_per_synergy_rule;
  std::vector<Id> general_meds(med_ids.begin() + n_exclusive, med_ids.end());
  for (std::size_t k = 0; k < K; ++k) {
    Rule r;
    r.kind = "single";
    r.diag = {truth.conditions[k].diag[0]};
    r.med = sample_without_replacement(general_meds, spec.meds_per_rule, rng);
    sort_unique(r.med);
    truth.rules.push_back(std::move(r));
  }
  std::size_t next_exclusive = 0;
  for (std::size_t k = 0; k < spec.n_synergy_conditions; ++k) {
    for (Id option : truth.conditions[k].proc_options) {
      Rule r;
      r.kind = "synergy";
      r.diag = {truth.conditions[k].diag[0]};
      r.proc = {option};
      for (std::size_t m = 0; m < spec.meds_per_synergy_rule; ++m)
        r.med.push_back(med_ids[next_exclusive++]);
      sort_unique(r.med);
      truth.rules.push_back(std::move(r));
    }
  }

  // DDI: one pair emitted together by a single rule, further pairs linking the
  // consequents of two rules, then random pairs.
  DdiMatrix ddi(spec.n_med);
  auto plant = [&](Id a, Id b) {
    if (a == b || ddi.interacts(a, b)) return false;
    ddi.add_pair(a, b);
    truth.planted_ddi.emplace_back(std::min(a, b), std::max(a, b));
    return true;
  };
  plant(truth.rules[0].med[0], truth.rules[0].med[1]);
  for (std::size_t k = 1; k < K && truth.planted_ddi.size() < spec.n_planted_ddi; ++k) {
    const auto& prev = truth.rules[k - 1].med;
    const auto& cur = truth.rules[k].med;
    for (std::size_t t = 0; t < cur.size() && !plant(prev.back(), cur[t]); ++t) {
    }
  }
  const std::size_t max_pairs = spec.n_med * (spec.n_med - 1) / 2;
  if (spec.n_ddi_pairs * 2 > max_pairs) {
    std::vector<std::pair<Id, Id>> all;
    for (std::size_t i = 0; i < spec.n_med; ++i)
      for (std::size_t j = i + 1; j < spec.n_med; ++j)
        if (!ddi.interacts(i, j)) all.emplace_back(static_cast<Id>(i), static_cast<Id>(j));
    rng.shuffle(all);
    for (std::size_t i = 0; ddi.n_pairs() < spec.n_ddi_pairs; ++i) ddi.add_pair(all[i].first, all[i].second);
  } else {
    while (ddi.n_pairs() < spec.n_ddi_pairs) {
      const auto a = rng.below(spec.n_med), b = rng.below(spec.n_med);
      if (a != b && !ddi.interacts(a, b)) ddi.add_pair(a, b);
    }
  }

  // True effect matrix implied by the rule table.
  CausalEffectMatrix tau(spec.n_diag + spec.n_proc, spec.n_med);
  for (const auto& r : truth.rules) {
    const double share = r.kind == "single" ? spec.effect_strength : 0.5 * spec.effect_strength;
    for (Id m : r.med) {
      for (Id d : r.diag) tau.at(d, m) = std::min(1.0, tau.at(d, m) + share);
      for (Id p : r.proc) tau.at(spec.n_diag + p, m) = std::min(1.0, tau.at(spec.n_diag + p, m) + share);
    }
  }

  std::vector<std::size_t> chronic_ids, all_ids(K);
  std::iota(all_ids.begin(), all_ids.end(), 0);
  for (std::size_t k = 0; k < K; ++k)
    if (truth.conditions[k].chronic) chronic_ids.push_back(k);

  Dataset ds;
  ds.vocab = {spec.n_diag, spec.n_proc, spec.n_med};
  const double stop_p = 1.0 / spec.avg_visits;
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    Rng prng(derive_seed(spec.seed, "patient", i));
    PatientRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "p%05zu", i);
    rec.patient_id = id;

    std::size_t n_visits = 1;
    while (n_visits < spec.max_visits && !prng.bernoulli(stop_p)) ++n_visits;

    std::vector<std::size_t> chronic;
    if (!chronic_ids.empty() && prng.bernoulli(0.6)) {
      chronic.push_back(chronic_ids[prng.below(chronic_ids.size())]);
    }
    for (std::size_t t = 0; t < n_visits; ++t) {
      std::vector<std::size_t> present = chronic;
      const std::size_t n_acute = 1 + (prng.bernoulli(0.5) ? 1 : 0);
      for (std::size_t a = 0; a < n_acute; ++a) present.push_back(prng.below(K));
      std::sort(present.begin(), present.end());
      present.erase(std::unique(present.begin(), present.end()), present.end());

      Visit v;
      for (std::size_t k : present) {
        const auto& c = truth.conditions[k];
        v.diag.insert(v.diag.end(), c.diag.begin(), c.diag.end());
        v.proc.push_back(c.proc_options[prng.below(c.proc_options.size())]);
      }
      if (!background_diag.empty()) {
        const std::size_t nb = prng.below(3);
        for (std::size_t b = 0; b < nb; ++b)
          v.diag.push_back(background_diag[prng.below(background_diag.size())]);
      }
      if (!background_proc.empty() && prng.bernoulli(0.5)) {
        v.proc.push_back(background_proc[prng.below(background_proc.size())]);
      }
      sort_unique(v.diag);
      sort_unique(v.proc);

      const auto clean = apply_rules(truth.rules, v.diag, v.proc);
      if (spec.noise_rate == 0.0) {
        v.med = clean;
      } else {
        // Symmetric label noise: drops and spurious additions have equal
        // expected counts.
        const double k = static_cast<double>(clean.size());
        const double add_p = spec.noise_rate * k / std::max(1.0, spec.n_med - k);
        for (std::size_t m = 0; m < spec.n_med; ++m) {
          const bool on = contains(clean, static_cast<Id>(m));
          if (prng.bernoulli(on ? spec.noise_rate : add_p) != on) v.med.push_back(static_cast<Id>(m));
        }
        if (v.med.empty()) v.med.push_back(clean.front());
      }
      rec.visits.push_back(std::move(v));
    }
    ds.records.push_back(std::move(rec));
  }
  return {std::move(ds), std::move(tau), std::move(ddi), std::move(truth)};
}

nlohmann::ordered_json ground_truth_to_json(const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["conditions"] = nlohmann::ordered_json::array();
  for (const auto& c : truth.conditions) {
    j["conditions"].push_back(
        {{"diag", c.diag}, {"proc_options", c.proc_options}, {"chronic", c.chronic}});
  }
  j["rules"] = nlohmann::ordered_json::array();
  for (const auto& r : truth.rules) {
    j["rules"].push_back({{"kind", r.kind}, {"antecedent", {{"diag", r.diag}, {"proc", r.proc}}},
                          {"consequent", r.med}});
  }
  j["planted_ddi"] = nlohmann::ordered_json::array();
  for (auto [a, b] : truth.planted_ddi) j["planted_ddi"].push_back({a, b});
  return j;
}

GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth t;
  try {
    for (const auto& c : j.at("conditions")) {
      t.conditions.push_back({c.at("diag").get<std::vector<Id>>(),
                              c.at("proc_options").get<std::vector<Id>>(),
                              c.at("chronic").get<bool>()});
    }
    for (const auto& r : j.at("rules")) {
      t.rules.push_back({r.at("kind").get<std::string>(),
                         r.at("antecedent").at("diag").get<std::vector<Id>>(),
                         r.at("antecedent").at("proc").get<std::vector<Id>>(),
                         r.at("consequent").get<std::vector<Id>>()});
    }
    for (const auto& p : j.at("planted_ddi")) t.planted_ddi.emplace_back(p.at(0), p.at(1));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed rules sidecar: ") + e.what());
  }
  return t;
}

}  // namespace cafemed::data
