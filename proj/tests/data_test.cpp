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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cafemed/data/effects.hpp"
#include "cafemed/data/ehr.hpp"
#include "cafemed/data/split.hpp"
#include "cafemed/data/synthetic.hpp"
#include "cafemed/errors.hpp"
#include "doctest.h"

using namespace cafemed;
using namespace cafemed::data;

namespace {

std::string to_string(const Dataset& ds) {
  std::ostringstream os;
  write_dataset(os, ds);
  return os.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cafemed_data_test_" + name);
}

}  // namespace

TEST_CASE("dataset: single-visit round trip and error reporting") {
  Dataset ds;
  ds.vocab = {2, 2, 3};
  ds.records.push_back({"a", {Visit{{0}, {0}, {0, 1}}}});
  const auto text = to_string(ds);
  CHECK(text.substr(0, text.find('\n')) ==
        R"({"format":"cafemed-ehr-v1","n_diag":2,"n_proc":2,"n_med":3})");
  std::istringstream in(text);
  auto back = parse_dataset(in, "mem");
  CHECK(back.vocab == ds.vocab);
  CHECK(back.records == ds.records);
  CHECK(to_string(back) == text);

  std::istringstream bad(
      "{\"format\":\"cafemed-ehr-v1\",\"n_diag\":2,\"n_proc\":2,\"n_med\":3}\n"
      "{\"patient_id\":\"a\",\"visits\":[{\"diag\":[0],\"proc\":[0],\"med\":[3]}]}\n");
  try {
    parse_dataset(bad, "f.jsonl");
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("f.jsonl:2") != std::string::npos);
  }

  std::istringstream malformed(
      "{\"format\":\"cafemed-ehr-v1\",\"n_diag\":2,\"n_proc\":2,\"n_med\":3}\n"
      "{\"patient_id\":\"a\",\"visits\":[{\"diag\":[0]\n");
  CHECK_THROWS_AS(parse_dataset(malformed, "m"), DataError);
  std::istringstream dup(
      "{\"format\":\"cafemed-ehr-v1\",\"n_diag\":2,\"n_proc\":2,\"n_med\":3}\n"
      "{\"patient_id\":\"a\",\"visits\":[{\"diag\":[0,0],\"proc\":[0],\"med\":[1]}]}\n");
  CHECK_THROWS_AS(parse_dataset(dup, "d"), DataError);
  std::istringstream header("{\"format\":\"other\",\"n_diag\":2,\"n_proc\":2,\"n_med\":3}\n");
  CHECK_THROWS_AS(parse_dataset(header, "h"), DataError);
}

TEST_CASE("synthetic: defaults, determinism and file round trip") {
  SyntheticSpec spec;
  auto c = generate_synthetic(spec);
  CHECK(c.dataset.records.size() == 600);
  CHECK(c.dataset.vocab.n_med == 131);
  std::size_t visits = 0, meds = 0;
  for (const auto& r : c.dataset.records) {
    visits += r.visits.size();
    for (const auto& v : r.visits) {
      meds += v.med.size();
      CHECK(!v.diag.empty());
      CHECK(!v.proc.empty());
      CHECK(!v.med.empty());
    }
  }
  const double avg_visits = static_cast<double>(visits) / 600.0;
  CHECK(avg_visits == doctest::Approx(2.4).epsilon(0.1));
  MESSAGE("avg visits ", avg_visits, ", avg meds ", static_cast<double>(meds) / visits);

  auto c2 = generate_synthetic(spec);
  CHECK(to_string(c.dataset) == to_string(c2.dataset));
  CHECK(c.tau_true == c2.tau_true);
  CHECK(c.ddi.pairs() == c2.ddi.pairs());

  const auto path = temp_path("synthetic.jsonl");
  save_dataset(path, c.dataset);
  auto loaded = load_dataset(path);
  CHECK(loaded.records.size() == 600);
  const auto path2 = temp_path("synthetic2.jsonl");
  save_dataset(path2, loaded);
  std::ifstream a(path), b(path2);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  std::filesystem::remove(path);
  std::filesystem::remove(path2);

  spec.seed = 43;
  CHECK(to_string(generate_synthetic(spec).dataset) != to_string(c.dataset));
}

TEST_CASE("synthetic: noise-free labels replay the rule table") {
  SyntheticSpec spec;
  spec.noise_rate = 0.0;
  spec.n_patients = 200;
  auto c = generate_synthetic(spec);
  // Replay from the serialized sidecar, independent of apply_rules.
  const auto truth = ground_truth_from_json(nlohmann::json::parse(ground_truth_to_json(c.truth).dump()));
  std::size_t synergy_rules = 0;
  for (const auto& r : truth.rules) synergy_rules += r.kind == "synergy";
  CHECK(synergy_rules >= 2);
  for (const auto& rec : c.dataset.records)
    for (const auto& v : rec.visits) {
      std::set<Id> expect;
      const std::set<Id> dset(v.diag.begin(), v.diag.end()), pset(v.proc.begin(), v.proc.end());
      for (const auto& r : truth.rules) {
        bool fire = true;
        for (Id d : r.diag) fire = fire && dset.count(d);
        for (Id p : r.proc) fire = fire && pset.count(p);
        if (fire) expect.insert(r.med.begin(), r.med.end());
      }
      CHECK(std::vector<Id>(expect.begin(), expect.end()) == v.med);
    }
}

TEST_CASE("synthetic: structural invariants") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_patients = 100;
    auto c = generate_synthetic(spec);
    const auto& ddi = c.ddi;
    CHECK(ddi.n_pairs() == spec.n_ddi_pairs);
    for (std::size_t i = 0; i < ddi.n_med(); ++i) {
      CHECK_FALSE(ddi.interacts(i, i));
      for (std::size_t j = 0; j < ddi.n_med(); ++j) CHECK(ddi.interacts(i, j) == ddi.interacts(j, i));
    }
    // At least one DDI pair is emitted by a single rule.
    bool co_emitted = false;
    for (const auto& r : c.truth.rules)
      for (std::size_t a = 0; a < r.med.size(); ++a)
        for (std::size_t b = a + 1; b < r.med.size(); ++b)
          co_emitted = co_emitted || ddi.interacts(r.med[a], r.med[b]);
    CHECK(co_emitted);
    for (const auto& r : c.dataset.records) CHECK_NOTHROW(validate_record(r, c.dataset.vocab));
    for (double v : c.tau_true.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("synthetic: infeasible specs are rejected") {
  SyntheticSpec spec;
  spec.n_med = 10;
  spec.n_synergy_conditions = 0;
  spec.n_ddi_pairs = 46;
  CHECK_THROWS_AS(generate_synthetic(spec), SpecError);
  SyntheticSpec noisy;
  noisy.noise_rate = 0.5;
  CHECK_THROWS_AS(generate_synthetic(noisy), SpecError);
  SyntheticSpec empty;
  empty.n_patients = 0;
  CHECK_THROWS_AS(generate_synthetic(empty), SpecError);
}

TEST_CASE("estimate_effects: degenerate support, perfect association, bounds") {
  Vocabularies vocab{2, 1, 6};
  std::vector<PatientRecord> recs{{"a", {Visit{{0, 1}, {0}, {5}}, Visit{{1}, {0}, {2}}}}};
  auto tau = estimate_effects(recs, vocab);
  CHECK(tau.rows() == 3);
  CHECK(tau.cols() == 6);
  CHECK(tau.at(0, 5) == 1.0);
  CHECK(tau.at(0, 2) == -1.0);
  for (std::size_t m = 0; m < 6; ++m) {
    CHECK(tau.at(1, m) == 0.0);  // diagnosis 1 is in every visit
    CHECK(tau.at(2, m) == 0.0);  // so is procedure 0
  }
  CHECK_THROWS_AS(estimate_effects(std::vector<PatientRecord>{}, vocab), DataError);

  SyntheticSpec spec;
  auto c = generate_synthetic(spec);
  auto est = estimate_effects(c.dataset.records, c.dataset.vocab);
  for (double v : est.values()) {
    CHECK(std::isfinite(v));
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("estimate_effects: signs agree with the planted effects on noise-free data") {
  SyntheticSpec spec;
  spec.noise_rate = 0.0;
  auto c = generate_synthetic(spec);
  auto est = estimate_effects(c.dataset.records, c.dataset.vocab);
  std::size_t checked = 0, agree = 0;
  for (std::size_t i = 0; i < est.rows(); ++i)
    for (std::size_t j = 0; j < est.cols(); ++j) {
      const double t = c.tau_true.at(i, j);
      if (std::abs(t) <= 0.2) continue;
      ++checked;
      agree += (t > 0) == (est.at(i, j) > 0) && est.at(i, j) != 0.0;
    }
  REQUIRE(checked > 0);
  const double rate = static_cast<double>(agree) / static_cast<double>(checked);
  MESSAGE("sign agreement ", rate, " over ", checked, " entries");
  CHECK(rate >= 0.9);
}

TEST_CASE("estimate_med_transitions: previous-visit contrast") {
  Vocabularies vocab{1, 1, 3};
  std::vector<PatientRecord> recs{
      {"a", {Visit{{0}, {0}, {0}}, Visit{{0}, {0}, {1}}}},
      {"b", {Visit{{0}, {0}, {2}}, Visit{{0}, {0}, {2}}}},
  };
  auto tau = estimate_med_transitions(recs, vocab);
  CHECK(tau.at(0, 1) == 1.0);
  CHECK(tau.at(0, 2) == -1.0);
  CHECK(tau.at(1, 0) == 0.0);  // medication 1 never precedes a visit
}

TEST_CASE("effects CSV and DDI files round trip") {
  CausalEffectMatrix tau(2, 3);
  tau.at(0, 0) = 0.1;
  tau.at(1, 2) = -1.0 / 3.0;
  const auto p = temp_path("tau.csv");
  save_effects_csv(p, tau);
  CHECK(load_effects_csv(p) == tau);
  std::ofstream(p) << "0.1,abc\n";
  CHECK_THROWS_AS(load_effects_csv(p), DataError);
  std::ofstream(p) << "0.1,0.2\n0.3\n";
  CHECK_THROWS_AS(load_effects_csv(p), DataError);
  CHECK_THROWS_AS(check_effects_shape(tau, Vocabularies{1, 2, 4}), ConfigError);
  CHECK_NOTHROW(check_effects_shape(tau, Vocabularies{1, 1, 3}));

  DdiMatrix ddi(4);
  ddi.add_pair(3, 1);
  ddi.add_pair(0, 2);
  const auto q = temp_path("ddi.json");
  save_ddi(q, ddi);
  std::ifstream in(q);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "{\"n_med\":4,\"pairs\":[[0,2],[1,3]]}\n");
  CHECK(load_ddi(q).pairs() == ddi.pairs());
  std::ofstream(q) << R"({"n_med":4,"pairs":[[2,1]]})";
  CHECK_THROWS_AS(load_ddi(q), DataError);
  CHECK_THROWS_AS(ddi.add_pair(2, 2), DataError);
  std::filesystem::remove(p);
  std::filesystem::remove(q);
}

TEST_CASE("split_dataset: sizes, determinism and partition") {
  auto make = [](std::size_t n) {
    std::vector<PatientRecord> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back({"p" + std::to_string(i), {Visit{{0}, {0}, {0}}}});
    return v;
  };
  auto recs = make(600);
  auto s = split_dataset(recs, 5);
  CHECK(s.train.size() == 400);
  CHECK(s.val.size() == 100);
  CHECK(s.test.size() == 100);
  auto s7 = split_dataset(make(7), 1);
  CHECK(s7.train.size() == 5);
  CHECK(s7.val.size() == 1);
  CHECK(s7.test.size() == 1);
  CHECK_THROWS_AS(split_dataset(make(5), 1), DataError);

  auto again = split_dataset(recs, 5);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& r : *part) CHECK(ids.insert(r.patient_id).second);
  CHECK(ids.size() == 600);
  CHECK(split_dataset(recs, 6).train != s.train);
}

TEST_CASE("bootstrap_samples: shape, determinism, support") {
  auto b = bootstrap_samples(100, 10, 3);
  CHECK(b.size() == 10);
  for (const auto& round : b) {
    CHECK(round.size() == 100);
    for (auto i : round) CHECK(i < 100);
  }
  CHECK(bootstrap_samples(100, 10, 3) == b);
  CHECK(b[0] != b[1]);
  CHECK_THROWS_AS(bootstrap_samples(0, 10, 3), DataError);
  CHECK_THROWS_AS(bootstrap_samples(10, 0, 3), ConfigError);
}
