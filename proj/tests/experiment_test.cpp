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

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cafemed/errors.hpp"
#include "cafemed/experiment.hpp"

using namespace cafemed;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cafemed_experiment_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

experiment::ExperimentConfig tiny_config() {
  return experiment::config_from_json(nlohmann::json::parse(R"({
    "seed": 5,
    "data": {"n_patients": 60, "n_diag": 30, "n_proc": 20, "n_med": 16,
             "n_latent_conditions": 6, "n_synergy_conditions": 2, "n_shared_procs": 3,
             "n_ddi_pairs": 10, "n_planted_ddi": 1},
    "model": {"d": 8, "slots": 4, "dropout": 0.2},
    "train": {"max_epochs": 2, "patience": 2, "lr": 0.002, "weight_decay": 0}
  })"));
}

}  // namespace

TEST_CASE("defaults follow the paper settings") {
  const auto cfg = experiment::load_config(std::nullopt);
  CHECK(cfg.model.d == 64);
  CHECK(cfg.model.dropout == doctest::Approx(0.7));
  CHECK(cfg.train.lr == doctest::Approx(5e-4));
  CHECK(cfg.train.beta_ddi == doctest::Approx(0.0005));
  CHECK(cfg.data.n_med == 131);
  CHECK(cfg.data.n_patients == 600);
}

TEST_CASE("config parsing is strict") {
  CHECK_THROWS_AS(experiment::config_from_json(nlohmann::json::parse(R"({"extra": 1})")),
                  ConfigError);
  CHECK_THROWS_AS(experiment::config_from_json(nlohmann::json::parse(R"({"data": {"n_med2": 1}})")),
                  ConfigError);
  CHECK_THROWS_AS(experiment::config_from_json(nlohmann::json::parse(R"({"model": {"d": "x"}})")),
                  ConfigError);
  CHECK_THROWS_AS(experiment::config_from_json(nlohmann::json::parse(R"({"seed": -3})")),
                  ConfigError);
  CHECK_THROWS_AS(experiment::config_from_json(nlohmann::json::parse("[1]")), ConfigError);
}

TEST_CASE("config round-trips through JSON") {
  const auto cfg = tiny_config();
  const auto back = experiment::config_from_json(experiment::to_json(cfg));
  CHECK(experiment::to_json(back).dump() == experiment::to_json(cfg).dump());
}

TEST_CASE("digest tracks content but not the seed") {
  auto a = tiny_config();
  auto b = a;
  b.seed = 99;
  CHECK(experiment::config_digest(a) == experiment::config_digest(b));
  b.train.lr = 0.003;
  CHECK(experiment::config_digest(a) != experiment::config_digest(b));
  CHECK(experiment::config_digest(a).size() == 16);
}

TEST_CASE("generated data round-trips through the directory layout") {
  const auto cfg = tiny_config();
  const auto gen = experiment::generate(cfg);
  const auto dir = scratch("layout");
  experiment::write_generated(gen, cfg, dir);
  const auto back = experiment::load_bundle(dir);
  CHECK(back.vocab == gen.bundle.vocab);
  CHECK(back.train == gen.bundle.train);
  CHECK(back.val == gen.bundle.val);
  CHECK(back.test == gen.bundle.test);
  CHECK(back.ddi.pairs() == gen.bundle.ddi.pairs());
  CHECK(gen.bundle.val.size() == cfg.data.n_patients / 6);
  const auto manifest = experiment::read_json(dir / "manifest.json");
  CHECK(manifest.at("config_digest") == experiment::config_digest(cfg));
  CHECK(manifest.at("seed") == cfg.seed);
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed give byte-identical files") {
  const auto cfg = tiny_config();
  const auto a = scratch("det_a"), b = scratch("det_b");
  experiment::write_generated(experiment::generate(cfg), cfg, a);
  experiment::write_generated(experiment::generate(cfg), cfg, b);
  for (const auto& entry : fs::directory_iterator(a)) {
    CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
  }
  auto other = cfg;
  other.seed = 6;
  other.data.seed = 6;
  const auto c = scratch("det_c");
  experiment::write_generated(experiment::generate(other), other, c);
  CHECK(slurp(a / "train.jsonl") != slurp(c / "train.jsonl"));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
}

TEST_CASE("load_bundle rejects a DDI matrix of the wrong size") {
  const auto cfg = tiny_config();
  const auto dir = scratch("ddi_size");
  experiment::write_generated(experiment::generate(cfg), cfg, dir);
  data::save_ddi(dir / "small_ddi.json", data::DdiMatrix(3));
  CHECK_THROWS_AS(experiment::load_bundle(dir, dir / "small_ddi.json"), ConfigError);
  CHECK_THROWS_AS(experiment::load_bundle(dir / "missing"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("shuffle_rows permutes whole rows") {
  data::CausalEffectMatrix tau(7, 3);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 3; ++c) tau.at(r, c) = static_cast<double>(10 * r + c);
  const auto s = experiment::shuffle_rows(tau, 3);
  std::multiset<double> firsts;
  bool moved = false;
  for (std::size_t r = 0; r < 7; ++r) {
    const double base = s.at(r, 0);
    CHECK(s.at(r, 1) == base + 1);
    CHECK(s.at(r, 2) == base + 2);
    firsts.insert(base);
    moved = moved || base != tau.at(r, 0);
  }
  CHECK(firsts == std::multiset<double>{0, 10, 20, 30, 40, 50, 60});
  CHECK(moved);
  CHECK(experiment::shuffle_rows(tau, 3) == s);
}

TEST_CASE("requires_tau follows the CWG arms") {
  CHECK(experiment::requires_tau(model::Variant::kFull));
  CHECK(experiment::requires_tau(model::Variant::kNoCharm));
  CHECK_FALSE(experiment::requires_tau(model::Variant::kNoCwg));
  CHECK_FALSE(experiment::requires_tau(model::Variant::kNone));
}

TEST_CASE("train_and_evaluate is reproducible and saves a checkpoint") {
  const auto cfg = tiny_config();
  const auto gen = experiment::generate(cfg);
  const auto dir = scratch("run");
  const auto a = experiment::train_and_evaluate(cfg, gen.bundle, gen.tau_true,
                                                model::Variant::kFull, 11, dir);
  const auto b = experiment::train_and_evaluate(cfg, gen.bundle, gen.tau_true,
                                                model::Variant::kFull, 11);
  CHECK(training::to_json(a.log).dump() == training::to_json(b.log).dump());
  CHECK(a.test.jaccard == b.test.jaccard);
  CHECK(a.log.epochs.size() == 2);
  const auto info = model::read_model_info(dir);
  CHECK(info.raw.at("config_digest") == experiment::config_digest(cfg));
  CHECK(info.raw.at("seed") == 11);
  data::CausalEffectMatrix wrong(3, 3);
  CHECK_THROWS_AS(experiment::train_and_evaluate(cfg, gen.bundle, wrong, model::Variant::kFull, 1),
                  ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("ablation summary counts orderings per seed") {
  experiment::AblationResult r;
  r.n_seeds = 3;
  const double jac[3][4] = {{0.5, 0.4, 0.3, 0.2}, {0.3, 0.4, 0.3, 0.3}, {0.6, 0.6, 0.7, 0.1}};
  const model::Variant vs[4] = {model::Variant::kFull, model::Variant::kNoCwg,
                                model::Variant::kNoCharm, model::Variant::kNone};
  for (std::size_t k = 0; k < 3; ++k)
    for (int v = 0; v < 4; ++v) {
      experiment::RunResult run;
      run.test.jaccard = jac[k][v];
      run.test.ddi = 0.1 * v;
      r.cells.push_back({vs[v], k, run});
    }
  const auto j = experiment::ablation_to_json(r);
  REQUIRE(j["variants"].size() == 4);
  CHECK(j["variants"][0]["variant"] == "full");
  CHECK(j["variants"][0]["mean"]["jaccard"].get<double>() == doctest::Approx(1.4 / 3));
  // Sample std of {0.5, 0.3, 0.6}.
  CHECK(j["variants"][0]["std"]["jaccard"].get<double>() == doctest::Approx(0.152752523));
  CHECK(j["variants"][3]["mean"]["ddi"].get<double>() == doctest::Approx(0.3));
  CHECK(j["variants"][0]["per_seed"].size() == 3);
  const auto& ord = j["jaccard_ordering"];
  REQUIRE(ord.size() == 4);
  CHECK(ord[0]["worse"] == "no-cwg");
  CHECK(ord[0]["seeds_holding"] == 2);  // 0.5>=0.4, 0.3<0.4, 0.6>=0.6
  CHECK(ord[1]["seeds_holding"] == 2);  // 0.5>=0.3, 0.3>=0.3, 0.6<0.7
  CHECK(ord[2]["seeds_holding"] == 3);
  CHECK(ord[3]["seeds_holding"] == 3);
}
