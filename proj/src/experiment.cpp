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

#include "cafemed/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cafemed/data/effects.hpp"
#include "cafemed/data/split.hpp"
#include "cafemed/errors.hpp"
#include "cafemed/rng.hpp"

namespace cafemed::experiment {

namespace fs = std::filesystem;

nlohmann::ordered_json synthetic_spec_to_json(const data::SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["n_patients"] = s.n_patients;
  j["n_diag"] = s.n_diag;
  j["n_proc"] = s.n_proc;
  j["n_med"] = s.n_med;
  j["avg_visits"] = s.avg_visits;
  j["n_latent_conditions"] = s.n_latent_conditions;
  j["effect_strength"] = s.effect_strength;
  j["noise_rate"] = s.noise_rate;
  j["n_ddi_pairs"] = s.n_ddi_pairs;
  j["n_synergy_conditions"] = s.n_synergy_conditions;
  j["meds_per_rule"] = s.meds_per_rule;
  j["meds_per_synergy_rule"] = s.meds_per_synergy_rule;
  j["n_shared_procs"] = s.n_shared_procs;
  j["n_planted_ddi"] = s.n_planted_ddi;
  j["chronic_fraction"] = s.chronic_fraction;
  j["max_visits"] = s.max_visits;
  return j;
}

data::SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("data config must be a JSON object");
  data::SyntheticSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_patients") s.n_patients = v.get<std::size_t>();
      else if (key == "n_diag") s.n_diag = v.get<std::size_t>();
      else if (key == "n_proc") s.n_proc = v.get<std::size_t>();
      else if (key == "n_med") s.n_med = v.get<std::size_t>();
      else if (key == "avg_visits") s.avg_visits = v.get<double>();
      else if (key == "n_latent_conditions") s.n_latent_conditions = v.get<std::size_t>();
      else if (key == "effect_strength") s.effect_strength = v.get<double>();
      else if (key == "noise_rate") s.noise_rate = v.get<double>();
      else if (key == "n_ddi_pairs") s.n_ddi_pairs = v.get<std::size_t>();
      else if (key == "n_synergy_conditions") s.n_synergy_conditions = v.get<std::size_t>();
      else if (key == "meds_per_rule") s.meds_per_rule = v.get<std::size_t>();
      else if (key == "meds_per_synergy_rule") s.meds_per_synergy_rule = v.get<std::size_t>();
      else if (key == "n_shared_procs") s.n_shared_procs = v.get<std::size_t>();
      else if (key == "n_planted_ddi") s.n_planted_ddi = v.get<std::size_t>();
      else if (key == "chronic_fraction") s.chronic_fraction = v.get<double>();
      else if (key == "max_visits") s.max_visits = v.get<std::size_t>();
      else throw ConfigError("unknown data config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data config: ") + e.what());
  }
  return s;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "data") {
      cfg.data = synthetic_spec_from_json(v);
    } else if (key == "model") {
      cfg.model = model::model_config_from_json(v);
    } else if (key == "train") {
      cfg.train = training::train_config_from_json(v);
    } else {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  cfg.data.seed = cfg.seed;
  cfg.data.validate();
  return cfg;
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["data"] = synthetic_spec_to_json(cfg.data);
  j["model"] = model::to_json(cfg.model);
  j["train"] = training::to_json(cfg.train);
  return j;
}

ExperimentConfig load_config(const std::optional<fs::path>& path) {
  if (!path) {
    ExperimentConfig cfg;
    cfg.data.seed = cfg.seed;
    return cfg;
  }
  nlohmann::json j;
  try {
    j = read_json(*path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

std::string config_digest(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("seed");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

nlohmann::ordered_json provenance(const ExperimentConfig& cfg) {
  return {{"config_digest", config_digest(cfg)}, {"seed", cfg.seed}};
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

GeneratedData generate(const ExperimentConfig& cfg) {
  auto spec = cfg.data;
  spec.seed = cfg.seed;
  auto cohort = data::generate_synthetic(spec);
  auto splits = data::split_dataset(cohort.dataset.records, derive_seed(cfg.seed, "split"));
  GeneratedData out;
  out.bundle = {cohort.dataset.vocab, std::move(splits.train), std::move(splits.val),
                std::move(splits.test), std::move(cohort.ddi)};
  out.tau_true = std::move(cohort.tau_true);
  out.truth = std::move(cohort.truth);
  return out;
}

void write_generated(const GeneratedData& gen, const ExperimentConfig& cfg, const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
  const auto& b = gen.bundle;
  data::save_dataset(out / "train.jsonl", {b.vocab, b.train});
  data::save_dataset(out / "val.jsonl", {b.vocab, b.val});
  data::save_dataset(out / "test.jsonl", {b.vocab, b.test});
  data::save_ddi(out / "ddi.json", b.ddi);
  data::save_effects_csv(out / "tau_true.csv", gen.tau_true);
  write_json(out / "rules.json", data::ground_truth_to_json(gen.truth));
  auto manifest = provenance(cfg);
  manifest["config"] = to_json(cfg);
  manifest["files"] = {"train.jsonl", "val.jsonl", "test.jsonl", "ddi.json", "tau_true.csv",
                       "rules.json"};
  manifest["n_patients"] = {{"train", b.train.size()}, {"val", b.val.size()}, {"test", b.test.size()}};
  write_json(out / "manifest.json", manifest);
}

DataBundle load_bundle(const fs::path& dir, const std::optional<fs::path>& ddi) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a data directory");
  auto train = data::load_dataset(dir / "train.jsonl");
  auto val = data::load_dataset(dir / "val.jsonl");
  if (!(val.vocab == train.vocab)) throw DataError("val.jsonl vocabulary differs from train.jsonl");
  DataBundle b{train.vocab, std::move(train.records), std::move(val.records), {}, {}};
  if (fs::exists(dir / "test.jsonl")) {
    auto test = data::load_dataset(dir / "test.jsonl");
    if (!(test.vocab == b.vocab)) throw DataError("test.jsonl vocabulary differs from train.jsonl");
    b.test = std::move(test.records);
  }
  b.ddi = data::load_ddi(ddi ? *ddi : dir / "ddi.json");
  if (b.ddi.n_med() != b.vocab.n_med) {
    throw ConfigError("DDI matrix covers " + std::to_string(b.ddi.n_med()) +
                      " medications but the vocabulary has " + std::to_string(b.vocab.n_med));
  }
  return b;
}

bool requires_tau(model::Variant v) { return model::uses_cwg(v); }

namespace {

template <typename T>
RunResult run_typed(const ExperimentConfig& cfg, const DataBundle& b,
                    const model::EntityEffects& effects, model::Variant variant,
                    std::uint64_t seed, const std::optional<fs::path>& save_dir,
                    const training::EpochCallback& on_epoch) {
  auto mcfg = cfg.model;
  mcfg.variant = variant;
  training::TrainInputs in{b.vocab, b.train, b.val, effects, b.ddi, seed};
  auto trained = training::train<T>(mcfg, cfg.train, in, on_epoch);
  RunResult out{std::move(trained.log), {}};
  if (!b.test.empty()) {
    std::vector<eval::VisitPrediction> flat;
    for (auto& patient : eval::predict_records(trained.model, b.test)) {
      for (auto& v : patient) flat.push_back(std::move(v));
    }
    out.test = eval::summarize(flat, b.ddi);
  }
  if (save_dir) {
    std::error_code ec;
    fs::create_directories(*save_dir, ec);
    if (ec) throw DataError("cannot create " + save_dir->string() + ": " + ec.message());
    auto extra = provenance(cfg);
    extra["seed"] = seed;
    trained.model.save(*save_dir, extra);
  }
  return out;
}

}  // namespace

RunResult train_and_evaluate(const ExperimentConfig& cfg, const DataBundle& bundle,
                             const data::CausalEffectMatrix& tau, model::Variant variant,
                             std::uint64_t seed, const std::optional<fs::path>& save_dir,
                    const training::EpochCallback& on_epoch) {
  data::check_effects_shape(tau, bundle.vocab);
  const auto med_tau = data::estimate_med_transitions(bundle.train, bundle.vocab);
  const auto effects = model::aggregate_entity_effects(tau, &med_tau, bundle.vocab);
  if (cfg.train.precision == "float64") {
    return run_typed<double>(cfg, bundle, effects, variant, seed, save_dir, on_epoch);
  }
  return run_typed<float>(cfg, bundle, effects, variant, seed, save_dir, on_epoch);
}

data::CausalEffectMatrix shuffle_rows(const data::CausalEffectMatrix& tau, std::uint64_t seed) {
  std::vector<std::size_t> order(tau.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  data::CausalEffectMatrix out(tau.rows(), tau.cols());
  for (std::size_t r = 0; r < tau.rows(); ++r) {
    for (std::size_t c = 0; c < tau.cols(); ++c) out.at(r, c) = tau.at(order[r], c);
  }
  return out;
}

namespace {

constexpr model::Variant kAllVariants[] = {model::Variant::kFull, model::Variant::kNoCwg,
                                           model::Variant::kNoCharm, model::Variant::kNone};

}  // namespace

AblationResult run_ablation(const ExperimentConfig& cfg, const DataBundle& bundle,
                            const data::CausalEffectMatrix& tau, std::size_t n_seeds) {
  if (n_seeds == 0) throw ConfigError("ablate needs at least one seed");
  if (bundle.test.empty()) throw DataError("ablate needs a test split");
  AblationResult out;
  out.n_seeds = n_seeds;
  for (std::size_t k = 0; k < n_seeds; ++k) {
    const auto seed = derive_seed(cfg.seed, "ablate", k);
    for (auto v : kAllVariants) {
      out.cells.push_back({v, k, train_and_evaluate(cfg, bundle, tau, v, seed)});
    }
  }
  return out;
}

nlohmann::ordered_json ablation_to_json(const AblationResult& result) {
  auto metric = [](const eval::MetricValues& m, int i) {
    const double vals[] = {m.jaccard, m.ddi, m.f1, m.prauc, m.avg_med};
    return vals[i];
  };
  const char* names[] = {"jaccard", "ddi", "f1", "prauc", "avg_med"};

  auto jaccard_of = [&](model::Variant v, std::size_t k) {
    for (const auto& c : result.cells) {
      if (c.variant == v && c.seed_index == k) return c.result.test.jaccard;
    }
    throw ConfigError("ablation result is missing a cell");
  };

  nlohmann::ordered_json j;
  j["n_seeds"] = result.n_seeds;
  j["variants"] = nlohmann::ordered_json::array();
  for (auto v : kAllVariants) {
    nlohmann::ordered_json block;
    block["variant"] = model::variant_name(v);
    std::vector<const eval::MetricValues*> runs;
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& c : result.cells) {
      if (c.variant != v) continue;
      runs.push_back(&c.result.test);
      auto row = eval::to_json(c.result.test);
      row["best_epoch"] = c.result.log.best_epoch;
      per_seed.push_back(std::move(row));
    }
    nlohmann::ordered_json mean, sd;
    for (int i = 0; i < 5; ++i) {
      double s = 0.0;
      for (const auto* m : runs) s += metric(*m, i);
      const double mu = s / static_cast<double>(runs.size());
      double ss = 0.0;
      for (const auto* m : runs) ss += (metric(*m, i) - mu) * (metric(*m, i) - mu);
      mean[names[i]] = mu;
      sd[names[i]] = runs.size() > 1 ? std::sqrt(ss / static_cast<double>(runs.size() - 1)) : 0.0;
    }
    block["mean"] = std::move(mean);
    block["std"] = std::move(sd);
    block["per_seed"] = std::move(per_seed);
    j["variants"].push_back(std::move(block));
  }

  using model::Variant;
  const std::pair<Variant, Variant> pairs[] = {{Variant::kFull, Variant::kNoCwg},
                                               {Variant::kFull, Variant::kNoCharm},
                                               {Variant::kNoCwg, Variant::kNone},
                                               {Variant::kNoCharm, Variant::kNone}};
  nlohmann::ordered_json ordering = nlohmann::ordered_json::array();
  for (const auto& [a, b] : pairs) {
    std::size_t wins = 0;
    for (std::size_t k = 0; k < result.n_seeds; ++k) wins += jaccard_of(a, k) >= jaccard_of(b, k);
    ordering.push_back({{"better", model::variant_name(a)},
                        {"worse", model::variant_name(b)},
                        {"seeds_holding", wins},
                        {"n_seeds", result.n_seeds}});
  }
  j["jaccard_ordering"] = std::move(ordering);
  return j;
}

}  // namespace cafemed::experiment
