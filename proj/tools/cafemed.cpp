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

// cafemed: data generation, training, evaluation, ablation and gradient checks.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cafemed/data/effects.hpp"
#include "cafemed/errors.hpp"
#include "cafemed/experiment.hpp"
#include "cafemed/gradcheck_suite.hpp"
#include "cafemed/rng.hpp"

namespace fs = std::filesystem;
using namespace cafemed;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Options {
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> config;
  fs::path data, out, checkpoint, report;
  std::optional<fs::path> tau, ddi;
  std::optional<std::string> variant;
  std::size_t bootstrap = 10;
  std::size_t seeds = 5;
  std::string scope = "all";
  bool inject_bug = false;
};

experiment::ExperimentConfig config_for(const Options& o) {
  auto cfg = experiment::load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.data.seed = *o.seed;
  }
  return cfg;
}

void print_epoch(const training::EpochRecord& e) {
  std::fprintf(stderr, "epoch %3zu  loss %.4f  val jaccard %.4f  ddi %.4f  f1 %.4f  (%.1fs)\n",
               e.epoch, e.train_loss, e.val.jaccard, e.val.ddi, e.val.f1, e.wall_seconds);
}

int cmd_gen_data(const Options& o) {
  const auto cfg = config_for(o);
  const auto gen = experiment::generate(cfg);
  experiment::write_generated(gen, cfg, o.out);
  std::printf("wrote %zu/%zu/%zu patients to %s (digest %s)\n", gen.bundle.train.size(),
              gen.bundle.val.size(), gen.bundle.test.size(), o.out.string().c_str(),
              experiment::config_digest(cfg).c_str());
  return kOk;
}

int cmd_estimate_effects(const Options& o) {
  const auto ds = data::load_dataset(o.data);
  data::save_effects_csv(o.out, data::estimate_effects(ds.records, ds.vocab));
  return kOk;
}

int cmd_train(const Options& o) {
  auto cfg = config_for(o);
  const auto variant = o.variant ? model::parse_variant(*o.variant) : cfg.model.variant;
  if (experiment::requires_tau(variant) && !o.tau) {
    throw UsageError(std::string("variant ") + model::variant_name(variant) + " needs --tau");
  }
  auto bundle = experiment::load_bundle(o.data, o.ddi);
  bundle.test.clear();
  const auto tau = o.tau ? data::load_effects_csv(*o.tau)
                         : data::estimate_effects(bundle.train, bundle.vocab);
  cfg.model.variant = variant;
  const auto run = experiment::train_and_evaluate(cfg, bundle, tau, variant, cfg.seed, o.out,
                                                  print_epoch);
  auto log = experiment::provenance(cfg);
  log["variant"] = model::variant_name(variant);
  log["tau_source"] = o.tau ? "file" : "estimated";
  const auto body = training::to_json(run.log);
  for (const auto& [k, v] : body.items()) log[k] = v;
  experiment::write_json(o.out / "train_log.json", log);
  auto timing = experiment::provenance(cfg);
  timing["epochs"] = training::timing_to_json(run.log);
  experiment::write_json(o.out / "timing.json", timing);
  std::printf("best epoch %zu, val jaccard %.4f, checkpoint in %s\n", run.log.best_epoch,
              run.log.best_val_jaccard, o.out.string().c_str());
  return kOk;
}

template <typename T>
eval::MetricsReport evaluate_typed(const Options& o, const data::Dataset& ds,
                                   const data::DdiMatrix& ddi, std::uint64_t seed) {
  const auto m = model::load_model<T>(o.checkpoint);
  return eval::evaluate(m, ds, ddi, o.bootstrap, derive_seed(seed, "bootstrap"));
}

int cmd_eval(const Options& o) {
  const auto info = model::read_model_info(o.checkpoint);
  const auto ds = data::load_dataset(o.data);
  const auto ddi = data::load_ddi(o.ddi ? *o.ddi : o.data.parent_path() / "ddi.json");
  if (!(info.vocab == ds.vocab)) {
    throw ConfigError("checkpoint vocabulary does not match " + o.data.string());
  }
  const std::string digest = info.raw.value("config_digest", std::string{});
  const std::uint64_t seed = o.seed ? *o.seed : info.raw.value("seed", std::uint64_t{42});
  const auto report = info.dtype == "float64" ? evaluate_typed<double>(o, ds, ddi, seed)
                                              : evaluate_typed<float>(o, ds, ddi, seed);
  auto j = eval::to_json(report, digest);
  j["seed"] = seed;
  if (o.report.has_parent_path()) fs::create_directories(o.report.parent_path());
  experiment::write_json(o.report, j);
  std::printf("jaccard %.4f +- %.4f  ddi %.4f  f1 %.4f  prauc %.4f  avg_med %.2f\n",
              report.mean.jaccard, report.std.jaccard, report.mean.ddi, report.mean.f1,
              report.mean.prauc, report.mean.avg_med);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const auto results = gradsuite::run(o.scope, o.inject_bug);
  const gradsuite::ScopeResult* failed = nullptr;
  for (const auto& r : results) {
    std::printf("%-9s %s  %s\n", r.scope.c_str(), r.report.passed ? "ok  " : "FAIL",
                r.report.message.c_str());
    if (!r.report.passed && !failed) failed = &r;
  }
  if (failed) {
    std::fprintf(stderr, "gradient check failed in scope %s at %s\n", failed->scope.c_str(),
                 failed->report.worst.c_str());
    return kNumeric;
  }
  return kOk;
}

int cmd_ablate(const Options& o) {
  const auto cfg = config_for(o);
  const auto bundle = experiment::load_bundle(o.data, o.ddi);
  const auto tau = o.tau ? data::load_effects_csv(*o.tau)
                         : data::estimate_effects(bundle.train, bundle.vocab);
  const auto result = experiment::run_ablation(cfg, bundle, tau, o.seeds);
  auto j = experiment::provenance(cfg);
  j["tau_source"] = o.tau ? "file" : "estimated";
  const auto body = experiment::ablation_to_json(result);
  for (const auto& [k, v] : body.items()) j[k] = v;
  fs::create_directories(o.out);
  experiment::write_json(o.out / "ablation.json", j);
  for (const auto& v : j["variants"]) {
    std::printf("%-9s jaccard %.4f +- %.4f  ddi %.4f\n", v["variant"].get<std::string>().c_str(),
                v["mean"]["jaccard"].get<double>(), v["std"]["jaccard"].get<double>(),
                v["mean"]["ddi"].get<double>());
  }
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"CafeMed medication recommendation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--seed", o.seed, "Override the configuration seed");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic cohort");
  gen->add_option("--config", o.config, "Experiment config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* est = app.add_subcommand("estimate-effects", "Frequency-contrast effect estimate");
  est->add_option("--data", o.data, "Dataset .jsonl")->required()->check(CLI::ExistingFile);
  est->add_option("--out", o.out, "Output CSV")->required();

  auto* tr = app.add_subcommand("train", "Train one model variant");
  tr->add_option("--config", o.config, "Experiment config JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "Directory written by gen-data")->required();
  tr->add_option("--tau", o.tau, "Entity effect CSV")->check(CLI::ExistingFile);
  tr->add_option("--ddi", o.ddi, "DDI JSON (default <data>/ddi.json)")->check(CLI::ExistingFile);
  tr->add_option("--variant", o.variant, "full | no-cwg | no-charm | none");
  tr->add_option("--out", o.out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Bootstrap evaluation of a checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "Run directory")->required();
  ev->add_option("--data", o.data, "Dataset .jsonl")->required()->check(CLI::ExistingFile);
  ev->add_option("--ddi", o.ddi, "DDI JSON (default next to --data)")->check(CLI::ExistingFile);
  ev->add_option("--bootstrap", o.bootstrap, "Bootstrap rounds")->check(CLI::PositiveNumber);
  ev->add_option("--report", o.report, "Output report.json")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--scope", o.scope, "all | numerics | cwg | charm | model | loss");
  gc->add_flag("--inject-bug", o.inject_bug, "Also check an op with a broken backward pass")
      ->group("");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate all variants over several seeds");
  ab->add_option("--config", o.config, "Experiment config JSON")->check(CLI::ExistingFile);
  ab->add_option("--data", o.data, "Directory written by gen-data")->required();
  ab->add_option("--tau", o.tau, "Entity effect CSV (default: estimated on train)")
      ->check(CLI::ExistingFile);
  ab->add_option("--ddi", o.ddi, "DDI JSON (default <data>/ddi.json)")->check(CLI::ExistingFile);
  ab->add_option("--seeds", o.seeds, "Seeds per variant")->check(CLI::PositiveNumber);
  ab->add_option("--out", o.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*est) return cmd_estimate_effects(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*gc) return cmd_gradcheck(o);
    if (*ab) return cmd_ablate(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
