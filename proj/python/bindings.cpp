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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cafemed/data/effects.hpp"
#include "cafemed/errors.hpp"
#include "cafemed/eval.hpp"
#include "cafemed/experiment.hpp"
#include "cafemed/gradcheck_suite.hpp"
#include "cafemed/rng.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace cafemed;

namespace {

// JSON crosses the boundary as text; the Python wrapper does the dict side.
experiment::ExperimentConfig parse_config(const std::string& text) {
  if (text.empty()) return experiment::load_config(std::nullopt);
  try {
    return experiment::config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

py::array_t<double> to_array(const data::CausalEffectMatrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) view(r, c) = m.at(r, c);
  return out;
}

data::DdiMatrix ddi_from_pairs(std::size_t n_med, const std::vector<std::pair<int, int>>& pairs) {
  data::DdiMatrix ddi(n_med);
  for (const auto& [a, b] : pairs) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n_med ||
        static_cast<std::size_t>(b) >= n_med) {
      throw DataError("DDI pair outside the medication vocabulary");
    }
    ddi.add_pair(a, b);
  }
  return ddi;
}

std::string train_cmd(const std::string& config, const fs::path& data_dir,
                      const std::optional<fs::path>& tau_path, const std::string& variant_name,
                      const fs::path& out) {
  auto cfg = parse_config(config);
  const auto variant = model::parse_variant(variant_name);
  if (experiment::requires_tau(variant) && !tau_path) {
    throw UsageError("variant " + variant_name + " needs an effect matrix");
  }
  auto bundle = experiment::load_bundle(data_dir);
  bundle.test.clear();
  const auto tau = tau_path ? data::load_effects_csv(*tau_path)
                            : data::estimate_effects(bundle.train, bundle.vocab);
  cfg.model.variant = variant;
  experiment::RunResult run;
  {
    py::gil_scoped_release release;
    run = experiment::train_and_evaluate(cfg, bundle, tau, variant, cfg.seed, out);
  }
  auto log = experiment::provenance(cfg);
  log["variant"] = model::variant_name(variant);
  const auto body = training::to_json(run.log);
  for (const auto& [k, v] : body.items()) log[k] = v;
  experiment::write_json(out / "train_log.json", log);
  return log.dump();
}

std::string evaluate_cmd(const fs::path& checkpoint, const fs::path& data_path,
                         const std::optional<fs::path>& ddi_path, std::size_t rounds,
                         std::optional<std::uint64_t> seed) {
  const auto info = model::read_model_info(checkpoint);
  const auto ds = data::load_dataset(data_path);
  const auto ddi = data::load_ddi(ddi_path ? *ddi_path : data_path.parent_path() / "ddi.json");
  if (!(info.vocab == ds.vocab)) throw ConfigError("checkpoint vocabulary does not match the data");
  const std::uint64_t s = seed ? *seed : info.raw.value("seed", std::uint64_t{42});
  eval::MetricsReport report;
  {
    py::gil_scoped_release release;
    if (info.dtype == "float64") {
      report = eval::evaluate(model::load_model<double>(checkpoint), ds, ddi, rounds,
                              derive_seed(s, "bootstrap"));
    } else {
      report = eval::evaluate(model::load_model<float>(checkpoint), ds, ddi, rounds,
                              derive_seed(s, "bootstrap"));
    }
  }
  auto j = eval::to_json(report, info.raw.value("config_digest", std::string{}));
  j["seed"] = s;
  return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "CafeMed medication recommendation core";

  auto base = py::register_exception<Error>(m, "CafeMedError", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<SpecError>(m, "SpecError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());

  m.def("jaccard", [](const std::vector<data::Id>& pred, const std::vector<data::Id>& truth) {
    return eval::jaccard(pred, truth);
  }, py::arg("pred"), py::arg("truth"));
  m.def("f1", [](const std::vector<data::Id>& pred, const std::vector<data::Id>& truth) {
    return eval::f1(pred, truth);
  }, py::arg("pred"), py::arg("truth"));
  m.def("ddi_rate", [](const std::vector<data::Id>& pred, std::size_t n_med,
                       const std::vector<std::pair<int, int>>& pairs) {
    return eval::ddi_rate(pred, ddi_from_pairs(n_med, pairs));
  }, py::arg("pred"), py::arg("n_med"), py::arg("pairs"));
  m.def("prauc", [](const std::vector<double>& prob, const std::vector<data::Id>& truth) {
    return eval::prauc(prob, truth);
  }, py::arg("probabilities"), py::arg("truth"));

  m.def("default_config", [] { return experiment::to_json(experiment::load_config(std::nullopt)).dump(); });
  m.def("normalize_config", [](const std::string& text) {
    return experiment::to_json(parse_config(text)).dump();
  });
  m.def("config_digest", [](const std::string& text) {
    return experiment::config_digest(parse_config(text));
  });

  m.def("gen_data", [](const std::string& config, const fs::path& out) {
    const auto cfg = parse_config(config);
    experiment::write_generated(experiment::generate(cfg), cfg, out);
    return experiment::config_digest(cfg);
  }, py::arg("config"), py::arg("out"));

  m.def("estimate_effects", [](const fs::path& path) {
    const auto ds = data::load_dataset(path);
    return to_array(data::estimate_effects(ds.records, ds.vocab));
  }, py::arg("path"));
  m.def("load_effects", [](const fs::path& path) { return to_array(data::load_effects_csv(path)); },
        py::arg("path"));

  m.def("train", &train_cmd, py::arg("config"), py::arg("data_dir"), py::arg("tau") = py::none(),
        py::arg("variant") = "full", py::arg("out"));
  m.def("evaluate", &evaluate_cmd, py::arg("checkpoint"), py::arg("data"),
        py::arg("ddi") = py::none(), py::arg("bootstrap") = 10, py::arg("seed") = py::none());

  m.def("gradcheck", [](const std::string& scope) {
    std::vector<py::dict> out;
    for (const auto& r : gradsuite::run(scope)) {
      py::dict d;
      d["scope"] = r.scope;
      d["passed"] = r.report.passed;
      d["max_rel_error"] = r.report.max_rel_error;
      d["worst"] = r.report.worst;
      d["n_checked"] = r.report.n_checked;
      out.push_back(std::move(d));
    }
    return out;
  }, py::arg("scope") = "all");
}
