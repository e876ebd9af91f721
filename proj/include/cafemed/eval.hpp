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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cafemed/data/ehr.hpp"
#include "cafemed/model.hpp"

// Set metrics for medication recommendation and their bootstrap summaries.
namespace cafemed::eval {

// Sets are given as ID lists without duplicates, in any order.
double jaccard(std::span<const data::Id> pred, std::span<const data::Id> truth);
double ddi_rate(std::span<const data::Id> pred, const data::DdiMatrix& ddi);
double f1(std::span<const data::Id> pred, std::span<const data::Id> truth);
// Average precision over the ranking by descending probability, ties by
// ascending ID. Requires at least one positive.
double prauc(std::span<const double> probabilities, std::span<const data::Id> truth);

struct VisitPrediction {
  std::vector<data::Id> pred;
  std::vector<data::Id> truth;
  std::vector<double> probabilities;
};

struct MetricValues {
  double jaccard = 0.0;
  double ddi = 0.0;
  double f1 = 0.0;
  double prauc = 0.0;
  double avg_med = 0.0;
};

// Per-visit means; PRAUC skips visits without positives.
MetricValues summarize(std::span<const VisitPrediction> visits, const data::DdiMatrix& ddi);

// Teacher-forced predictions for every visit of every record, grouped by record.
template <typename T>
std::vector<std::vector<VisitPrediction>> predict_records(const model::Model<T>& model,
                                                          std::span<const data::PatientRecord> records,
                                                          double threshold = 0.5);

struct MetricsReport {
  std::vector<MetricValues> rounds;
  MetricValues mean;
  MetricValues std;  // sample standard deviation over rounds
};

// Each round resamples patients with replacement and averages over all of
// their visits.
MetricsReport bootstrap_report(std::span<const std::vector<VisitPrediction>> by_patient,
                               const data::DdiMatrix& ddi, std::size_t rounds,
                               std::uint64_t seed);

template <typename T>
MetricsReport evaluate(const model::Model<T>& model, const data::Dataset& dataset,
                       const data::DdiMatrix& ddi, std::size_t rounds, std::uint64_t seed);

nlohmann::ordered_json to_json(const MetricValues& m);
nlohmann::ordered_json to_json(const MetricsReport& report, const std::string& config_digest);

}  // namespace cafemed::eval
