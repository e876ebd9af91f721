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

#include "cafemed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cafemed/data/split.hpp"
#include "cafemed/errors.hpp"

namespace cafemed::eval {

namespace {

std::vector<data::Id> sorted(std::span<const data::Id> s) {
  std::vector<data::Id> v(s.begin(), s.end());
  std::sort(v.begin(), v.end());
  return v;
}

std::size_t overlap(std::span<const data::Id> a, std::span<const data::Id> b) {
  auto x = sorted(a), y = sorted(b);
  std::vector<data::Id> common;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(common));
  return common.size();
}

double sigmoid(double s) {
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

}  // namespace

double jaccard(std::span<const data::Id> pred, std::span<const data::Id> truth) {
  if (pred.empty() && truth.empty()) return 1.0;
  const std::size_t inter = overlap(pred, truth);
  return static_cast<double>(inter) / static_cast<double>(pred.size() + truth.size() - inter);
}

double ddi_rate(std::span<const data::Id> pred, const data::DdiMatrix& ddi) {
  if (pred.size() < 2) return 0.0;
  std::size_t hits = 0, pairs = 0;
  for (std::size_t a = 0; a < pred.size(); ++a)
    for (std::size_t b = a + 1; b < pred.size(); ++b) {
      ++pairs;
      if (ddi.interacts(pred[a], pred[b])) ++hits;
    }
  return static_cast<double>(hits) / static_cast<double>(pairs);
}

double f1(std::span<const data::Id> pred, std::span<const data::Id> truth) {
  if (pred.empty() && truth.empty()) return 1.0;
  if (pred.empty() || truth.empty()) return 0.0;
  const double inter = static_cast<double>(overlap(pred, truth));
  const double p = inter / static_cast<double>(pred.size());
  const double r = inter / static_cast<double>(truth.size());
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double prauc(std::span<const double> probabilities, std::span<const data::Id> truth) {
  if (truth.empty()) throw DataError("prauc needs at least one positive label");
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probabilities[a] > probabilities[b];
  });
  std::vector<char> positive(probabilities.size(), 0);
  for (data::Id id : truth) positive.at(static_cast<std::size_t>(id)) = 1;
  const double n_pos = static_cast<double>(truth.size());
  double hits = 0.0, ap = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!positive[order[k]]) continue;
    hits += 1.0;
    ap += (hits / static_cast<double>(k + 1)) * (1.0 / n_pos);
  }
  return ap;
}

MetricValues summarize(std::span<const VisitPrediction> visits, const data::DdiMatrix& ddi) {
  MetricValues m;
  if (visits.empty()) return m;
  std::size_t n_prauc = 0;
  for (const auto& v : visits) {
    m.jaccard += jaccard(v.pred, v.truth);
    m.ddi += ddi_rate(v.pred, ddi);
    m.f1 += f1(v.pred, v.truth);
    m.avg_med += static_cast<double>(v.pred.size());
    if (!v.truth.empty()) {
      m.prauc += prauc(v.probabilities, v.truth);
      ++n_prauc;
    }
  }
  const double n = static_cast<double>(visits.size());
  m.jaccard /= n;
  m.ddi /= n;
  m.f1 /= n;
  m.avg_med /= n;
  m.prauc = n_prauc ? m.prauc / static_cast<double>(n_prauc) : 0.0;
  return m;
}

template <typename T>
std::vector<std::vector<VisitPrediction>> predict_records(const model::Model<T>& model,
                                                          std::span<const data::PatientRecord> records,
                                                          double threshold) {
  nn::NoGradGuard no_grad;
  const std::size_t M = model.vocab().n_med;
  std::vector<std::vector<VisitPrediction>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto logits = model.forward(r.visits);
    std::vector<VisitPrediction> visits;
    for (std::size_t t = 0; t < r.visits.size(); ++t) {
      auto row = logits.data().subspan(t * M, M);
      VisitPrediction vp;
      vp.pred = model::predict<T>(row, threshold);
      vp.truth = r.visits[t].med;
      vp.probabilities.resize(M);
      for (std::size_t j = 0; j < M; ++j) vp.probabilities[j] = sigmoid(static_cast<double>(row[j]));
      visits.push_back(std::move(vp));
    }
    out.push_back(std::move(visits));
  }
  return out;
}

MetricsReport bootstrap_report(std::span<const std::vector<VisitPrediction>> by_patient,
                               const data::DdiMatrix& ddi, std::size_t rounds,
                               std::uint64_t seed) {
  MetricsReport report;
  for (const auto& sample : data::bootstrap_samples(by_patient.size(), rounds, seed)) {
    std::vector<VisitPrediction> visits;
    for (std::size_t i : sample)
      visits.insert(visits.end(), by_patient[i].begin(), by_patient[i].end());
    report.rounds.push_back(summarize(visits, ddi));
  }
  const double n = static_cast<double>(report.rounds.size());
  auto fields = [](MetricValues& m) {
    return std::array<double*, 5>{&m.jaccard, &m.ddi, &m.f1, &m.prauc, &m.avg_med};
  };
  for (auto& r : report.rounds) {
    auto src = fields(r), dst = fields(report.mean);
    for (std::size_t k = 0; k < 5; ++k) *dst[k] += *src[k] / n;
  }
  if (report.rounds.size() > 1) {
    for (auto& r : report.rounds) {
      auto src = fields(r), mu = fields(report.mean), sd = fields(report.std);
      for (std::size_t k = 0; k < 5; ++k) *sd[k] += (*src[k] - *mu[k]) * (*src[k] - *mu[k]);
    }
    for (double* v : fields(report.std)) *v = std::sqrt(*v / (n - 1.0));
  }
  return report;
}

template <typename T>
MetricsReport evaluate(const model::Model<T>& model, const data::Dataset& dataset,
                       const data::DdiMatrix& ddi, std::size_t rounds, std::uint64_t seed) {
  if (!(dataset.vocab == model.vocab())) {
    throw ConfigError("dataset vocabulary does not match the checkpoint");
  }
  if (ddi.n_med() != model.vocab().n_med) {
    throw ConfigError("DDI matrix size does not match the checkpoint");
  }
  auto preds = predict_records(model, dataset.records);
  return bootstrap_report(preds, ddi, rounds, seed);
}

nlohmann::ordered_json to_json(const MetricValues& m) {
  return {{"jaccard", m.jaccard}, {"ddi", m.ddi}, {"f1", m.f1}, {"prauc", m.prauc},
          {"avg_med", m.avg_med}};
}

nlohmann::ordered_json to_json(const MetricsReport& report, const std::string& config_digest) {
  nlohmann::ordered_json j;
  j["rounds"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rounds) j["rounds"].push_back(to_json(r));
  j["mean"] = to_json(report.mean);
  j["std"] = to_json(report.std);
  j["config_digest"] = config_digest;
  return j;
}

template std::vector<std::vector<VisitPrediction>> predict_records(
    const model::Model<float>&, std::span<const data::PatientRecord>, double);
template std::vector<std::vector<VisitPrediction>> predict_records(
    const model::Model<double>&, std::span<const data::PatientRecord>, double);
template MetricsReport evaluate(const model::Model<float>&, const data::Dataset&,
                                const data::DdiMatrix&, std::size_t, std::uint64_t);
template MetricsReport evaluate(const model::Model<double>&, const data::Dataset&,
                                const data::DdiMatrix&, std::size_t, std::uint64_t);

}  // namespace cafemed::eval
