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

#include "cafemed/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "cafemed/errors.hpp"
#include "cafemed/numerics/adam.hpp"
#include "cafemed/numerics/ops.hpp"

#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace cafemed::training {

namespace {

// Flush-to-zero and denormals-are-zero while training.
class DenormalGuard {
 public:
  DenormalGuard() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | _MM_FLUSH_ZERO_ON | _MM_DENORMALS_ZERO_ON);
#endif
  }
  ~DenormalGuard() {
#if defined(__SSE2__)
    _mm_setcsr(saved_);
#endif
  }
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (!(beta_ddi >= 0.0) || !std::isfinite(beta_ddi)) throw ConfigError("train.beta_ddi must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (patience > max_epochs) throw ConfigError("train.patience must not exceed train.max_epochs");
  if (precision != "float32" && precision != "float64") {
    throw ConfigError("train.precision must be float32 or float64");
  }
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["lr"] = cfg.lr;
  j["beta_ddi"] = cfg.beta_ddi;
  j["weight_decay"] = cfg.weight_decay;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  j["ddi_target"] = cfg.ddi_target;
  j["precision"] = cfg.precision;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "beta_ddi") cfg.beta_ddi = value.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
      else if (key == "max_epochs") cfg.max_epochs = value.get<std::size_t>();
      else if (key == "patience") cfg.patience = value.get<std::size_t>();
      else if (key == "ddi_target") cfg.ddi_target = value.get<double>();
      else if (key == "precision") cfg.precision = value.get<std::string>();
      else throw ConfigError("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename T>
nn::Tensor<T> bce_loss(const nn::Tensor<T>& logits, std::span<const T> targets) {
  return nn::bce_with_logits(logits, targets);
}

template <typename T>
nn::Tensor<T> ddi_adjacency(const data::DdiMatrix& ddi) {
  const std::size_t M = ddi.n_med();
  std::vector<T> v(M * M, T(0));
  for (auto [i, j] : ddi.pairs()) {
    v[static_cast<std::size_t>(i) * M + j] = T(1);
    v[static_cast<std::size_t>(j) * M + i] = T(1);
  }
  return nn::Tensor<T>({M, M}, std::move(v));
}

template <typename T>
nn::Tensor<T> ddi_loss(const nn::Tensor<T>& logits, const nn::Tensor<T>& adjacency) {
  const std::size_t M = adjacency.size(0);
  if (logits.dim() != 2 || logits.size(1) != M) {
    throw DimensionError("ddi_loss: logits " + nn::shape_str(logits.shape()) +
                         " do not match a " + std::to_string(M) + "-medication DDI matrix");
  }
  auto p = nn::sigmoid(logits);
  auto mass = nn::sum(nn::mul(p, nn::matmul(p, adjacency)));
  return nn::mul_scalar(mass, T(1) / static_cast<T>(M * M));
}

template <typename T>
nn::Tensor<T> visit_loss(const nn::Tensor<T>& logits, std::span<const T> targets,
                         const nn::Tensor<T>& adjacency, double beta) {
  auto bce = bce_loss(logits, targets);
  if (beta == 0.0) return bce;
  return nn::add(bce, nn::mul_scalar(ddi_loss(logits, adjacency), static_cast<T>(beta)));
}

template <typename T>
std::vector<T> multi_hot(std::span<const data::Visit> visits, std::size_t n_med) {
  std::vector<T> y(visits.size() * n_med, T(0));
  for (std::size_t t = 0; t < visits.size(); ++t)
    for (data::Id id : visits[t].med) y[t * n_med + static_cast<std::size_t>(id)] = T(1);
  return y;
}

template <typename T>
nn::Tensor<T> patient_loss(const nn::Tensor<T>& logits, std::span<const data::Visit> visits,
                           const nn::Tensor<T>& adjacency, double beta, LossCounters* counters) {
  const std::size_t n_visits = visits.size(), M = logits.size(1);
  const auto y = multi_hot<T>(visits, M);
  // The mean over all T*M labels times T is the sum of per-visit means.
  auto total = nn::mul_scalar(bce_loss<T>(logits, y), static_cast<T>(n_visits));
  if (beta == 0.0) return total;
  if (counters) ++counters->ddi_evaluations;
  return nn::add(total, nn::mul_scalar(ddi_loss(logits, adjacency), static_cast<T>(beta)));
}

nlohmann::ordered_json to_json(const TrainLog& log) {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : log.epochs) {
    nlohmann::ordered_json r;
    r["epoch"] = e.epoch;
    r["train_loss"] = e.train_loss;
    r["val_jaccard"] = e.val.jaccard;
    r["val_ddi_rate"] = e.val.ddi;
    r["val_f1"] = e.val.f1;
    r["val_prauc"] = e.val.prauc;
    r["val_avg_med"] = e.val.avg_med;
    r["ddi_above_target"] = e.ddi_above_target;
    j["epochs"].push_back(std::move(r));
  }
  j["best_epoch"] = log.best_epoch;
  j["best_val_jaccard"] = log.best_val_jaccard;
  j["ddi_loss_evaluations"] = log.ddi_loss_evaluations;
  return j;
}

nlohmann::ordered_json timing_to_json(const TrainLog& log) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : log.epochs) j.push_back({{"epoch", e.epoch}, {"wall_seconds", e.wall_seconds}});
  return j;
}

template <typename T>
TrainResult<T> train(const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                     const TrainInputs& in, const EpochCallback& on_epoch) {
  cfg.validate();
  DenormalGuard denormals;
  if (in.train.empty()) throw DataError("training split is empty");
  if (in.val.empty()) throw DataError("validation split is empty");
  if (cfg.beta_ddi > 0.0 && in.ddi.n_med() != in.vocab.n_med) {
    throw ConfigError("DDI matrix size does not match the medication vocabulary");
  }
  model::Model<T> model(model_cfg, in.vocab, model::build_homo_graphs(in.train, in.vocab),
                        in.effects, derive_seed(in.seed, "model"));
  auto params = model.named_tensors();
  nn::AdamOptions opts;
  opts.lr = cfg.lr;
  opts.weight_decay = cfg.weight_decay;
  nn::AdamState<T> adam{{}, {}, 0, opts};
  // Only read the interaction matrix when the objective uses it.
  const nn::Tensor<T> adjacency =
      cfg.beta_ddi > 0.0 ? ddi_adjacency<T>(in.ddi) : nn::Tensor<T>::zeros({1, 1});

  Rng shuffle_rng(derive_seed(in.seed, "shuffle"));
  Rng dropout_rng(derive_seed(in.seed, "dropout"));
  TrainLog log;
  LossCounters counters;
  std::vector<std::vector<T>> best;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(in.train.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const auto& rec = in.train[idx];
      nn::zero_grads<T>(params);
      auto logits = model.forward(rec.visits, true, &dropout_rng);
      auto loss = patient_loss(logits, rec.visits, adjacency, cfg.beta_ddi, &counters);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", patient " +
                           rec.patient_id);
      }
      loss.backward();
      nn::adam_step<T>(params, adam);
      for (const auto& p : params) {
        if (!p.trainable) continue;
        for (T v : p.tensor.data()) {
          if (!std::isfinite(v)) {
            throw NumericError("non-finite parameter " + p.name + " after the update at epoch " +
                               std::to_string(epoch) + ", patient " + rec.patient_id);
          }
        }
      }
      loss_sum += value;
    }

    std::vector<eval::VisitPrediction> visits;
    for (auto& p : eval::predict_records(model, in.val)) {
      visits.insert(visits.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(in.train.size());
    rec.val = eval::summarize(visits, in.ddi.n_med() == in.vocab.n_med
                                          ? in.ddi
                                          : data::DdiMatrix(in.vocab.n_med));
    rec.ddi_above_target = rec.val.ddi > cfg.ddi_target;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (log.best_epoch == 0 || rec.val.jaccard > log.best_val_jaccard) {
      log.best_epoch = epoch;
      log.best_val_jaccard = rec.val.jaccard;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) break;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    std::copy(best[i].begin(), best[i].end(), dst.begin());
  }
  log.ddi_loss_evaluations = counters.ddi_evaluations;
  return {std::move(model), std::move(log)};
}

#define CAFEMED_INSTANTIATE_TRAINING(T)                                                        \
  template nn::Tensor<T> bce_loss(const nn::Tensor<T>&, std::span<const T>);                  \
  template nn::Tensor<T> ddi_adjacency<T>(const data::DdiMatrix&);                             \
  template nn::Tensor<T> ddi_loss(const nn::Tensor<T>&, const nn::Tensor<T>&);                 \
  template nn::Tensor<T> visit_loss(const nn::Tensor<T>&, std::span<const T>,                  \
                                    const nn::Tensor<T>&, double);                             \
  template std::vector<T> multi_hot<T>(std::span<const data::Visit>, std::size_t);             \
  template nn::Tensor<T> patient_loss(const nn::Tensor<T>&, std::span<const data::Visit>,      \
                                      const nn::Tensor<T>&, double, LossCounters*);            \
  template struct TrainResult<T>;                                                              \
  template TrainResult<T> train<T>(const model::ModelConfig&, const TrainConfig&,              \
                                   const TrainInputs&, const EpochCallback&);

CAFEMED_INSTANTIATE_TRAINING(float)
CAFEMED_INSTANTIATE_TRAINING(double)

#undef CAFEMED_INSTANTIATE_TRAINING

}  // namespace cafemed::training
