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

#include "cafemed/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "cafemed/errors.hpp"
#include "cafemed/numerics/checkpoint.hpp"

namespace cafemed::model {

namespace {

constexpr std::array<const char*, kModalities> kModalityNames{"diag", "proc", "med"};

std::size_t vocab_size(const data::Vocabularies& v, std::size_t m) {
  return m == 0 ? v.n_diag : m == 1 ? v.n_proc : v.n_med;
}

const std::vector<data::Id>& visit_set(const data::Visit& v, std::size_t m) {
  return m == 0 ? v.diag : m == 1 ? v.proc : v.med;
}

template <typename T>
nn::CsrMatrix<T> dense_to_csr(const nn::Tensor<T>& dense) {
  const std::size_t n = dense.size(0);
  nn::CsrMatrix<T> A;
  A.n_rows = A.n_cols = n;
  A.row_ptr.assign(1, 0);
  auto v = dense.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (v[i * n + j] != T(0)) {
        A.col.push_back(j);
        A.value.push_back(v[i * n + j]);
      }
    }
    A.row_ptr.push_back(A.col.size());
  }
  return A;
}

template <typename T>
nn::Tensor<T> csr_to_dense(const nn::CsrMatrix<double>& A) {
  std::vector<T> v(A.n_rows * A.n_cols, T(0));
  for (std::size_t i = 0; i < A.n_rows; ++i)
    for (std::size_t p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
      v[i * A.n_cols + A.col[p]] = static_cast<T>(A.value[p]);
  return nn::Tensor<T>({A.n_rows, A.n_cols}, std::move(v));
}

template <typename T>
nn::Tensor<T> tau_buffer(const std::vector<double>& tau, std::size_t n, const char* modality) {
  if (tau.empty()) return nn::Tensor<T>::zeros({n, 1});
  if (tau.size() != n) {
    throw ConfigError(std::string("aggregated ") + modality + " effects have " +
                      std::to_string(tau.size()) + " entries, vocabulary has " +
                      std::to_string(n));
  }
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(tau[i])) throw NumericError("non-finite aggregated effect");
    v[i] = static_cast<T>(tau[i]);
  }
  return nn::Tensor<T>({n, 1}, std::move(v));
}

template <typename T>
nn::GruParams<T> init_gru(std::size_t d, Rng& rng) {
  nn::GruParams<T> g;
  for (auto* w : {&g.W_ir, &g.W_iz, &g.W_in, &g.W_hr, &g.W_hz, &g.W_hn})
    *w = nn::uniform_init<T>({d, d}, d, rng);
  for (auto* b : {&g.b_ir, &g.b_iz, &g.b_in, &g.b_hr, &g.b_hz, &g.b_hn})
    *b = nn::uniform_init<T>({d}, d, rng);
  return g;
}

template <typename T>
void append_gru(nn::ParamList<T>& list, const nn::GruParams<T>& g, const std::string& prefix) {
  const std::array<std::pair<const char*, const nn::Tensor<T>*>, 12> all{{
      {"W_ir", &g.W_ir}, {"W_iz", &g.W_iz}, {"W_in", &g.W_in},
      {"W_hr", &g.W_hr}, {"W_hz", &g.W_hz}, {"W_hn", &g.W_hn},
      {"b_ir", &g.b_ir}, {"b_iz", &g.b_iz}, {"b_in", &g.b_in},
      {"b_hr", &g.b_hr}, {"b_hz", &g.b_hz}, {"b_hn", &g.b_hn},
  }};
  for (const auto& [name, t] : all) list.push_back({prefix + "." + name, *t, name[0] == 'W'});
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCwg: return "no-cwg";
    case Variant::kNoCharm: return "no-charm";
    case Variant::kNone: return "none";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kFull, Variant::kNoCwg, Variant::kNoCharm, Variant::kNone}) {
    if (name == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected full, no-cwg, no-charm or none)");
}

void ModelConfig::validate() const {
  if (d == 0 || d % 4 != 0) throw ConfigError("model.d must be a positive multiple of 4");
  if (slots == 0) throw ConfigError("model.slots must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("model.alpha must be >= 0");
}

nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["d"] = cfg.d;
  j["slots"] = cfg.slots;
  j["dropout"] = cfg.dropout;
  j["variant"] = variant_name(cfg.variant);
  j["use_med_history_cwg"] = cfg.use_med_history_cwg;
  j["alpha"] = cfg.alpha;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "d") cfg.d = value.get<std::size_t>();
      else if (key == "slots") cfg.slots = value.get<std::size_t>();
      else if (key == "dropout") cfg.dropout = value.get<double>();
      else if (key == "variant") cfg.variant = parse_variant(value.get<std::string>());
      else if (key == "use_med_history_cwg") cfg.use_med_history_cwg = value.get<bool>();
      else if (key == "alpha") cfg.alpha = value.get<double>();
      else throw ConfigError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

HomoGraphs build_homo_graphs(std::span<const data::PatientRecord> train,
                             const data::Vocabularies& vocab) {
  std::size_t n_visits = 0;
  for (const auto& r : train) n_visits += r.visits.size();
  if (n_visits == 0) throw DataError("cannot build co-occurrence graphs from an empty split");

  HomoGraphs out;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::size_t n = vocab_size(vocab, m);
    std::vector<std::set<std::size_t>> nbr(n);
    for (std::size_t i = 0; i < n; ++i) nbr[i].insert(i);
    for (const auto& r : train)
      for (const auto& v : r.visits) {
        const auto& ids = visit_set(v, m);
        for (data::Id a : ids)
          for (data::Id b : ids) nbr[a].insert(static_cast<std::size_t>(b));
      }
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(nbr[i].size()));
    auto& A = out.adj[m];
    A.n_rows = A.n_cols = n;
    A.row_ptr.assign(1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j : nbr[i]) {
        A.col.push_back(j);
        A.value.push_back(inv_sqrt[i] * inv_sqrt[j]);
      }
      A.row_ptr.push_back(A.col.size());
    }
  }
  return out;
}

template <typename T>
nn::Tensor<T> homo_encode(const nn::CsrMatrix<T>& A, const nn::Tensor<T>& E,
                          const nn::Tensor<T>& W) {
  std::vector<std::int64_t> rows(A.n_rows);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<std::int64_t>(i);
  return nn::relu(nn::matmul(nn::sparse_rows_matmul(A, rows, E), W));
}

EntityEffects aggregate_entity_effects(const data::CausalEffectMatrix& tau,
                                       const data::CausalEffectMatrix* med_tau,
                                       const data::Vocabularies& vocab) {
  EntityEffects e;
  e.diag = cwg::aggregate_effects(tau, cwg::Modality::kDiag, vocab);
  e.proc = cwg::aggregate_effects(tau, cwg::Modality::kProc, vocab);
  if (med_tau) e.med = cwg::aggregate_effects(*med_tau, cwg::Modality::kMed, vocab);
  return e;
}

SlotLayout layout_visits(std::span<const data::Visit> visits, std::size_t slots) {
  SlotLayout L;
  L.n_visits = visits.size();
  L.slots = slots;
  for (auto& ids : L.ids) ids.assign(visits.size() * slots, nn::kPadIndex);
  for (std::size_t t = 0; t < visits.size(); ++t) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      if (m == 2 && t == 0) continue;
      const auto& set = m == 2 ? visits[t - 1].med : visit_set(visits[t], m);
      const std::size_t skip = set.size() > slots ? set.size() - slots : 0;
      for (std::size_t k = skip; k < set.size(); ++k) L.ids[m][t * slots + (k - skip)] = set[k];
    }
  }
  return L;
}

template <typename T>
Model<T>::Model(ModelConfig cfg, data::Vocabularies vocab, const HomoGraphs& graphs,
                const EntityEffects& effects, std::uint64_t seed)
    : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  const std::size_t d = cfg_.d, M = vocab_.n_med;
  if (vocab_.n_diag == 0 || vocab_.n_proc == 0 || M == 0) throw ConfigError("empty vocabulary");
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (graphs.adj[m].n_rows != vocab_size(vocab_, m)) {
      throw ConfigError(std::string(kModalityNames[m]) + " graph does not match the vocabulary");
    }
  }
  Rng rng(derive_seed(seed, "model-init"));
  for (std::size_t m = 0; m < kModalities; ++m) {
    p_.embedding[m] = nn::normal_init<T>({vocab_size(vocab_, m), d}, 1.0, rng);
    p_.homo_W[m] = nn::uniform_init<T>({d, d}, d, rng);
    p_.cwg[m] = cwg::CwgParams<T>::init(d, rng);
  }
  p_.charm = charm::CharmParams<T>::init(d, rng);
  for (std::size_t m = 0; m < kModalities; ++m) {
    p_.gru[m] = init_gru<T>(d, rng);
    p_.rho0[m] = nn::constant_param<T>({1}, T(0.5));
    p_.rho1[m] = nn::constant_param<T>({1}, T(0.5));
  }
  p_.query_W1 = nn::uniform_init<T>({6 * d, 2 * d}, 6 * d, rng);
  p_.query_b1 = nn::zeros_param<T>({2 * d});
  p_.query_W2 = nn::uniform_init<T>({2 * d, M}, 2 * d, rng);
  p_.query_b2 = nn::zeros_param<T>({M});

  tau_bar_[0] = tau_buffer<T>(effects.diag, vocab_.n_diag, "diag");
  tau_bar_[1] = tau_buffer<T>(effects.proc, vocab_.n_proc, "proc");
  tau_bar_[2] = tau_buffer<T>(cfg_.use_med_history_cwg ? effects.med : std::vector<double>{},
                              vocab_.n_med, "med");
  for (std::size_t m = 0; m < kModalities; ++m) graph_dense_[m] = csr_to_dense<T>(graphs.adj[m]);
  rebuild_graph_cache();
}

template <typename T>
void Model<T>::rebuild_graph_cache() {
  for (std::size_t m = 0; m < kModalities; ++m) graph_[m] = dense_to_csr(graph_dense_[m]);
}

template <typename T>
nn::ParamList<T> Model<T>::named_tensors() const {
  nn::ParamList<T> list;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::string mod = kModalityNames[m];
    list.push_back({"embedding." + mod, p_.embedding[m], true});
    list.push_back({"homo." + mod + ".W", p_.homo_W[m], true});
    p_.cwg[m].append_to(list, "cwg." + mod);
  }
  p_.charm.append_to(list, "charm");
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::string mod = kModalityNames[m];
    append_gru(list, p_.gru[m], "gru." + mod);
    list.push_back({"fusion." + mod + ".rho0", p_.rho0[m], false});
    list.push_back({"fusion." + mod + ".rho1", p_.rho1[m], false});
  }
  list.push_back({"query.W1", p_.query_W1, true});
  list.push_back({"query.b1", p_.query_b1, false});
  list.push_back({"query.W2", p_.query_W2, true});
  list.push_back({"query.b2", p_.query_b2, false});
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::string mod = kModalityNames[m];
    list.push_back({"buffer.tau_bar." + mod, tau_bar_[m], false, false});
    list.push_back({"buffer.graph." + mod, graph_dense_[m], false, false});
  }
  return list;
}

template <typename T>
std::array<nn::Tensor<T>, kModalities> Model<T>::encode_visits(std::span<const data::Visit> visits,
                                                               bool train,
                                                               Rng* dropout_rng) const {
  if (visits.empty()) throw DataError("patient has no visits");
  for (const auto& v : visits) {
    if (v.diag.empty() && v.proc.empty()) {
      throw DataError("visit has neither diagnoses nor procedures");
    }
  }
  const std::size_t T_ = visits.size(), L = cfg_.slots, d = cfg_.d;
  const SlotLayout layout = layout_visits(visits, L);

  // Mask and per-slot aggregated effects in [T, 1, 3, L] layout.
  std::vector<T> mask(T_ * kModalities * L, T(0)), tau_grid(T_ * kModalities * L, T(0));
  for (std::size_t t = 0; t < T_; ++t)
    for (std::size_t m = 0; m < kModalities; ++m)
      for (std::size_t w = 0; w < L; ++w) {
        const std::int64_t id = layout.ids[m][t * L + w];
        if (id == nn::kPadIndex) continue;
        const std::size_t at = (t * kModalities + m) * L + w;
        mask[at] = T(1);
        tau_grid[at] = tau_bar_[m][static_cast<std::size_t>(id)];
      }
  const nn::Tensor<T> mask_t({T_, 1, kModalities, L}, std::move(mask));

  std::vector<nn::Tensor<T>> rows;
  for (std::size_t m = 0; m < kModalities; ++m) {
    auto h = nn::gather_rows(p_.embedding[m], layout.ids[m]);  // [T*L, d]
    const bool modulate = uses_cwg(cfg_.variant) && (m < 2 || cfg_.use_med_history_cwg);
    if (modulate) {
      auto tau = nn::gather_rows(tau_bar_[m], layout.ids[m]);  // [T*L, 1]
      h = cwg::modulate(h, cwg::cwg_forward(tau, p_.cwg[m]), cfg_.alpha);
    }
    rows.push_back(nn::reshape(h, {T_, 1, L, d}));
  }
  auto X = nn::permute(nn::concat(rows, 1), {0, 3, 1, 2});  // [T, d, 3, L]

  std::vector<nn::Tensor<T>> e_charm;
  if (uses_charm(cfg_.variant)) {
    charm::CharmInput<T> in{X, mask_t, nn::Tensor<T>({T_, 1, kModalities, L}, std::move(tau_grid))};
    e_charm = charm::charm_forward(in, p_.charm).pooled;
  } else {
    e_charm = charm::masked_row_mean(X, mask_t);
  }

  std::array<nn::Tensor<T>, kModalities> out;
  for (std::size_t m = 0; m < kModalities; ++m) {
    std::vector<std::int64_t> ids;
    std::vector<T> pool;
    std::vector<std::size_t> owner;
    for (std::size_t t = 0; t < T_; ++t)
      for (std::size_t w = 0; w < L; ++w) {
        const std::int64_t id = layout.ids[m][t * L + w];
        if (id == nn::kPadIndex) continue;
        ids.push_back(id);
        owner.push_back(t);
      }
    nn::Tensor<T> e_homo;
    if (ids.empty()) {
      e_homo = nn::Tensor<T>::zeros({T_, d});
    } else {
      std::vector<T> counts(T_, T(0));
      for (std::size_t t : owner) counts[t] += T(1);
      pool.assign(T_ * ids.size(), T(0));
      for (std::size_t k = 0; k < ids.size(); ++k)
        pool[owner[k] * ids.size() + k] = T(1) / counts[owner[k]];
      auto enc = nn::relu(nn::matmul(nn::sparse_rows_matmul(graph_[m], ids, p_.embedding[m]),
                                     p_.homo_W[m]));
      e_homo = nn::matmul(nn::Tensor<T>({T_, ids.size()}, std::move(pool)), enc);
    }
    auto fused = nn::add(nn::mul(e_homo, p_.rho0[m]), nn::mul(e_charm[m], p_.rho1[m]));
    if (train && cfg_.dropout > 0.0) {
      if (!dropout_rng) throw ConfigError("training forward needs a dropout stream");
      fused = nn::dropout(fused, cfg_.dropout, true, *dropout_rng);
    }
    out[m] = fused;
  }
  return out;
}

template <typename T>
nn::Tensor<T> Model<T>::patient_state(std::span<const data::Visit> visits, bool train,
                                      Rng* dropout_rng) const {
  auto e = encode_visits(visits, train, dropout_rng);
  const std::size_t T_ = visits.size(), d = cfg_.d;
  std::array<nn::Tensor<T>, kModalities> hidden;
  for (std::size_t m = 0; m < kModalities; ++m) {
    auto h = nn::Tensor<T>::zeros({1, d});
    std::vector<nn::Tensor<T>> steps;
    for (std::size_t t = 0; t < T_; ++t) {
      h = nn::gru_cell(nn::slice(e[m], 0, t, 1), h, p_.gru[m]);
      steps.push_back(h);
    }
    hidden[m] = T_ == 1 ? steps.front() : nn::concat(steps, 0);
  }
  // Final hidden states followed by the final outputs, which coincide for a
  // single-layer GRU.
  return nn::concat<T>({hidden[0], hidden[1], hidden[2], hidden[0], hidden[1], hidden[2]}, 1);
}

template <typename T>
nn::Tensor<T> Model<T>::forward(std::span<const data::Visit> visits, bool train,
                                Rng* dropout_rng) const {
  auto z = patient_state(visits, train, dropout_rng);
  return nn::linear(nn::relu(nn::linear(z, p_.query_W1, p_.query_b1)), p_.query_W2, p_.query_b2);
}

template <typename T>
void Model<T>::save(const std::filesystem::path& dir, const nlohmann::ordered_json& extra) const {
  std::filesystem::create_directories(dir);
  const auto list = named_tensors();
  nn::save_checkpoint<T>(dir, list);
  nlohmann::ordered_json j;
  j["model"] = to_json(cfg_);
  j["vocab"] = {{"n_diag", vocab_.n_diag}, {"n_proc", vocab_.n_proc}, {"n_med", vocab_.n_med}};
  j["dtype"] = nn::dtype_name<T>();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream os(dir / "model_config.json", std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw ConfigError("cannot write " + (dir / "model_config.json").string());
}

template <typename T>
void Model<T>::load(const std::filesystem::path& dir) {
  auto list = named_tensors();
  nn::load_checkpoint<T>(dir, list);
  rebuild_graph_cache();
}

SavedModelInfo read_model_info(const std::filesystem::path& dir) {
  const auto path = dir / "model_config.json";
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  SavedModelInfo info;
  try {
    info.raw = nlohmann::json::parse(is);
    info.config = model_config_from_json(info.raw.at("model"));
    const auto& v = info.raw.at("vocab");
    info.vocab = {v.at("n_diag").get<std::size_t>(), v.at("n_proc").get<std::size_t>(),
                  v.at("n_med").get<std::size_t>()};
    info.dtype = info.raw.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return info;
}

template <typename T>
Model<T> load_model(const std::filesystem::path& dir) {
  const auto info = read_model_info(dir);
  if (info.dtype != nn::dtype_name<T>()) {
    throw ConfigError("checkpoint dtype " + info.dtype + " does not match " + nn::dtype_name<T>());
  }
  HomoGraphs identity;
  for (std::size_t m = 0; m < kModalities; ++m) {
    auto& A = identity.adj[m];
    A.n_rows = A.n_cols = vocab_size(info.vocab, m);
    for (std::size_t i = 0; i <= A.n_rows; ++i) A.row_ptr.push_back(i);
    for (std::size_t i = 0; i < A.n_rows; ++i) {
      A.col.push_back(i);
      A.value.push_back(1.0);
    }
  }
  Model<T> model(info.config, info.vocab, identity, {}, 0);
  model.load(dir);
  return model;
}

template <typename T>
std::vector<data::Id> predict(std::span<const T> scores, double threshold) {
  std::vector<data::Id> out;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double s = static_cast<double>(scores[j]);
    const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    if (p >= threshold) out.push_back(static_cast<data::Id>(j));
  }
  return out;
}

#define CAFEMED_INSTANTIATE_MODEL(T)                                                         \
  template nn::Tensor<T> homo_encode(const nn::CsrMatrix<T>&, const nn::Tensor<T>&,          \
                                     const nn::Tensor<T>&);                                   \
  template class Model<T>;                                                                   \
  template Model<T> load_model<T>(const std::filesystem::path&);                             \
  template std::vector<data::Id> predict(std::span<const T>, double);

CAFEMED_INSTANTIATE_MODEL(float)
CAFEMED_INSTANTIATE_MODEL(double)

#undef CAFEMED_INSTANTIATE_MODEL

}  // namespace cafemed::model
