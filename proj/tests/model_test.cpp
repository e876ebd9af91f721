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
#include <cmath>
#include <filesystem>
#include <vector>

#include "cafemed/data/effects.hpp"
#include "cafemed/data/synthetic.hpp"
#include "cafemed/errors.hpp"
#include "cafemed/model.hpp"
#include "cafemed/numerics/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cafemed;
using namespace cafemed::model;
using cafemed::testing::random_tensor;
using TD = nn::Tensor<double>;

namespace {

data::Vocabularies small_vocab() { return {5, 4, 6}; }

std::vector<data::PatientRecord> toy_records() {
  return {
      {"a", {{{0, 1}, {0}, {0, 2}}, {{2}, {1, 2}, {1, 3, 5}}}},
      {"b", {{{3, 4}, {3}, {4}}}},
      {"c", {{{1}, {}, {2, 3}}, {{0, 4}, {2}, {0}}, {{1, 2, 3}, {0, 1}, {5, 4}}}},
  };
}

std::vector<std::vector<double>> dense(const nn::CsrMatrix<double>& A) {
  std::vector<std::vector<double>> out(A.n_rows, std::vector<double>(A.n_cols, 0.0));
  for (std::size_t i = 0; i < A.n_rows; ++i)
    for (std::size_t p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) out[i][A.col[p]] = A.value[p];
  return out;
}

ModelConfig small_config(Variant v = Variant::kFull) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.slots = 4;
  cfg.variant = v;
  return cfg;
}

EntityEffects random_effects(const data::Vocabularies& vocab, Rng& rng) {
  EntityEffects e;
  for (std::size_t i = 0; i < vocab.n_diag; ++i) e.diag.push_back(rng.uniform(-0.5, 0.5));
  for (std::size_t i = 0; i < vocab.n_proc; ++i) e.proc.push_back(rng.uniform(-0.5, 0.5));
  for (std::size_t i = 0; i < vocab.n_med; ++i) e.med.push_back(rng.uniform(-0.5, 0.5));
  return e;
}

template <typename T>
bool bit_equal(const nn::Tensor<T>& a, const nn::Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("build_homo_graphs: single visit, isolated entities and pairwise scan oracle") {
  data::Vocabularies vocab{3, 2, 2};
  std::vector<data::PatientRecord> one{{"x", {{{0, 1}, {0}, {1}}}}};
  auto g = build_homo_graphs(one, vocab);
  auto D = dense(g.adj[0]);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK((D[i][j] != 0.0) == ((i < 2 && j < 2) || i == j));
  CHECK(D[2][2] == 1.0);
  CHECK(D[0][1] == doctest::Approx(0.5));
  CHECK(dense(g.adj[1])[1][1] == 1.0);

  // 20 random visits against a brute-force dense construction.
  Rng rng(12);
  data::Vocabularies big{9, 7, 8};
  std::vector<data::PatientRecord> corpus(4);
  for (auto& r : corpus)
    for (int t = 0; t < 5; ++t) {
      data::Visit v;
      for (data::Id i = 0; i < 9; ++i) if (rng.bernoulli(0.3)) v.diag.push_back(i);
      for (data::Id i = 0; i < 7; ++i) if (rng.bernoulli(0.3)) v.proc.push_back(i);
      for (data::Id i = 0; i < 8; ++i) if (rng.bernoulli(0.3)) v.med.push_back(i);
      r.visits.push_back(v);
    }
  auto graphs = build_homo_graphs(corpus, big);
  const std::array<std::size_t, 3> sizes{9, 7, 8};
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t n = sizes[m];
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) A[i][i] = 1.0;
    for (const auto& r : corpus)
      for (const auto& v : r.visits) {
        const auto& s = m == 0 ? v.diag : m == 1 ? v.proc : v.med;
        for (std::size_t a = 0; a < s.size(); ++a)
          for (std::size_t b = 0; b < s.size(); ++b) A[s[a]][s[b]] = 1.0;
      }
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) deg[i] += A[i][j];
    auto got = dense(graphs.adj[m]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(got[i][j] == doctest::Approx(A[i][j] / std::sqrt(deg[i] * deg[j])).epsilon(1e-14));
        CHECK(got[i][j] == got[j][i]);
        CHECK(got[i][j] >= 0.0);
      }
  }

  CHECK_THROWS_AS(build_homo_graphs(std::vector<data::PatientRecord>{}, big), DataError);
}

TEST_CASE("homo_encode: identity graph, zero weight and matmul oracle") {
  Rng rng(2);
  nn::CsrMatrix<double> I{4, 4, {0, 1, 2, 3, 4}, {0, 1, 2, 3}, {1, 1, 1, 1}};
  auto E = random_tensor({4, 3}, rng);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto r = homo_encode(I, E, TD({3, 3}, eye));
  for (std::size_t i = 0; i < 12; ++i) CHECK(r[i] == std::max(0.0, E[i]));
  auto z = homo_encode(I, E, TD::zeros({3, 3}));
  for (double v : z.data()) CHECK(v == 0.0);

  // Path graph 0-1-2-3 with self-loops.
  std::vector<data::PatientRecord> recs{{"p", {{{0, 1}, {0}, {0}}, {{1, 2}, {0}, {0}}, {{2, 3}, {0}, {0}}}}};
  auto g = build_homo_graphs(recs, {4, 1, 1});
  auto W = random_tensor({3, 3}, rng);
  auto out = homo_encode(g.adj[0], E, W);
  auto A = dense(g.adj[0]);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t l = 0; l < 3; ++l) s += A[i][j] * E[j * 3 + l] * W[l * 3 + k];
      CHECK(out[i * 3 + k] == doctest::Approx(std::max(0.0, s)).epsilon(1e-13));
    }
}

TEST_CASE("layout_visits: slot cap keeps the most recent ids and shifts medication history") {
  std::vector<data::Visit> visits{{{0, 1, 2, 3, 4}, {1}, {7, 8}}, {{2}, {}, {3}}};
  auto L = layout_visits(visits, 3);
  CHECK(L.ids[0] == std::vector<std::int64_t>{2, 3, 4, 2, -1, -1});
  CHECK(L.ids[1] == std::vector<std::int64_t>{1, -1, -1, -1, -1, -1});
  CHECK(L.ids[2] == std::vector<std::int64_t>{-1, -1, -1, 7, 8, -1});
}

TEST_CASE("encode_visits: homogeneous endpoint and empty first-visit history") {
  auto vocab = small_vocab();
  auto recs = toy_records();
  auto graphs = build_homo_graphs(recs, vocab);
  Rng rng(3);
  Model<double> m(small_config(), vocab, graphs, random_effects(vocab, rng), 5);
  auto& p = m.params();
  for (std::size_t k = 0; k < 3; ++k) {
    p.rho0[k] = TD::full({1}, 1.0);
    p.rho1[k] = TD::zeros({1});
  }
  const auto& visits = recs[2].visits;
  auto e = m.encode_visits(visits, false, nullptr);
  auto layout = layout_visits(visits, 4);
  for (std::size_t mod = 0; mod < 3; ++mod) {
    nn::CsrMatrix<double> A = graphs.adj[mod];
    auto table = homo_encode(A, p.embedding[mod], p.homo_W[mod]);
    for (std::size_t t = 0; t < visits.size(); ++t) {
      std::vector<double> want(8, 0.0);
      double n = 0;
      for (std::size_t w = 0; w < 4; ++w) {
        const auto id = layout.ids[mod][t * 4 + w];
        if (id < 0) continue;
        n += 1;
        for (std::size_t k = 0; k < 8; ++k) want[k] += table[id * 8 + k];
      }
      for (std::size_t k = 0; k < 8; ++k)
        CHECK(e[mod][t * 8 + k] == doctest::Approx(n > 0 ? want[k] / n : 0.0).epsilon(1e-12));
    }
  }

  // At the first visit both medication paths are empty, whatever the fusion weights.
  for (std::size_t k = 0; k < 3; ++k) {
    p.rho0[k] = TD::full({1}, 0.7);
    p.rho1[k] = TD::full({1}, 1.3);
  }
  auto first = m.encode_visits(visits, false, nullptr);
  for (std::size_t k = 0; k < 8; ++k) CHECK(first[2][k] == 0.0);

  std::vector<data::Visit> bad{{{}, {}, {1}}};
  CHECK_THROWS_AS(m.encode_visits(bad, false, nullptr), DataError);
}

TEST_CASE("variants: gating is structural and the double ablation equals pooling with alpha 0") {
  auto vocab = small_vocab();
  auto recs = toy_records();
  auto graphs = build_homo_graphs(recs, vocab);
  Rng rng(4);
  const auto effects = random_effects(vocab, rng);

  auto cfg_none = small_config(Variant::kNone);
  auto cfg_pool = small_config(Variant::kNoCharm);
  cfg_pool.alpha = 0.0;
  Model<double> none(cfg_none, vocab, graphs, effects, 9);
  Model<double> pooled(cfg_pool, vocab, graphs, effects, 9);
  for (const auto& r : recs) CHECK(bit_equal(none.forward(r.visits), pooled.forward(r.visits)));

  auto cfg_full = small_config(Variant::kFull);
  cfg_full.alpha = 0.0;
  Model<double> full0(cfg_full, vocab, graphs, effects, 9);
  Model<double> nocwg(small_config(Variant::kNoCwg), vocab, graphs, effects, 9);
  for (const auto& r : recs) CHECK(bit_equal(full0.forward(r.visits), nocwg.forward(r.visits)));

  auto loss = nn::sum(nocwg.forward(recs[2].visits));
  loss.backward();
  for (const auto& c : nocwg.params().cwg)
    for (const auto* t : {&c.W1, &c.b1, &c.W2, &c.b2}) CHECK_FALSE(t->has_grad());
  CHECK(nocwg.params().embedding[0].has_grad());

  Model<double> nocharm(small_config(Variant::kNoCharm), vocab, graphs, effects, 9);
  nn::sum(nocharm.forward(recs[2].visits)).backward();
  CHECK_FALSE(nocharm.params().charm.conv1_k.has_grad());
  CHECK(nocharm.params().cwg[0].W1.has_grad());

  Model<double> full(small_config(), vocab, graphs, effects, 9);
  nn::sum(full.forward(recs[2].visits)).backward();
  CHECK(full.params().charm.conv1_k.has_grad());
  CHECK(full.params().cwg[0].W1.has_grad());
}

TEST_CASE("forward: representation width, duplicated halves and finite logits") {
  data::SyntheticSpec spec;
  spec.n_patients = 100;
  auto cohort = data::generate_synthetic(spec);
  const auto& vocab = cohort.dataset.vocab;
  auto graphs = build_homo_graphs(cohort.dataset.records, vocab);
  auto tau = data::estimate_effects(cohort.dataset.records, vocab);
  auto med = data::estimate_med_transitions(cohort.dataset.records, vocab);
  ModelConfig cfg;
  Model<float> m(cfg, vocab, graphs, aggregate_entity_effects(tau, &med, vocab), 1);

  const auto& first = cohort.dataset.records[0].visits;
  auto z = m.patient_state(std::span(first).first(1));
  CHECK(z.shape() == nn::Shape{1, 384});
  for (std::size_t k = 0; k < 192; ++k) CHECK(z[k] == z[192 + k]);

  std::size_t bad = 0, rows = 0;
  for (const auto& r : cohort.dataset.records) {
    auto logits = m.forward(r.visits);
    CHECK(logits.shape() == nn::Shape{r.visits.size(), vocab.n_med});
    rows += logits.size(0);
    for (float v : logits.data()) bad += std::isfinite(v) ? 0 : 1;
    auto state = m.patient_state(r.visits);
    for (std::size_t t = 0; t < r.visits.size(); ++t)
      for (std::size_t k = 0; k < 192; ++k) bad += state[t * 384 + k] == state[t * 384 + 192 + k] ? 0 : 1;
  }
  CHECK(bad == 0);
  CHECK(rows >= 100);
}

TEST_CASE("forward: causal in time, visit-order sensitive and deterministic") {
  auto vocab = small_vocab();
  auto recs = toy_records();
  auto graphs = build_homo_graphs(recs, vocab);
  Rng rng(6);
  const auto effects = random_effects(vocab, rng);
  Model<double> a(small_config(), vocab, graphs, effects, 17);
  Model<double> b(small_config(), vocab, graphs, effects, 17);
  const auto& visits = recs[2].visits;
  auto full = a.forward(visits);
  CHECK(bit_equal(full, b.forward(visits)));

  // Row t depends only on visits up to t.
  auto prefix = a.forward(std::span(visits).first(2));
  for (std::size_t i = 0; i < prefix.numel(); ++i) CHECK(prefix[i] == full[i]);

  std::vector<data::Visit> two{{{0}, {1}, {2}}, {{3}, {0}, {4}}};
  std::vector<data::Visit> swapped{two[1], two[0]};
  auto x = a.forward(two), y = a.forward(swapped);
  double diff = 0;
  for (std::size_t j = 0; j < vocab.n_med; ++j) diff += std::abs(x[vocab.n_med + j] - y[vocab.n_med + j]);
  CHECK(diff > 1e-6);

  Rng d1(1), d2(1);
  CHECK(bit_equal(a.forward(visits, true, &d1), a.forward(visits, true, &d2)));
  CHECK_THROWS_AS(a.forward(visits, true, nullptr), ConfigError);
}

TEST_CASE("model checkpoint: save and load reproduce logits and reject mismatches") {
  auto vocab = small_vocab();
  auto recs = toy_records();
  auto graphs = build_homo_graphs(recs, vocab);
  Rng rng(7);
  Model<float> m(small_config(), vocab, graphs, random_effects(vocab, rng), 3);
  const auto dir = std::filesystem::temp_directory_path() / "cafemed_model_ckpt";
  std::filesystem::remove_all(dir);
  m.save(dir, {{"seed", 3}});
  auto info = read_model_info(dir);
  CHECK(info.dtype == "float32");
  CHECK(info.vocab == vocab);
  CHECK(info.raw["seed"] == 3);
  auto back = load_model<float>(dir);
  for (const auto& r : recs) CHECK(bit_equal(m.forward(r.visits), back.forward(r.visits)));
  CHECK_THROWS_AS(load_model<double>(dir), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("predict: inclusive boundary, saturation and monotone threshold sweep") {
  std::vector<double> zeros(4, 0.0);
  CHECK(predict<double>(zeros).size() == 4);
  std::vector<double> two{-10.0, 10.0};
  CHECK(predict<double>(two) == std::vector<data::Id>{1});

  Rng rng(8);
  std::vector<double> s(50);
  for (auto& v : s) v = 3.0 * rng.normal();
  std::vector<data::Id> prev = predict<double>(s, 0.0);
  CHECK(prev.size() == 50);
  for (double th = 0.05; th <= 1.0; th += 0.05) {
    auto cur = predict<double>(s, th);
    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }
}

TEST_CASE("model config: strict json and variant names") {
  CHECK(parse_variant("no-charm") == Variant::kNoCharm);
  CHECK_THROWS_AS(parse_variant("w/o"), ConfigError);
  auto cfg = model_config_from_json(nlohmann::json{{"d", 16}, {"variant", "none"}});
  CHECK(cfg.d == 16);
  CHECK(cfg.variant == Variant::kNone);
  CHECK(cfg.dropout == 0.7);
  CHECK(model_config_from_json(to_json(cfg)).variant == Variant::kNone);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"dd", 16}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"d", 10}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"d", "x"}}), ConfigError);
}
