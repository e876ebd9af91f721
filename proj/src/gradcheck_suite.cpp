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

#include "cafemed/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>

#include "cafemed/charm.hpp"
#include "cafemed/cwg.hpp"
#include "cafemed/errors.hpp"
#include "cafemed/model.hpp"
#include "cafemed/numerics/ops.hpp"
#include "cafemed/training.hpp"

namespace cafemed::gradsuite {

namespace {

using TD = nn::Tensor<double>;

TD randn(nn::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(nn::shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return TD(std::move(shape), std::move(v), true);
}

// Weighted sum of an output so every element contributes a distinct gradient.
TD probe_sum(const TD& out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.normal();
  return nn::sum(nn::mul(out, TD(out.shape(), std::move(w))));
}

struct Check {
  std::string name;
  std::vector<TD> inputs;
  std::vector<std::string> names;
  std::function<TD(std::vector<TD>&)> f;
};

void merge(nn::GradCheckReport& into, const nn::GradCheckReport& r, const std::string& check) {
  into.n_checked += r.n_checked;
  if (r.numeric_failure && !into.numeric_failure) {
    into.numeric_failure = true;
    into.worst = check + ":" + r.worst;
    into.message = check + ": " + r.message;
  }
  if (!into.numeric_failure && (into.worst.empty() || r.max_rel_error > into.max_rel_error)) {
    into.max_rel_error = r.max_rel_error;
    into.worst = check + ":" + r.worst;
  }
}

ScopeResult run_checks(const std::string& scope, std::vector<Check> checks) {
  ScopeResult out{scope, {}};
  for (auto& c : checks) {
    auto r = nn::grad_check([&] { return c.f(c.inputs); }, std::span<TD>(c.inputs),
                            kSuiteTolerance, c.names);
    merge(out.report, r, c.name);
  }
  out.report.passed = !out.report.numeric_failure && out.report.max_rel_error <= kSuiteTolerance;
  if (!out.report.numeric_failure) {
    std::ostringstream os;
    os << "max relative error " << std::scientific << std::setprecision(3)
       << out.report.max_rel_error << " at " << out.report.worst << " over "
       << out.report.n_checked << " elements";
    out.report.message = os.str();
  }
  return out;
}

std::vector<Check> numerics_checks() {
  Rng rng(101);
  std::vector<Check> cs;
  cs.push_back({"linear", {randn({3, 4}, rng), randn({4, 5}, rng), randn({5}, rng)}, {"x", "W", "b"},
                [](auto& in) { return probe_sum(nn::linear(in[0], in[1], in[2]), 1); }});
  cs.push_back({"conv2d_7x7",
                {randn({1, 2, 3, 4}, rng), randn({3, 2, 7, 7}, rng, 0.3), randn({3}, rng)},
                {"x", "k", "b"},
                [](auto& in) { return probe_sum(nn::conv2d_7x7(in[0], in[1], in[2]), 2); }});
  cs.push_back({"instance_norm", {randn({2, 3, 2, 3}, rng), randn({3}, rng), randn({3}, rng)},
                {"x", "gamma", "beta"},
                [](auto& in) { return probe_sum(nn::instance_norm(in[0], in[1], in[2]), 3); }});
  {
    std::vector<TD> in{randn({1, 3}, rng, 0.5), randn({1, 4}, rng, 0.5)};
    std::vector<std::string> names{"x", "h"};
    for (const char* w : {"W_ir", "W_iz", "W_in"}) {
      in.push_back(randn({3, 4}, rng, 0.5));
      names.push_back(w);
    }
    for (const char* w : {"W_hr", "W_hz", "W_hn"}) {
      in.push_back(randn({4, 4}, rng, 0.5));
      names.push_back(w);
    }
    for (const char* b : {"b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"}) {
      in.push_back(randn({4}, rng, 0.5));
      names.push_back(b);
    }
    cs.push_back({"gru_cell", in, names, [](auto& v) {
                    nn::GruParams<double> p{v[2], v[3], v[4], v[5], v[6],  v[7],
                                            v[8], v[9], v[10], v[11], v[12], v[13]};
                    // Two steps so the hidden path is exercised.
                    auto h1 = nn::gru_cell(v[0], v[1], p);
                    return probe_sum(nn::gru_cell(nn::tanh(v[0]), h1, p), 4);
                  }});
  }
  cs.push_back({"gather_sparse", {randn({5, 3}, rng)}, {"E"}, [](auto& in) {
                  nn::CsrMatrix<double> A{5, 5, {0, 2, 3, 5, 6, 7}, {0, 1, 1, 2, 4, 3, 4},
                                          {0.5, 0.5, 1.0, 0.3, 0.7, 1.0, 1.0}};
                  std::vector<std::int64_t> rows{2, 0, 4}, ids{1, nn::kPadIndex, 3, 3};
                  return nn::add(probe_sum(nn::sparse_rows_matmul(A, rows, in[0]), 5),
                                 probe_sum(nn::gather_rows(in[0], ids), 6));
                }});
  cs.push_back({"shape_ops", {randn({2, 3, 4}, rng)}, {"x"}, [](auto& in) {
                  auto p = nn::permute(in[0], {2, 0, 1});
                  auto c = nn::concat<double>({nn::slice(p, 0, 1, 2), nn::repeat_axis(nn::reshape(nn::sum_dim(p, 0), {1, 2, 3}), 0, 2)}, 0);
                  return probe_sum(nn::reshape(c, {4, 6}), 7);
                }});
  cs.push_back({"bce_dropout", {randn({2, 5}, rng, 2.0)}, {"logits"}, [](auto& in) {
                  Rng mask(9);
                  std::vector<double> y{1, 0, 0, 1, 1, 0, 1, 0, 0, 0};
                  auto dropped = nn::dropout(in[0], 0.3, true, mask);
                  return nn::add(nn::bce_with_logits(in[0], std::span<const double>(y)),
                                 probe_sum(nn::sigmoid(dropped), 8));
                }});
  return cs;
}

std::vector<Check> cwg_checks() {
  Rng rng(202);
  return {{"cwg",
           {randn({4, 1}, rng, 0.5), randn({4, 8}, rng), randn({1, 2}, rng), randn({2}, rng),
            randn({2, 8}, rng), randn({8}, rng)},
           {"tau_bar", "h", "W1", "b1", "W2", "b2"},
           [](auto& in) {
             cwg::CwgParams<double> p{in[2], in[3], in[4], in[5]};
             return probe_sum(cwg::modulate(in[1], cwg::cwg_forward(in[0], p), 0.5), 11);
           }}};
}

std::vector<Check> charm_checks() {
  Rng rng(303);
  const std::size_t C = 8, H = 3, W = 4;
  std::vector<double> mask(H * W, 1.0);
  mask[3] = mask[7] = mask[8] = mask[9] = mask[10] = mask[11] = 0.0;
  std::vector<TD> in{randn({1, C, H, W}, rng)};
  auto xd = in[0].mutable_data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t s = 0; s < H * W; ++s) xd[c * H * W + s] *= mask[s];
  std::vector<std::string> names{"X"};
  auto add = [&](const char* n, nn::Shape s, double scale, double shift = 0.0) {
    auto t = randn(std::move(s), rng, scale);
    for (auto& v : t.mutable_data()) v += shift;
    in.push_back(t);
    names.push_back(n);
  };
  add("mlp_W1", {C, C / 4}, 0.5);
  add("mlp_b1", {C / 4}, 0.5);
  add("mlp_W2", {C / 4, C}, 0.5);
  add("mlp_b2", {C}, 0.5);
  add("conv1_k", {C, C, 7, 7}, 0.2);
  add("conv1_b", {C}, 0.5);
  add("conv2_k", {C, C, 7, 7}, 0.2);
  add("conv2_b", {C}, 0.5);
  add("in1_gamma", {C}, 0.2, 1.0);
  add("in1_beta", {C}, 0.2);
  add("in2_gamma", {C}, 0.2, 1.0);
  add("in2_beta", {C}, 0.2);
  add("gate_a", {1}, 1.0);
  add("gate_b", {1}, 1.0);
  TD mask_t({1, 1, H, W}, mask);
  auto tau = randn({1, 1, H, W}, rng, 0.5);
  return {{"charm", in, names, [mask_t, tau](auto& v) {
             charm::CharmParams<double> p{v[1], v[2],  v[3],  v[4],  v[5],  v[6],  v[7],
                                          v[8], v[9], v[10], v[11], v[12], v[13], v[14]};
             auto out = charm::charm_forward(charm::CharmInput<double>{v[0], mask_t, tau}, p);
             TD total = TD::zeros({1});
             for (std::size_t h = 0; h < out.pooled.size(); ++h)
               total = nn::add(total, probe_sum(out.pooled[h], 20 + h));
             return total;
           }}};
}

struct ModelFixture {
  data::Vocabularies vocab{5, 4, 6};
  std::vector<data::PatientRecord> records{
      {"a", {{{0, 1}, {0}, {0, 2}}, {{2}, {1, 2}, {1, 3, 5}}, {{1, 3}, {2}, {1, 4}}}},
      {"b", {{{3, 4}, {3}, {4}}, {{0}, {1}, {0, 5}}}},
  };
  std::shared_ptr<model::Model<double>> model;

  ModelFixture() {
    Rng rng(404);
    model::EntityEffects e;
    for (std::size_t i = 0; i < vocab.n_diag; ++i) e.diag.push_back(rng.uniform(-0.5, 0.5));
    for (std::size_t i = 0; i < vocab.n_proc; ++i) e.proc.push_back(rng.uniform(-0.5, 0.5));
    for (std::size_t i = 0; i < vocab.n_med; ++i) e.med.push_back(rng.uniform(-0.5, 0.5));
    model::ModelConfig cfg;
    cfg.d = 8;
    cfg.slots = 4;
    model = std::make_shared<model::Model<double>>(
        cfg, vocab, model::build_homo_graphs(records, vocab), e, 7);
  }
};

// Every trainable tensor except the CHARM block, which has its own scope.
Check model_check() {
  ModelFixture fx;
  Check c{"model", {}, {}, {}};
  for (const auto& p : fx.model->named_tensors()) {
    if (!p.trainable || p.name.rfind("charm.", 0) == 0) continue;
    c.inputs.push_back(p.tensor);
    c.names.push_back(p.name);
  }
  c.f = [fx](auto&) {
    TD total = TD::zeros({1});
    for (std::size_t i = 0; i < fx.records.size(); ++i)
      total = nn::add(total, probe_sum(fx.model->forward(fx.records[i].visits), 30 + i));
    return total;
  };
  return c;
}

std::vector<Check> loss_checks() {
  Rng rng(505);
  data::DdiMatrix ddi(6);
  ddi.add_pair(0, 1);
  ddi.add_pair(1, 5);
  ddi.add_pair(2, 3);
  ddi.add_pair(3, 4);
  const auto adj = training::ddi_adjacency<double>(ddi);
  std::vector<Check> cs;
  cs.push_back({"visit_loss", {randn({1, 6}, rng, 2.0)}, {"logits"}, [adj](auto& in) {
                  std::vector<double> y{1, 0, 0, 1, 1, 0};
                  return training::visit_loss(in[0], std::span<const double>(y), adj, 0.05);
                }});
  ModelFixture fx;
  Check e2e{"end_to_end", {}, {}, {}};
  for (const auto& p : fx.model->named_tensors()) {
    if (!p.trainable) continue;
    e2e.inputs.push_back(p.tensor);
    e2e.names.push_back(p.name);
  }
  e2e.f = [fx, adj](auto&) {
    TD total = TD::zeros({1});
    for (const auto& r : fx.records)
      total = nn::add(total, training::patient_loss(fx.model->forward(r.visits), r.visits, adj, 0.5));
    return total;
  };
  cs.push_back(std::move(e2e));
  return cs;
}

// y = x^2 whose backward claims dy/dx = 3x.
TD wrong_square(const TD& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (auto& e : v) e *= e;
  auto xn = x.node();
  return nn::detail::make_result<double>("wrong_square", x.shape(), std::move(v), {xn},
                                         [xn](nn::detail::Node<double>& o) {
                                           for (std::size_t i = 0; i < o.grad.size(); ++i)
                                             xn->grad[i] += 3.0 * xn->value[i] * o.grad[i];
                                         });
}

}  // namespace

const std::vector<std::string>& scopes() {
  static const std::vector<std::string> all{"numerics", "cwg", "charm", "model", "loss"};
  return all;
}

std::vector<ScopeResult> run(const std::string& scope, bool inject_bug) {
  const auto& known = scopes();
  if (scope != "all" && std::find(known.begin(), known.end(), scope) == known.end()) {
    throw UsageError("unknown gradcheck scope '" + scope + "'");
  }
  std::vector<ScopeResult> out;
  for (const auto& s : known) {
    if (scope != "all" && scope != s) continue;
    if (s == "numerics") out.push_back(run_checks(s, numerics_checks()));
    if (s == "cwg") out.push_back(run_checks(s, cwg_checks()));
    if (s == "charm") out.push_back(run_checks(s, charm_checks()));
    if (s == "model") out.push_back(run_checks(s, {model_check()}));
    if (s == "loss") out.push_back(run_checks(s, loss_checks()));
  }
  if (inject_bug) {
    Rng rng(606);
    out.push_back(run_checks("injected", {{"wrong_square", {randn({4}, rng)}, {"x"}, [](auto& in) {
                                             return nn::sum(wrong_square(in[0]));
                                           }}}));
  }
  return out;
}

}  // namespace cafemed::gradsuite
