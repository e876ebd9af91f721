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
#include <numeric>
#include <vector>

#include "cafemed/charm.hpp"
#include "cafemed/errors.hpp"
#include "cafemed/numerics/gradcheck.hpp"
#include "cafemed/numerics/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cafemed;
using namespace cafemed::charm;
using cafemed::testing::conv_oracle;
using cafemed::testing::instance_norm_oracle;
using cafemed::testing::random_tensor;
using TD = nn::Tensor<double>;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

CharmParams<double> random_params(std::size_t C, Rng& rng, double scale = 0.5) {
  auto p = CharmParams<double>::neutral(C);
  const std::size_t r = C / kReduction;
  p.mlp_W1 = random_tensor({C, r}, rng, scale);
  p.mlp_b1 = random_tensor({r}, rng, scale);
  p.mlp_W2 = random_tensor({r, C}, rng, scale);
  p.mlp_b2 = random_tensor({C}, rng, scale);
  p.conv1_k = random_tensor({C, C, 7, 7}, rng, 0.2);
  p.conv1_b = random_tensor({C}, rng, scale);
  p.conv2_k = random_tensor({C, C, 7, 7}, rng, 0.2);
  p.conv2_b = random_tensor({C}, rng, scale);
  p.in1_gamma = nn::add_scalar(random_tensor({C}, rng, 0.2), 1.0);
  p.in1_beta = random_tensor({C}, rng, 0.2);
  p.in2_gamma = nn::add_scalar(random_tensor({C}, rng, 0.2), 1.0);
  p.in2_beta = random_tensor({C}, rng, 0.2);
  p.gate_a = random_tensor({1}, rng);
  p.gate_b = random_tensor({1}, rng);
  return p;
}

TD random_mask(std::size_t B, std::size_t H, std::size_t W, Rng& rng) {
  std::vector<double> m(B * H * W);
  for (auto& v : m) v = rng.bernoulli(0.7) ? 1.0 : 0.0;
  return TD({B, 1, H, W}, std::move(m));
}

// Zero out X wherever the mask is zero.
TD apply_mask(const TD& X, const TD& mask) {
  return nn::mul(X, nn::repeat_axis(mask, 1, X.size(1)));
}

std::vector<double> channel_attention_oracle(const TD& X, const CharmParams<double>& p) {
  const std::size_t B = X.size(0), C = X.size(1), H = X.size(2), W = X.size(3), r = C / 4;
  std::vector<double> out(X.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        auto at = [&](std::size_t c) { return ((b * C + c) * H + h) * W + w; };
        std::vector<double> hidden(r);
        for (std::size_t j = 0; j < r; ++j) {
          double s = p.mlp_b1[j];
          for (std::size_t c = 0; c < C; ++c) s += X[at(c)] * p.mlp_W1[c * r + j];
          hidden[j] = std::max(0.0, s);
        }
        for (std::size_t c = 0; c < C; ++c) {
          double s = p.mlp_b2[c];
          for (std::size_t j = 0; j < r; ++j) s += hidden[j] * p.mlp_W2[j * C + c];
          out[at(c)] = X[at(c)] * sig(s);
        }
      }
  return out;
}

std::vector<double> shuffle_oracle(const TD& X, std::size_t g) {
  const std::size_t B = X.size(0), C = X.size(1), S = X.size(2) * X.size(3);
  if (C % g != 0) return {X.data().begin(), X.data().end()};
  std::vector<double> out(X.numel());
  const std::size_t per = C / g;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t src = (c % g) * per + c / g;
      for (std::size_t s = 0; s < S; ++s) out[(b * C + c) * S + s] = X[(b * C + src) * S + s];
    }
  return out;
}

std::vector<double> spatial_oracle(const TD& X, const CharmParams<double>& p) {
  auto c1 = conv_oracle(X, p.conv1_k, p.conv1_b);
  for (auto& v : c1) v = std::max(0.0, v);
  auto n1 = instance_norm_oracle(TD(X.shape(), c1), p.in1_gamma, p.in1_beta, nn::kInstanceNormEps);
  auto F = conv_oracle(TD(X.shape(), n1), p.conv2_k, p.conv2_b);
  auto n2 = instance_norm_oracle(TD(X.shape(), F), p.in2_gamma, p.in2_beta, nn::kInstanceNormEps);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * sig(n2[i]);
  return out;
}

std::vector<double> gate_oracle(const TD& X, const TD& tau, double a, double b) {
  const std::size_t B = X.size(0), C = X.size(1), S = X.size(2) * X.size(3);
  std::vector<double> out(X.numel());
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s)
        out[(n * C + c) * S + s] = X[(n * C + c) * S + s] * sig(a * tau[n * S + s] + b);
  return out;
}

// Pooled rows as [h][b * C + c].
std::vector<std::vector<double>> pool_oracle(const std::vector<double>& X, const TD& mask,
                                             std::size_t B, std::size_t C, std::size_t H,
                                             std::size_t W) {
  std::vector<std::vector<double>> rows(H, std::vector<double>(B * C, 0.0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      double n = 0;
      for (std::size_t w = 0; w < W; ++w) n += mask[(b * H + h) * W + w];
      if (n == 0) continue;
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t w = 0; w < W; ++w)
          s += mask[(b * H + h) * W + w] * X[((b * C + c) * H + h) * W + w];
        rows[h][b * C + c] = s / n;
      }
    }
  return rows;
}

void check_close(std::span<const double> got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("channel_attention: neutral params, zero input and position-wise MLP oracle") {
  Rng rng(1);
  auto X = random_tensor({2, 8, 3, 4}, rng);
  auto half = channel_attention(X, CharmParams<double>::neutral(8));
  for (std::size_t i = 0; i < X.numel(); ++i) CHECK(half[i] == doctest::Approx(0.5 * X[i]));

  auto p = random_params(8, rng);
  auto zero_out = channel_attention(TD::zeros({1, 8, 2, 2}), p);
  for (double v : zero_out.data()) CHECK(v == 0.0);

  auto Y = random_tensor({1, 8, 2, 2}, rng);
  check_close(channel_attention(Y, p).data(), channel_attention_oracle(Y, p), 1e-12);
}

TEST_CASE("channel_shuffle: C=8 order, identity guard and double-transpose identity") {
  std::vector<double> v(8);
  std::iota(v.begin(), v.end(), 0.0);
  auto out = channel_shuffle(TD({1, 8, 1, 1}, v), 4);
  const std::vector<double> want{0, 2, 4, 6, 1, 3, 5, 7};
  for (std::size_t i = 0; i < 8; ++i) CHECK(out[i] == want[i]);

  Rng rng(2);
  auto odd = random_tensor({2, 6, 3, 2}, rng);
  auto same = channel_shuffle(odd, 4);
  for (std::size_t i = 0; i < odd.numel(); ++i) CHECK(same[i] == odd[i]);

  for (std::size_t C : {4u, 8u, 64u}) {
    auto X = random_tensor({2, C, 3, 5}, rng);
    auto once = channel_shuffle(X, 4);
    check_close(once.data(), shuffle_oracle(X, 4), 1e-15);
    auto back = channel_shuffle(once, C / 4);
    for (std::size_t i = 0; i < X.numel(); ++i) CHECK(back[i] == X[i]);
    // Each (b, h, w) fiber keeps the same multiset of values.
    const std::size_t S = 15;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> a, c;
        for (std::size_t ch = 0; ch < C; ++ch) {
          a.push_back(X[(b * C + ch) * S + s]);
          c.push_back(once[(b * C + ch) * S + s]);
        }
        std::sort(a.begin(), a.end());
        std::sort(c.begin(), c.end());
        CHECK(a == c);
      }
  }
}

TEST_CASE("spatial_attention: neutral params, zero input and composed oracle") {
  Rng rng(3);
  auto X = random_tensor({1, 4, 3, 2}, rng);
  auto half = spatial_attention(X, CharmParams<double>::neutral(4));
  for (std::size_t i = 0; i < X.numel(); ++i) CHECK(half[i] == doctest::Approx(0.5 * X[i]));

  auto p = random_params(4, rng);
  auto zero_out = spatial_attention(TD::zeros({1, 4, 3, 2}), p);
  for (double v : zero_out.data()) CHECK(v == 0.0);
  check_close(spatial_attention(X, p).data(), spatial_oracle(X, p), 1e-10);
}

TEST_CASE("causal_gate: neutral, saturated and scalar oracle") {
  Rng rng(4);
  auto X = random_tensor({2, 4, 3, 3}, rng);
  auto tau = random_tensor({2, 1, 3, 3}, rng, 0.5);
  auto half = causal_gate(X, tau, TD::zeros({1}), TD::zeros({1}));
  for (std::size_t i = 0; i < X.numel(); ++i) CHECK(half[i] == doctest::Approx(0.5 * X[i]));

  auto open = causal_gate(X, tau, TD::zeros({1}), TD::full({1}, 20.0));
  for (std::size_t i = 0; i < X.numel(); ++i) CHECK(std::abs(open[i] - X[i]) <= 1e-8);

  const double a = rng.normal(), b = rng.normal();
  check_close(causal_gate(X, tau, TD::full({1}, a), TD::full({1}, b)).data(),
              gate_oracle(X, tau, a, b), 1e-13);

  auto bad = tau.clone();
  bad.mutable_data()[3] = std::nan("");
  CHECK_THROWS_AS(causal_gate(X, bad, TD::zeros({1}), TD::zeros({1})), NumericError);
  CHECK_THROWS_AS(causal_gate(X, TD::zeros({2, 1, 3, 2}), TD::zeros({1}), TD::zeros({1})),
                  DimensionError);
}

TEST_CASE("charm_forward: composed neutral gain and empty modality row") {
  Rng rng(5);
  const std::size_t B = 2, C = 8, H = 3, W = 4;
  auto mask = random_mask(B, H, W, rng);
  auto md = mask.mutable_data();
  for (std::size_t w = 0; w < W; ++w) md[(0 * H + 2) * W + w] = 0.0;
  md[0] = 1.0;
  auto X = apply_mask(random_tensor({B, C, H, W}, rng), mask);
  CharmInput<double> in{X, mask, random_tensor({B, 1, H, W}, rng)};
  auto out = charm_forward(in, CharmParams<double>::neutral(C));
  REQUIRE(out.pooled.size() == 3);
  // Neutral params make every stage a 0.5 gain; the shuffle reorders channels.
  auto shuffled = shuffle_oracle(X, 4);
  auto pooled_shuffled = pool_oracle(shuffled, mask, B, C, H, W);
  for (std::size_t h = 0; h < H; ++h) {
    CHECK(out.pooled[h].shape() == nn::Shape{B, C});
    for (std::size_t i = 0; i < B * C; ++i)
      CHECK(out.pooled[h][i] == doctest::Approx(0.125 * pooled_shuffled[h][i]).epsilon(1e-12));
  }
  for (std::size_t c = 0; c < C; ++c) CHECK(out.pooled[2][c] == 0.0);
}

TEST_CASE("charm_forward: random instance matches stage-by-stage oracle") {
  Rng rng(6);
  const std::size_t B = 2, C = 8, H = 3, W = 4;
  auto p = random_params(C, rng);
  auto mask = random_mask(B, H, W, rng);
  auto X = apply_mask(random_tensor({B, C, H, W}, rng), mask);
  auto tau = random_tensor({B, 1, H, W}, rng, 0.5);
  auto out = charm_forward(CharmInput<double>{X, mask, tau}, p);

  auto g = TD(X.shape(), gate_oracle(X, tau, p.gate_a[0], p.gate_b[0]));
  auto ca = TD(X.shape(), channel_attention_oracle(g, p));
  auto sh = TD(X.shape(), shuffle_oracle(ca, 4));
  auto sp = spatial_oracle(sh, p);
  check_close(out.X_output.data(), sp, 1e-10);
  auto pooled = pool_oracle(sp, mask, B, C, H, W);
  for (std::size_t h = 0; h < H; ++h) check_close(out.pooled[h].data(), pooled[h], 1e-10);

  // Attention factors are all in (0, 1), so outputs shrink elementwise.
  for (std::size_t i = 0; i < sh.numel(); ++i) CHECK(std::abs(sp[i]) <= std::abs(sh[i]));
}

TEST_CASE("charm_forward: padded slots never reach the pooled output") {
  Rng rng(7);
  const std::size_t B = 1, C = 8, H = 3, W = 5;
  auto p = random_params(C, rng);
  auto mask = random_mask(B, H, W, rng);
  auto X = apply_mask(random_tensor({B, C, H, W}, rng), mask);
  auto tau = random_tensor({B, 1, H, W}, rng);
  auto base = charm_forward(CharmInput<double>{X, mask, tau}, p, {false});
  // Scribble over the padded positions in X and tau: pooled output is unchanged
  // once spatial mixing is off.
  auto X2 = X.clone();
  auto tau2 = tau.clone();
  auto x2 = X2.mutable_data();
  auto t2 = tau2.mutable_data();
  for (std::size_t s = 0; s < H * W; ++s) {
    if (mask[s] != 0.0) continue;
    t2[s] = rng.normal();
    for (std::size_t c = 0; c < C; ++c) x2[c * H * W + s] = rng.normal();
  }
  auto other = charm_forward(CharmInput<double>{X2, mask, tau2}, p, {false});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < C; ++i)
      CHECK(other.pooled[h][i] == doctest::Approx(base.pooled[h][i]).epsilon(1e-13));

  // With spatial attention on, zero embeddings at padded slots contribute nothing.
  auto full = charm_forward(CharmInput<double>{X, mask, tau}, p);
  auto want = pool_oracle({full.X_output.data().begin(), full.X_output.data().end()}, mask, B, C,
                          H, W);
  for (std::size_t h = 0; h < H; ++h) check_close(full.pooled[h].data(), want[h], 1e-12);
}

TEST_CASE("charm_forward: slot permutation equivariance without spatial convolution") {
  Rng rng(8);
  const std::size_t B = 2, C = 8, H = 3, W = 6;
  auto p = random_params(C, rng);
  auto mask = random_mask(B, H, W, rng);
  auto X = apply_mask(random_tensor({B, C, H, W}, rng), mask);
  auto tau = random_tensor({B, 1, H, W}, rng);
  std::vector<std::size_t> perm(W);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  auto permute_slots = [&](const TD& t) {
    std::vector<double> out(t.numel());
    const std::size_t rows = t.numel() / W;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t w = 0; w < W; ++w) out[r * W + w] = t[r * W + perm[w]];
    return TD(t.shape(), std::move(out));
  };
  auto base = charm_forward(CharmInput<double>{X, mask, tau}, p, {false});
  auto moved = charm_forward(
      CharmInput<double>{permute_slots(X), permute_slots(mask), permute_slots(tau)}, p, {false});
  auto expect = permute_slots(base.X_output);
  for (std::size_t i = 0; i < expect.numel(); ++i)
    CHECK(moved.X_output[i] == doctest::Approx(expect[i]).epsilon(1e-13));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < B * C; ++i)
      CHECK(moved.pooled[h][i] == doctest::Approx(base.pooled[h][i]).epsilon(1e-12));
}

TEST_CASE("charm_forward: grad_check on a 1x8x3x4 instance") {
  Rng rng(9);
  const std::size_t B = 1, C = 8, H = 3, W = 4;
  auto p = random_params(C, rng);
  auto mask = random_mask(B, H, W, rng);
  auto X = apply_mask(random_tensor({B, C, H, W}, rng), mask);
  auto tau = random_tensor({B, 1, H, W}, rng, 0.5);
  std::vector<TD> probes;
  for (std::size_t h = 0; h < H; ++h) probes.push_back(random_tensor({B, C}, rng));

  std::vector<TD> inputs{X,         p.mlp_W1,  p.mlp_b1,  p.mlp_W2,  p.mlp_b2,
                         p.conv1_k, p.conv1_b, p.conv2_k, p.conv2_b, p.in1_gamma,
                         p.in1_beta, p.in2_gamma, p.in2_beta, p.gate_a, p.gate_b};
  const std::vector<std::string> names{"X",       "mlp_W1",  "mlp_b1",  "mlp_W2",    "mlp_b2",
                                       "conv1_k", "conv1_b", "conv2_k", "conv2_b",   "in1_gamma",
                                       "in1_beta", "in2_gamma", "in2_beta", "gate_a", "gate_b"};
  for (auto& t : inputs) t.set_requires_grad(true);
  auto f = [&] {
    CharmParams<double> q{inputs[1], inputs[2],  inputs[3],  inputs[4],  inputs[5],
                          inputs[6], inputs[7],  inputs[8],  inputs[9],  inputs[10],
                          inputs[11], inputs[12], inputs[13], inputs[14]};
    auto out = charm_forward(CharmInput<double>{inputs[0], mask, tau}, q);
    TD total = TD::zeros({1});
    for (std::size_t h = 0; h < H; ++h) total = nn::add(total, nn::sum(nn::mul(out.pooled[h], probes[h])));
    return total;
  };
  auto report = nn::grad_check(f, std::span<TD>(inputs), 1e-4, names);
  INFO(report.message);
  CHECK(report.passed);
}

TEST_CASE("charm params: init shapes, divisibility and parameter listing") {
  Rng rng(10);
  auto p = CharmParams<float>::init(16, rng);
  CHECK(p.conv1_k.shape() == nn::Shape{16, 16, 7, 7});
  CHECK(p.mlp_W1.shape() == nn::Shape{16, 4});
  nn::ParamList<float> list;
  p.append_to(list, "charm");
  CHECK(list.size() == 14);
  CHECK(list.front().name == "charm.mlp_W1");
  CHECK_THROWS_AS(CharmParams<double>::init(6, rng), ConfigError);
}
