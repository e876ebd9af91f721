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

#include "cafemed/charm.hpp"

#include <cmath>

#include "cafemed/errors.hpp"
#include "cafemed/numerics/ops.hpp"

namespace cafemed::charm {

namespace {

template <typename T>
void require_grid(const char* op, const nn::Tensor<T>& X) {
  if (X.dim() != 4) {
    throw DimensionError(std::string(op) + ": expected [B,C,H,W], got " + nn::shape_str(X.shape()));
  }
}

template <typename T>
void require_plane(const char* op, const nn::Tensor<T>& X, const nn::Tensor<T>& plane) {
  const nn::Shape want{X.size(0), 1, X.size(2), X.size(3)};
  if (plane.shape() != want) {
    throw DimensionError(std::string(op) + ": expected " + nn::shape_str(want) + ", got " +
                         nn::shape_str(plane.shape()));
  }
}

}  // namespace

template <typename T>
CharmParams<T> CharmParams<T>::init(std::size_t C, Rng& rng) {
  if (C < kReduction || C % kReduction != 0) {
    throw ConfigError("CHARM needs channels divisible by 4, got " + std::to_string(C));
  }
  const std::size_t r = C / kReduction;
  CharmParams p;
  p.mlp_W1 = nn::uniform_init<T>({C, r}, C, rng);
  p.mlp_b1 = nn::zeros_param<T>({r});
  p.mlp_W2 = nn::uniform_init<T>({r, C}, r, rng);
  p.mlp_b2 = nn::zeros_param<T>({C});
  p.conv1_k = nn::uniform_init<T>({C, C, 7, 7}, C * 49, rng);
  p.conv1_b = nn::zeros_param<T>({C});
  p.conv2_k = nn::uniform_init<T>({C, C, 7, 7}, C * 49, rng);
  p.conv2_b = nn::zeros_param<T>({C});
  p.in1_gamma = nn::constant_param<T>({C}, T(1));
  p.in1_beta = nn::zeros_param<T>({C});
  p.in2_gamma = nn::constant_param<T>({C}, T(1));
  p.in2_beta = nn::zeros_param<T>({C});
  p.gate_a = nn::constant_param<T>({1}, T(1));
  p.gate_b = nn::zeros_param<T>({1});
  return p;
}

template <typename T>
CharmParams<T> CharmParams<T>::neutral(std::size_t C) {
  const std::size_t r = C / kReduction;
  CharmParams p;
  p.mlp_W1 = nn::zeros_param<T>({C, r});
  p.mlp_b1 = nn::zeros_param<T>({r});
  p.mlp_W2 = nn::zeros_param<T>({r, C});
  p.mlp_b2 = nn::zeros_param<T>({C});
  p.conv1_k = nn::zeros_param<T>({C, C, 7, 7});
  p.conv1_b = nn::zeros_param<T>({C});
  p.conv2_k = nn::zeros_param<T>({C, C, 7, 7});
  p.conv2_b = nn::zeros_param<T>({C});
  p.in1_gamma = nn::constant_param<T>({C}, T(1));
  p.in1_beta = nn::zeros_param<T>({C});
  p.in2_gamma = nn::constant_param<T>({C}, T(1));
  p.in2_beta = nn::zeros_param<T>({C});
  p.gate_a = nn::zeros_param<T>({1});
  p.gate_b = nn::zeros_param<T>({1});
  return p;
}

template <typename T>
void CharmParams<T>::append_to(nn::ParamList<T>& list, const std::string& prefix) const {
  list.push_back({prefix + ".mlp_W1", mlp_W1, true});
  list.push_back({prefix + ".mlp_b1", mlp_b1, false});
  list.push_back({prefix + ".mlp_W2", mlp_W2, true});
  list.push_back({prefix + ".mlp_b2", mlp_b2, false});
  list.push_back({prefix + ".conv1_k", conv1_k, true});
  list.push_back({prefix + ".conv1_b", conv1_b, false});
  list.push_back({prefix + ".conv2_k", conv2_k, true});
  list.push_back({prefix + ".conv2_b", conv2_b, false});
  list.push_back({prefix + ".in1_gamma", in1_gamma, false});
  list.push_back({prefix + ".in1_beta", in1_beta, false});
  list.push_back({prefix + ".in2_gamma", in2_gamma, false});
  list.push_back({prefix + ".in2_beta", in2_beta, false});
  list.push_back({prefix + ".gate_a", gate_a, true});
  list.push_back({prefix + ".gate_b", gate_b, true});
}

template <typename T>
nn::Tensor<T> channel_attention(const nn::Tensor<T>& X, const CharmParams<T>& p) {
  require_grid("channel_attention", X);
  const std::size_t B = X.size(0), C = X.size(1), H = X.size(2), W = X.size(3);
  auto perm = nn::reshape(nn::permute(X, {0, 2, 3, 1}), {B * H * W, C});
  auto mlp = nn::linear(nn::relu(nn::linear(perm, p.mlp_W1, p.mlp_b1)), p.mlp_W2, p.mlp_b2);
  auto att = nn::sigmoid(nn::permute(nn::reshape(mlp, {B, H, W, C}), {0, 3, 1, 2}));
  return nn::mul(X, att);
}

template <typename T>
nn::Tensor<T> channel_shuffle(const nn::Tensor<T>& X, std::size_t groups) {
  require_grid("channel_shuffle", X);
  const std::size_t B = X.size(0), C = X.size(1), H = X.size(2), W = X.size(3);
  if (groups == 0 || C % groups != 0) return X;
  auto grouped = nn::reshape(X, {B, groups, C / groups, H, W});
  return nn::reshape(nn::permute(grouped, {0, 2, 1, 3, 4}), {B, C, H, W});
}

template <typename T>
nn::Tensor<T> spatial_attention(const nn::Tensor<T>& X, const CharmParams<T>& p) {
  require_grid("spatial_attention", X);
  auto inner = nn::instance_norm(nn::relu(nn::conv2d_7x7(X, p.conv1_k, p.conv1_b)), p.in1_gamma,
                                 p.in1_beta);
  auto F = nn::conv2d_7x7(inner, p.conv2_k, p.conv2_b);
  auto A = nn::sigmoid(nn::instance_norm(F, p.in2_gamma, p.in2_beta));
  return nn::mul(X, A);
}

template <typename T>
nn::Tensor<T> causal_gate(const nn::Tensor<T>& X, const nn::Tensor<T>& tau_bar_grid,
                          const nn::Tensor<T>& a, const nn::Tensor<T>& b) {
  require_grid("causal_gate", X);
  require_plane("causal_gate", X, tau_bar_grid);
  for (T v : tau_bar_grid.data()) {
    if (!std::isfinite(v)) throw NumericError("causal_gate: non-finite aggregated effect");
  }
  auto gate = nn::sigmoid(nn::add(nn::mul(tau_bar_grid, a), b));
  return nn::mul(X, nn::repeat_axis(gate, 1, X.size(1)));
}

template <typename T>
std::vector<nn::Tensor<T>> masked_row_mean(const nn::Tensor<T>& X, const nn::Tensor<T>& mask) {
  require_grid("masked_row_mean", X);
  require_plane("masked_row_mean", X, mask);
  const std::size_t B = X.size(0), C = X.size(1), H = X.size(2), W = X.size(3);
  auto summed = nn::sum_dim(nn::mul(X, nn::repeat_axis(mask, 1, C)), 3);  // [B, C, H]
  std::vector<T> inv(B * C * H, T(0));
  auto m = mask.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      T count = T(0);
      for (std::size_t w = 0; w < W; ++w) count += m[(b * H + h) * W + w];
      const T v = count > T(0) ? T(1) / count : T(0);
      for (std::size_t c = 0; c < C; ++c) inv[(b * C + c) * H + h] = v;
    }
  auto means = nn::permute(nn::mul(summed, nn::Tensor<T>({B, C, H}, std::move(inv))), {0, 2, 1});
  std::vector<nn::Tensor<T>> rows;
  for (std::size_t h = 0; h < H; ++h) rows.push_back(nn::reshape(nn::slice(means, 1, h, 1), {B, C}));
  return rows;
}

template <typename T>
CharmOutput<T> charm_forward(const CharmInput<T>& in, const CharmParams<T>& p,
                             const CharmOptions& options) {
  require_grid("charm_forward", in.X);
  require_plane("charm_forward", in.X, in.mask);
  auto gated = causal_gate(in.X, in.tau_bar_grid, p.gate_a, p.gate_b);
  auto shuffled = channel_shuffle(channel_attention(gated, p));
  auto out = options.spatial_attention ? spatial_attention(shuffled, p) : shuffled;
  auto pooled = masked_row_mean(out, in.mask);
  return {out, std::move(pooled)};
}

#define CAFEMED_INSTANTIATE_CHARM(T)                                                           \
  template struct CharmParams<T>;                                                              \
  template nn::Tensor<T> channel_attention(const nn::Tensor<T>&, const CharmParams<T>&);       \
  template nn::Tensor<T> channel_shuffle(const nn::Tensor<T>&, std::size_t);                   \
  template nn::Tensor<T> spatial_attention(const nn::Tensor<T>&, const CharmParams<T>&);       \
  template nn::Tensor<T> causal_gate(const nn::Tensor<T>&, const nn::Tensor<T>&,               \
                                     const nn::Tensor<T>&, const nn::Tensor<T>&);              \
  template std::vector<nn::Tensor<T>> masked_row_mean(const nn::Tensor<T>&, const nn::Tensor<T>&); \
  template CharmOutput<T> charm_forward(const CharmInput<T>&, const CharmParams<T>&,           \
                                        const CharmOptions&);

CAFEMED_INSTANTIATE_CHARM(float)
CAFEMED_INSTANTIATE_CHARM(double)

#undef CAFEMED_INSTANTIATE_CHARM

}  // namespace cafemed::charm
