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

#include <string>
#include <vector>

#include "cafemed/numerics/params.hpp"
#include "cafemed/numerics/tensor.hpp"
#include "cafemed/rng.hpp"

// Cross-modal fusion block over a [B, C, H, W] grid where C is the embedding
// dimension, H indexes the modality (diag, proc, med history) and W the entity
// slots: causal gate, per-position channel attention, grouped channel shuffle,
// then dual-convolution spatial attention.
namespace cafemed::charm {

inline constexpr std::size_t kReduction = 4;
inline constexpr std::size_t kShuffleGroups = 4;

template <typename T>
struct CharmParams {
  // Channel MLP, C -> C/r -> C.
  nn::Tensor<T> mlp_W1, mlp_b1, mlp_W2, mlp_b2;
  // Spatial convolutions, both C -> C.
  nn::Tensor<T> conv1_k, conv1_b, conv2_k, conv2_b;
  // Instance-norm affines: in1 sits between the convolutions, in2 after.
  nn::Tensor<T> in1_gamma, in1_beta, in2_gamma, in2_beta;
  // Causal gate sigma(a * tau_bar + b).
  nn::Tensor<T> gate_a, gate_b;

  static CharmParams init(std::size_t channels, Rng& rng);
  // Zero MLP/conv weights, unit IN scale, a = b = 0: every attention map is 0.5.
  static CharmParams neutral(std::size_t channels);
  void append_to(nn::ParamList<T>& list, const std::string& prefix) const;
};

template <typename T>
struct CharmInput {
  nn::Tensor<T> X;             // [B, C, H, W], zero at padded slots
  nn::Tensor<T> mask;          // [B, 1, H, W], 1 for occupied slots
  nn::Tensor<T> tau_bar_grid;  // [B, 1, H, W]
};

struct CharmOptions {
  bool spatial_attention = true;
};

template <typename T>
struct CharmOutput {
  nn::Tensor<T> X_output;              // [B, C, H, W]
  std::vector<nn::Tensor<T>> pooled;   // H tensors of shape [B, C]
};

// X * sigmoid(MLP(X) applied at each (h, w) position over the channel vector).
template <typename T>
nn::Tensor<T> channel_attention(const nn::Tensor<T>& X, const CharmParams<T>& p);

// [B,C,H,W] -> [B,g,C/g,H,W] -> swap group axes -> [B,C,H,W]; identity unless
// g divides C.
template <typename T>
nn::Tensor<T> channel_shuffle(const nn::Tensor<T>& X, std::size_t groups = kShuffleGroups);

// F = Conv(IN(ReLU(Conv(X)))), A = sigmoid(IN(F)), returns X * A.
template <typename T>
nn::Tensor<T> spatial_attention(const nn::Tensor<T>& X, const CharmParams<T>& p);

// X * sigmoid(a * tau_bar_grid + b), the gate repeated across channels.
template <typename T>
nn::Tensor<T> causal_gate(const nn::Tensor<T>& X, const nn::Tensor<T>& tau_bar_grid,
                          const nn::Tensor<T>& a, const nn::Tensor<T>& b);

// Mean over the occupied W slots of each modality row; rows with no occupied
// slot give zeros. Returns H tensors of shape [B, C].
template <typename T>
std::vector<nn::Tensor<T>> masked_row_mean(const nn::Tensor<T>& X, const nn::Tensor<T>& mask);

template <typename T>
CharmOutput<T> charm_forward(const CharmInput<T>& input, const CharmParams<T>& p,
                             const CharmOptions& options = {});

}  // namespace cafemed::charm
