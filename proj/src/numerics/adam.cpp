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

#include "cafemed/numerics/adam.hpp"

#include <cmath>

#include "cafemed/errors.hpp"

namespace cafemed::nn {

template <typename T>
void adam_step(std::span<NamedTensor<T>> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), T(0));
      state.second_moment.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  const AdamOptions& o = state.options;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.trainable) continue;
    auto theta = p.tensor.mutable_data();
    auto& m = state.first_moment[pi];
    auto& v = state.second_moment[pi];
    if (m.size() != theta.size()) {
      throw DimensionError("adam_step: moment size mismatch for " + p.name);
    }
    if (!p.tensor.has_grad()) continue;
    auto grad = p.tensor.grad();
    const double wd = p.decay ? o.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + wd * static_cast<double>(theta[i]);
      m[i] = static_cast<T>(o.beta1 * m[i] + (1.0 - o.beta1) * g);
      v[i] = static_cast<T>(o.beta2 * v[i] + (1.0 - o.beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] = static_cast<T>(theta[i] - o.lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
}

template <typename T>
void zero_grads(std::span<NamedTensor<T>> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template void adam_step(std::span<NamedTensor<float>>, AdamState<float>&);
template void adam_step(std::span<NamedTensor<double>>, AdamState<double>&);
template void zero_grads(std::span<NamedTensor<float>>);
template void zero_grads(std::span<NamedTensor<double>>);

}  // namespace cafemed::nn
