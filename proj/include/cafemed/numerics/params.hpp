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

#include <cmath>
#include <string>
#include <vector>

#include "cafemed/numerics/tensor.hpp"
#include "cafemed/rng.hpp"

namespace cafemed::nn {

// A named model tensor. `decay` marks weights subject to L2 weight decay;
// `trainable` is false for constant buffers persisted with the checkpoint.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), requires_grad set.
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

// N(0, stddev^2), requires_grad set.
template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

}  // namespace cafemed::nn
