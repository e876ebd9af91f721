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

#include <cstdint>
#include <span>
#include <vector>

#include "cafemed/numerics/params.hpp"
#include "cafemed/numerics/tensor.hpp"

namespace cafemed::nn {

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step_count = 0;
  AdamOptions options;
};

// One bias-corrected Adam update. L2 enters as g <- g + wd * theta for every
// tensor whose `decay` flag is set; moments are created lazily on first use.
template <typename T>
void adam_step(std::span<NamedTensor<T>> params, AdamState<T>& state);

// Zeroes the gradients of every parameter.
template <typename T>
void zero_grads(std::span<NamedTensor<T>> params);

}  // namespace cafemed::nn
