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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cafemed/numerics/tensor.hpp"

namespace cafemed::nn {

inline constexpr double kGradCheckStep = 1e-5;
// Denominator floor of the relative error, so gradients near zero are judged
// by absolute error instead of amplified rounding noise.
inline constexpr double kGradCheckFloor = 1e-3;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<input name>[flat index]"
  std::size_t n_checked = 0;
  bool passed = false;
  bool numeric_failure = false;
  std::string message;
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences, perturbing each element of `inputs` in place. `f` must
// recompute from the current input values on every call. Inputs need
// requires_grad set.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::span<Tensor<double>> inputs, double tol,
                           std::span<const std::string> names = {},
                           double step = kGradCheckStep);

double grad_rel_error(double analytic, double numeric);

}  // namespace cafemed::nn
