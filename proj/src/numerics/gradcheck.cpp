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

#include "cafemed/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cafemed::nn {

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::span<Tensor<double>> inputs, double tol,
                           std::span<const std::string> names, double step) {
  GradCheckReport report;
  auto label = [&](std::size_t i, std::size_t k) {
    std::ostringstream os;
    os << (i < names.size() ? names[i] : "input" + std::to_string(i)) << '[' << k << ']';
    return os.str();
  };

  for (auto& in : inputs) in.zero_grad();
  Tensor<double> out = f();
  if (!std::isfinite(out.item())) {
    report.numeric_failure = true;
    report.message = "function value is not finite";
    return report;
  }
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(in.numel(), 0.0);
    }
  }

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + step;
      const double fp = f().item();
      data[k] = saved - step;
      const double fm = f().item();
      data[k] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.numeric_failure = true;
        report.worst = label(i, k);
        report.message = "non-finite function value while perturbing " + report.worst;
        return report;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = grad_rel_error(analytic[i][k], numeric);
      ++report.n_checked;
      if (report.worst.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = label(i, k);
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  std::ostringstream os;
  os << "max relative error " << report.max_rel_error << " at " << report.worst << " over "
     << report.n_checked << " elements";
  report.message = os.str();
  return report;
}

}  // namespace cafemed::nn
