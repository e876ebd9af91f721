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

#include "cafemed/numerics/gradcheck.hpp"

// The 64-bit finite-difference suite behind `cafemed gradcheck`.
namespace cafemed::gradsuite {

inline constexpr double kSuiteTolerance = 1e-4;

struct ScopeResult {
  std::string scope;
  nn::GradCheckReport report;  // worst entry is "<check>:<input>[k]"
};

// numerics, cwg, charm, model, loss.
const std::vector<std::string>& scopes();

// `scope` is one of scopes() or "all". With `inject_bug` an op with a
// deliberately wrong backward pass is checked as scope "injected".
std::vector<ScopeResult> run(const std::string& scope, bool inject_bug = false);

}  // namespace cafemed::gradsuite
