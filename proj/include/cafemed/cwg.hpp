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

#include "cafemed/data/ehr.hpp"
#include "cafemed/numerics/params.hpp"
#include "cafemed/numerics/tensor.hpp"
#include "cafemed/rng.hpp"

// Causal weight generator: turns an entity's mean effect on medications into
// a d-dimensional gain applied to its embedding.
namespace cafemed::cwg {

enum class Modality { kDiag = 0, kProc = 1, kMed = 2 };

const char* modality_name(Modality m);

inline constexpr double kDefaultAlpha = 0.5;

template <typename T>
struct CwgParams {
  nn::Tensor<T> W1;  // [1, d/4]
  nn::Tensor<T> b1;  // [d/4]
  nn::Tensor<T> W2;  // [d/4, d]
  nn::Tensor<T> b2;  // [d]

  static CwgParams init(std::size_t d, Rng& rng);
  static CwgParams zeros(std::size_t d);
  void append_to(nn::ParamList<T>& list, const std::string& prefix) const;
};

// Mean effect per entity, tau_bar[i] = (1/|M|) sum_j tau[i][j]. Diagnoses and
// procedures read their row block of the (|D|+|P|) x |M| matrix; kMed expects
// the |M| x |M| medication-history matrix.
std::vector<double> aggregate_effects(const data::CausalEffectMatrix& tau, Modality modality,
                                      const data::Vocabularies& vocab);

// w = Linear_{d/4->d}(ReLU(Linear_{1->d/4}(tau_bar))) for tau_bar of shape [n, 1].
template <typename T>
nn::Tensor<T> cwg_forward(const nn::Tensor<T>& tau_bar, const CwgParams<T>& params);

// h' = h * (1 + alpha * sigmoid(w)).
template <typename T>
nn::Tensor<T> modulate(const nn::Tensor<T>& h, const nn::Tensor<T>& w, double alpha);

}  // namespace cafemed::cwg
