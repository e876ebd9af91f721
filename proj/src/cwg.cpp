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

#include "cafemed/cwg.hpp"

#include "cafemed/errors.hpp"
#include "cafemed/numerics/ops.hpp"

namespace cafemed::cwg {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kDiag: return "diag";
    case Modality::kProc: return "proc";
    case Modality::kMed: return "med";
  }
  return "?";
}

template <typename T>
CwgParams<T> CwgParams<T>::init(std::size_t d, Rng& rng) {
  if (d % 4 != 0 || d == 0) throw ConfigError("CWG needs d divisible by 4, got " + std::to_string(d));
  return {nn::uniform_init<T>({1, d / 4}, 1, rng), nn::zeros_param<T>({d / 4}),
          nn::uniform_init<T>({d / 4, d}, d / 4, rng), nn::zeros_param<T>({d})};
}

template <typename T>
CwgParams<T> CwgParams<T>::zeros(std::size_t d) {
  return {nn::zeros_param<T>({1, d / 4}), nn::zeros_param<T>({d / 4}),
          nn::zeros_param<T>({d / 4, d}), nn::zeros_param<T>({d})};
}

template <typename T>
void CwgParams<T>::append_to(nn::ParamList<T>& list, const std::string& prefix) const {
  list.push_back({prefix + ".W1", W1, true});
  list.push_back({prefix + ".b1", b1, false});
  list.push_back({prefix + ".W2", W2, true});
  list.push_back({prefix + ".b2", b2, false});
}

std::vector<double> aggregate_effects(const data::CausalEffectMatrix& tau, Modality modality,
                                      const data::Vocabularies& vocab) {
  std::size_t begin = 0, count = 0;
  if (modality == Modality::kMed) {
    if (tau.rows() != vocab.n_med || tau.cols() != vocab.n_med) {
      throw ConfigError("medication-history effects must be " + std::to_string(vocab.n_med) +
                        "x" + std::to_string(vocab.n_med));
    }
    count = vocab.n_med;
  } else {
    data::check_effects_shape(tau, vocab);
    begin = modality == Modality::kDiag ? 0 : vocab.n_diag;
    count = modality == Modality::kDiag ? vocab.n_diag : vocab.n_proc;
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    double s = 0.0;
    for (double v : tau.row(begin + i)) s += v;
    out[i] = s / static_cast<double>(tau.cols());
  }
  return out;
}

template <typename T>
nn::Tensor<T> cwg_forward(const nn::Tensor<T>& tau_bar, const CwgParams<T>& p) {
  return nn::linear(nn::relu(nn::linear(tau_bar, p.W1, p.b1)), p.W2, p.b2);
}

template <typename T>
nn::Tensor<T> modulate(const nn::Tensor<T>& h, const nn::Tensor<T>& w, double alpha) {
  auto gain = nn::add_scalar(nn::mul_scalar(nn::sigmoid(w), static_cast<T>(alpha)), T(1));
  return nn::mul(h, gain);
}

template struct CwgParams<float>;
template struct CwgParams<double>;
template nn::Tensor<float> cwg_forward(const nn::Tensor<float>&, const CwgParams<float>&);
template nn::Tensor<double> cwg_forward(const nn::Tensor<double>&, const CwgParams<double>&);
template nn::Tensor<float> modulate(const nn::Tensor<float>&, const nn::Tensor<float>&, double);
template nn::Tensor<double> modulate(const nn::Tensor<double>&, const nn::Tensor<double>&, double);

}  // namespace cafemed::cwg
