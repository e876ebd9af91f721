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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cafemed/numerics/tensor.hpp"
#include "cafemed/rng.hpp"

namespace cafemed::nn {

// Differentiable tensor ops. Elementwise binaries accept identical shapes or a
// single-element operand on either side; there is no general broadcasting.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T c);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

// Full reductions to a single-element tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Sum over one axis; the axis is removed from the shape.
template <typename T> Tensor<T> sum_dim(const Tensor<T>& x, std::size_t axis);

// a[n,k] @ b[k,m].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// y[..., j] = sum_k x[..., k] W[k, j] + b[j]. `b` may be undefined (no bias).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b);

// Stride-1 cross-correlation with a 7x7 kernel and zero padding 3.
// x[B,Cin,H,W], k[Cout,Cin,7,7], b[Cout] -> [B,Cout,H,W].
template <typename T>
Tensor<T> conv2d_7x7(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b);

inline constexpr double kInstanceNormEps = 1e-5;

// Per-(sample, channel) normalization over H*W with population variance.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& beta, double eps = kInstanceNormEps);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// out.shape[i] = x.shape[dims[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& dims);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start,
                std::size_t length);
// Tiles a size-1 axis `n` times.
template <typename T>
Tensor<T> repeat_axis(const Tensor<T>& x, std::size_t axis, std::size_t n);

inline constexpr std::int64_t kPadIndex = -1;

// Row lookup into table[N,d]; kPadIndex yields a zero row with no gradient.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> rows);

// Constant sparse matrix in CSR form.
template <typename T>
struct CsrMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col;
  std::vector<T> value;

  T at(std::size_t r, std::size_t c) const;
};

// out[i, :] = sum_c A[rows[i], c] * E[c, :] for a constant A.
template <typename T>
Tensor<T> sparse_rows_matmul(const CsrMatrix<T>& A, std::span<const std::int64_t> rows,
                             const Tensor<T>& E);

// Inverted dropout. Identity in eval mode or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng);

// Mean over labels of the logistic loss, computed as
// max(s,0) - s*y + log1p(exp(-|s|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

template <typename T>
struct GruParams {
  Tensor<T> W_ir, W_iz, W_in;  // [in, hid]
  Tensor<T> W_hr, W_hz, W_hn;  // [hid, hid]
  Tensor<T> b_ir, b_iz, b_in;  // [hid]
  Tensor<T> b_hr, b_hz, b_hn;  // [hid]
};

// Gated recurrent unit with the reset gate applied inside the candidate:
//   r = sig(x W_ir + b_ir + h W_hr + b_hr)
//   z = sig(x W_iz + b_iz + h W_hz + b_hz)
//   n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
//   h' = (1 - z) * n + z * h
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p);

}  // namespace cafemed::nn
