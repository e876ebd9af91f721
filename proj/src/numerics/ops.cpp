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

#include "cafemed/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "cafemed/errors.hpp"

namespace cafemed::nn {

namespace {

template <typename T>
using NodeP = std::shared_ptr<detail::Node<T>>;

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

enum class Bcast { kSame, kRightScalar, kLeftScalar };

template <typename T>
Bcast check_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kRightScalar;
  if (a.numel() == 1) return Bcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()) +
                       " are neither identical nor tensor-scalar");
}

// Shared kernel for add/sub/mul with optional scalar operand.
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                 DA da, DB db) {
  const Bcast mode = check_binary(op, a, b);
  const Shape& out_shape = mode == Bcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  const std::size_t sa = mode == Bcast::kLeftScalar ? 0 : 1;
  const std::size_t sb = mode == Bcast::kRightScalar ? 0 : 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i * sa], bv[i * sb]);
  NodeP<T> an = a.node(), bn = b.node();
  return detail::make_result<T>(
      op, out_shape, std::move(out), {an, bn},
      [an, bn, sa, sb, n, da, db](detail::Node<T>& o) {
        const auto& x = an->value;
        const auto& y = bn->value;
        if (an->requires_grad) {
          for (std::size_t i = 0; i < n; ++i)
            an->grad[i * sa] += o.grad[i] * da(x[i * sa], y[i * sb]);
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < n; ++i)
            bn->grad[i * sb] += o.grad[i] * db(x[i * sa], y[i * sb]);
        }
      });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  auto xv = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  NodeP<T> xn = x.node();
  return detail::make_result<T>(op, x.shape(), std::move(out), {xn},
                                [xn, deriv](detail::Node<T>& o) {
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    xn->grad[i] += o.grad[i] * deriv(xn->value[i], o.value[i]);
                                });
}

// Gathers values by a flat index map; backward scatters.
template <typename T>
Tensor<T> relocate(const char* op, const Tensor<T>& x, Shape out_shape,
                   std::vector<std::size_t> src) {
  auto xv = x.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  NodeP<T> xn = x.node();
  return detail::make_result<T>(
      op, std::move(out_shape), std::move(out), {xn},
      [xn, src = std::move(src)](detail::Node<T>& o) {
        for (std::size_t i = 0; i < src.size(); ++i) xn->grad[src[i]] += o.grad[i];
      });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("add", a, b, [](T x, T y) { return x + y; },
                   [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("sub", a, b, [](T x, T y) { return x - y; },
                   [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("mul", a, b, [](T x, T y) { return x * y; },
                   [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary<T>("add_scalar", x, [c](T v) { return v + c; },
                  [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return unary<T>("mul_scalar", x, [c](T v) { return v * c; },
                  [c](T, T) { return c; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>("sigmoid", x, [](T v) { return sigmoid_scalar(v); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v < T(0) ? T(0) : v; },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  NodeP<T> xn = x.node();
  return detail::make_result<T>("sum", Shape{1}, {s}, {xn}, [xn](detail::Node<T>& o) {
    const T g = o.grad[0];
    for (auto& gi : xn->grad) gi += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_dim(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("sum_dim: axis out of range for " + shape_str(s));
  const std::size_t outer = prod(s, 0, axis), n = s[axis], inner = prod(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  auto xv = x.data();
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + k) * inner + i];
  NodeP<T> xn = x.node();
  return detail::make_result<T>(
      "sum_dim", std::move(out_shape), std::move(out), {xn},
      [xn, outer, n, inner](detail::Node<T>& o) {
        for (std::size_t a = 0; a < outer; ++a)
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i)
              xn->grad[(a * n + k) * inner + i] += o.grad[a * inner + i];
      });
}

namespace {

// out[n,m] += a[n,k] @ b[k,m]
template <typename T>
void gemm_acc(const T* a, const T* b, T* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

// Backward of out = a @ b given gout; accumulates into ga / gb when non-null.
template <typename T>
void gemm_backward(const T* a, const T* b, const T* gout, T* ga, T* gb, std::size_t n,
                   std::size_t k, std::size_t m) {
  if (ga) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * m;
        const T* grow = gout + i * m;
        T s = T(0);
        for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
        ga[i * k + p] += s;
      }
  }
  if (gb) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        if (av == T(0)) continue;
        const T* grow = gout + i * m;
        T* gbrow = gb + p * m;
        for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
      }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  std::vector<T> out(n * m, T(0));
  gemm_acc(a.data().data(), b.data().data(), out.data(), n, k, m);
  NodeP<T> an = a.node(), bn = b.node();
  return detail::make_result<T>(
      "matmul", Shape{n, m}, std::move(out), {an, bn}, [an, bn, n, k, m](detail::Node<T>& o) {
        gemm_backward(an->value.data(), bn->value.data(), o.grad.data(),
                      an->requires_grad ? an->grad.data() : nullptr,
                      bn->requires_grad ? bn->grad.data() : nullptr, n, k, m);
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  if (x.dim() == 0 || W.dim() != 2 || x.shape().back() != W.size(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(W.shape()));
  }
  const bool has_bias = b.defined();
  const std::size_t in = W.size(0), outd = W.size(1), rows = x.numel() / in;
  if (has_bias && (b.dim() != 1 || b.size(0) != outd)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(W.shape()));
  }
  std::vector<T> out(rows * outd, T(0));
  if (has_bias) {
    auto bv = b.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * outd);
  }
  gemm_acc(x.data().data(), W.data().data(), out.data(), rows, in, outd);
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  NodeP<T> xn = x.node(), wn = W.node();
  std::vector<NodeP<T>> parents{xn, wn};
  NodeP<T> bn = has_bias ? b.node() : nullptr;
  if (bn) parents.push_back(bn);
  return detail::make_result<T>(
      "linear", std::move(out_shape), std::move(out), std::move(parents),
      [xn, wn, bn, rows, in, outd](detail::Node<T>& o) {
        gemm_backward(xn->value.data(), wn->value.data(), o.grad.data(),
                      xn->requires_grad ? xn->grad.data() : nullptr,
                      wn->requires_grad ? wn->grad.data() : nullptr, rows, in, outd);
        if (bn && bn->requires_grad) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < outd; ++j) bn->grad[j] += o.grad[r * outd + j];
        }
      });
}

namespace {

constexpr std::size_t kK = 7;
constexpr std::ptrdiff_t kPad = 3;

// Visits every valid (output, input) pair of a padded 7x7 window:
// fn(out_offset, in_offset, count) over contiguous row spans.
template <typename Fn>
void for_each_tap(std::size_t H, std::size_t W, std::size_t kh, std::size_t kw, Fn fn) {
  const auto h = static_cast<std::ptrdiff_t>(H), w = static_cast<std::ptrdiff_t>(W);
  const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(kh) - kPad;
  const std::ptrdiff_t dw = static_cast<std::ptrdiff_t>(kw) - kPad;
  const std::ptrdiff_t oh0 = std::max<std::ptrdiff_t>(0, -dh), oh1 = std::min(h, h - dh);
  const std::ptrdiff_t ow0 = std::max<std::ptrdiff_t>(0, -dw), ow1 = std::min(w, w - dw);
  if (oh0 >= oh1 || ow0 >= ow1) return;
  for (std::ptrdiff_t oh = oh0; oh < oh1; ++oh) {
    fn(static_cast<std::size_t>(oh * w + ow0),
       static_cast<std::size_t>((oh + dh) * w + ow0 + dw),
       static_cast<std::size_t>(ow1 - ow0));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_7x7(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
  if (x.dim() != 4 || k.dim() != 4 || k.size(2) != kK || k.size(3) != kK ||
      x.size(1) != k.size(1) || b.dim() != 1 || b.size(0) != k.size(0)) {
    throw DimensionError("conv2d_7x7: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(k.shape()) + ", bias " + shape_str(b.shape()) +
                         " are incompatible");
  }
  const std::size_t B = x.size(0), Ci = x.size(1), H = x.size(2), W = x.size(3), Co = k.size(0);
  const std::size_t plane = H * W;
  auto xv = x.data();
  auto kv = k.data();
  auto bv = b.data();
  std::vector<T> out(B * Co * plane);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t co = 0; co < Co; ++co) {
      T* op = out.data() + (bi * Co + co) * plane;
      std::fill(op, op + plane, bv[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* ip = xv.data() + (bi * Ci + ci) * plane;
        const T* kp = kv.data() + (co * Ci + ci) * kK * kK;
        for (std::size_t kh = 0; kh < kK; ++kh)
          for (std::size_t kw = 0; kw < kK; ++kw) {
            const T wv = kp[kh * kK + kw];
            for_each_tap(H, W, kh, kw, [&](std::size_t oo, std::size_t io, std::size_t cnt) {
              for (std::size_t t = 0; t < cnt; ++t) op[oo + t] += wv * ip[io + t];
            });
          }
      }
    }
  NodeP<T> xn = x.node(), kn = k.node(), bn = b.node();
  return detail::make_result<T>(
      "conv2d_7x7", Shape{B, Co, H, W}, std::move(out), {xn, kn, bn},
      [xn, kn, bn, B, Ci, Co, H, W, plane](detail::Node<T>& o) {
        const T* g = o.grad.data();
        if (bn->requires_grad) {
          for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t co = 0; co < Co; ++co) {
              const T* gp = g + (bi * Co + co) * plane;
              T s = T(0);
              for (std::size_t i = 0; i < plane; ++i) s += gp[i];
              bn->grad[co] += s;
            }
        }
        const bool need_x = xn->requires_grad, need_k = kn->requires_grad;
        if (!need_x && !need_k) return;
        for (std::size_t bi = 0; bi < B; ++bi)
          for (std::size_t co = 0; co < Co; ++co) {
            const T* gp = g + (bi * Co + co) * plane;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const std::size_t xoff = (bi * Ci + ci) * plane;
              const std::size_t koff = (co * Ci + ci) * kK * kK;
              const T* ip = xn->value.data() + xoff;
              const T* kp = kn->value.data() + koff;
              for (std::size_t kh = 0; kh < kK; ++kh)
                for (std::size_t kw = 0; kw < kK; ++kw) {
                  const T wv = kp[kh * kK + kw];
                  T acc = T(0);
                  for_each_tap(H, W, kh, kw, [&](std::size_t oo, std::size_t io, std::size_t cnt) {
                    if (need_x) {
                      T* gx = xn->grad.data() + xoff;
                      for (std::size_t t = 0; t < cnt; ++t) gx[io + t] += wv * gp[oo + t];
                    }
                    if (need_k) {
                      for (std::size_t t = 0; t < cnt; ++t) acc += gp[oo + t] * ip[io + t];
                    }
                  });
                  if (need_k) kn->grad[koff + kh * kK + kw] += acc;
                }
            }
          }
      });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        double eps) {
  if (x.dim() != 4 || gamma.numel() != x.size(1) || beta.numel() != x.size(1)) {
    throw DimensionError("instance_norm: input " + shape_str(x.shape()) + " with gamma " +
                         shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  const std::size_t B = x.size(0), C = x.size(1), n = x.size(2) * x.size(3);
  if (n == 0) throw DimensionError("instance_norm: empty spatial extent");
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(B * C);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t c = bc % C;
    const T* p = xv.data() + bc * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += p[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(n);
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_std[bc] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = static_cast<T>(p[i] - mu) * is;
      xhat[bc * n + i] = xh;
      out[bc * n + i] = gv[c] * xh + bv[c];
    }
  }
  NodeP<T> xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result<T>(
      "instance_norm", x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, B, C, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          detail::Node<T>& o) {
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          const std::size_t c = bc % C;
          const T* g = o.grad.data() + bc * n;
          const T* xh = xhat.data() + bc * n;
          T sg = T(0), sgx = T(0);
          for (std::size_t i = 0; i < n; ++i) {
            sg += g[i];
            sgx += g[i] * xh[i];
          }
          if (bn->requires_grad) bn->grad[c] += sg;
          if (gn->requires_grad) gn->grad[c] += sgx;
          if (xn->requires_grad) {
            const T gam = gn->value[c];
            const T mg = sg / static_cast<T>(n), mgx = sgx / static_cast<T>(n);
            T* gx = xn->grad.data() + bc * n;
            for (std::size_t i = 0; i < n; ++i)
              gx[i] += gam * inv_std[bc] * (g[i] - mg - xh[i] * mgx);
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  auto xv = x.data();
  std::vector<T> out(xv.begin(), xv.end());
  NodeP<T> xn = x.node();
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {xn},
                                [xn](detail::Node<T>& o) {
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    xn->grad[i] += o.grad[i];
                                });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& dims) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  std::vector<bool> seen(r, false);
  bool ok = dims.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = dims[i] < r && !seen[dims[i]];
    if (ok) seen[dims[i]] = true;
  }
  if (!ok) throw DimensionError("permute: invalid dimension order for " + shape_str(s));
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[dims[i]];
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[dims[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return relocate<T>("permute", x, std::move(out_shape), std::move(src));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " does not match " + shape_str(s0) +
                           " off axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  const std::size_t outer = prod(s0, 0, axis), inner = prod(s0, axis + 1, s0.size());
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<NodeP<T>> nodes;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.size(axis) * inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * w, pv.begin() + (o + 1) * w,
                out.begin() + o * total * inner + offset);
    offset += w;
    nodes.push_back(p.node());
    widths.push_back(w);
  }
  auto parents = nodes;
  return detail::make_result<T>(
      "concat", std::move(out_shape), std::move(out), std::move(parents),
      [nodes, widths, outer, row = total * inner](detail::Node<T>& o) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          const std::size_t w = widths[pi];
          if (nodes[pi]->requires_grad) {
            for (std::size_t a = 0; a < outer; ++a)
              for (std::size_t i = 0; i < w; ++i)
                nodes[pi]->grad[a * w + i] += o.grad[a * row + off + i];
          }
          off += w;
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range on axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, axis), inner = prod(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<std::size_t> src;
  src.reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < length; ++k)
      for (std::size_t i = 0; i < inner; ++i) src.push_back((o * s[axis] + start + k) * inner + i);
  return relocate<T>("slice", x, std::move(out_shape), std::move(src));
}

template <typename T>
Tensor<T> repeat_axis(const Tensor<T>& x, std::size_t axis, std::size_t n) {
  const Shape& s = x.shape();
  if (axis >= s.size() || s[axis] != 1) {
    throw DimensionError("repeat_axis: axis " + std::to_string(axis) + " of " + shape_str(s) +
                         " is not of size 1");
  }
  const std::size_t outer = prod(s, 0, axis), inner = prod(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape[axis] = n;
  std::vector<std::size_t> src;
  src.reserve(outer * n * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) src.push_back(o * inner + i);
  return relocate<T>("repeat_axis", x, std::move(out_shape), std::move(src));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> rows) {
  if (table.dim() != 2) throw DimensionError("gather_rows: table must be 2-D, got " +
                                             shape_str(table.shape()));
  const std::size_t N = table.size(0), d = table.size(1);
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * d, T(0));
  auto tv = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] == kPadIndex) continue;
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= N) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[i]) +
                           " out of range for table " + shape_str(table.shape()));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, out.begin() + i * d);
  }
  NodeP<T> tn = table.node();
  Shape out_shape{idx.size(), d};
  return detail::make_result<T>(
      "gather_rows", std::move(out_shape), std::move(out), {tn},
      [tn, idx = std::move(idx), d](detail::Node<T>& o) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          if (idx[i] == kPadIndex) continue;
          T* g = tn->grad.data() + static_cast<std::size_t>(idx[i]) * d;
          for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[i * d + j];
        }
      });
}

template <typename T>
T CsrMatrix<T>::at(std::size_t r, std::size_t c) const {
  for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p)
    if (col[p] == c) return value[p];
  return T(0);
}

template <typename T>
Tensor<T> sparse_rows_matmul(const CsrMatrix<T>& A, std::span<const std::int64_t> rows,
                             const Tensor<T>& E) {
  if (E.dim() != 2 || E.size(0) != A.n_cols) {
    throw DimensionError("sparse_rows_matmul: matrix with " + std::to_string(A.n_cols) +
                         " columns vs embedding " + shape_str(E.shape()));
  }
  const std::size_t d = E.size(1);
  // Flattened copy of the needed rows so the closure owns its data.
  std::vector<std::size_t> ptr{0}, col;
  std::vector<T> val;
  for (std::int64_t r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= A.n_rows) {
      throw DimensionError("sparse_rows_matmul: row " + std::to_string(r) + " out of range");
    }
    for (std::size_t p = A.row_ptr[r]; p < A.row_ptr[r + 1]; ++p) {
      col.push_back(A.col[p]);
      val.push_back(A.value[p]);
    }
    ptr.push_back(col.size());
  }
  const std::size_t n = rows.size();
  std::vector<T> out(n * d, T(0));
  auto ev = E.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = ptr[i]; p < ptr[i + 1]; ++p) {
      const T a = val[p];
      const T* er = ev.data() + col[p] * d;
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += a * er[j];
    }
  NodeP<T> en = E.node();
  return detail::make_result<T>(
      "sparse_rows_matmul", Shape{n, d}, std::move(out), {en},
      [en, ptr = std::move(ptr), col = std::move(col), val = std::move(val), n,
       d](detail::Node<T>& o) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = ptr[i]; p < ptr[i + 1]; ++p) {
            T* g = en->grad.data() + col[p] * d;
            for (std::size_t j = 0; j < d; ++j) g[j] += val[p] * o.grad[i * d + j];
          }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  }
  if (!train || p == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(p) ? T(0) : scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (logits.numel() != targets.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(logits.numel()) + " logits vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = targets.size();
  auto s = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = s[i];
    loss += std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  loss /= static_cast<double>(n);
  NodeP<T> ln = logits.node();
  std::vector<T> y(targets.begin(), targets.end());
  return detail::make_result<T>("bce_with_logits", Shape{1}, {static_cast<T>(loss)}, {ln},
                                [ln, y = std::move(y), n](detail::Node<T>& o) {
                                  const T g = o.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i)
                                    ln->grad[i] += g * (sigmoid_scalar(ln->value[i]) - y[i]);
                                });
}

template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p) {
  if (x.dim() != 2 || h.dim() != 2 || x.size(0) != h.size(0)) {
    throw DimensionError("gru_cell: input " + shape_str(x.shape()) + " and hidden " +
                         shape_str(h.shape()) + " are incompatible");
  }
  auto r = sigmoid(add(linear(x, p.W_ir, p.b_ir), linear(h, p.W_hr, p.b_hr)));
  auto z = sigmoid(add(linear(x, p.W_iz, p.b_iz), linear(h, p.W_hz, p.b_hz)));
  auto n = tanh(add(linear(x, p.W_in, p.b_in), mul(r, linear(h, p.W_hn, p.b_hn))));
  return add(n, mul(z, sub(h, n)));
}

#define CAFEMED_INSTANTIATE_OPS(T)                                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                    \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                          \
  template Tensor<T> relu(const Tensor<T>&);                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                              \
  template Tensor<T> mean(const Tensor<T>&);                                             \
  template Tensor<T> sum_dim(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> conv2d_7x7(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   double);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                   \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                 \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);     \
  template Tensor<T> repeat_axis(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>);       \
  template struct CsrMatrix<T>;                                                          \
  template Tensor<T> sparse_rows_matmul(const CsrMatrix<T>&, std::span<const std::int64_t>, \
                                        const Tensor<T>&);                               \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                      \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);              \
  template Tensor<T> gru_cell(const Tensor<T>&, const Tensor<T>&, const GruParams<T>&);

CAFEMED_INSTANTIATE_OPS(float)
CAFEMED_INSTANTIATE_OPS(double)

#undef CAFEMED_INSTANTIATE_OPS

}  // namespace cafemed::nn
