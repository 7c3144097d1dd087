// Copyright 2026 The LEAD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lead/tensor.hpp"

namespace lead {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
ConstMatMap<T> as_mat(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <class T>
MatMap<T> as_mat(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

template <class T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

// True when b can be applied to a either elementwise or as a row vector
// repeated along the leading (sequence) axis.
template <class T>
bool row_broadcast(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return false;
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return true;
  shape_mismatch(op, a.shape(), b.shape());
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
  detail::require_rank("matmul", x, 2);
  detail::require_rank("matmul", w, 2);
  if (x.dim(1) != w.dim(0)) detail::shape_mismatch("matmul", x.shape(), w.shape());
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  std::vector<T> out(n * m);
  detail::as_mat(out, n, m).noalias() = detail::as_mat(x.values(), n, k) * detail::as_mat(w.values(), k, m);
  auto xn = x.node();
  auto wn = w.node();
  return detail::record<T>({n, m}, std::move(out), {&x, &w}, [xn, wn, n, k, m](Node<T>& self) {
    auto g = detail::as_mat(std::as_const(self.grad), n, m);
    if (xn->requires_grad) {
      detail::as_mat(xn->grad_buffer(), n, k).noalias() += g * detail::as_mat(std::as_const(wn->value), k, m).transpose();
    }
    if (wn->requires_grad) {
      detail::as_mat(wn->grad_buffer(), k, m).noalias() += detail::as_mat(std::as_const(xn->value), n, k).transpose() * g;
    }
  });
}

/// out = x·W + b with b repeated over rows.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("affine", x, 2);
  detail::require_rank("affine", w, 2);
  if (x.dim(1) != w.dim(0)) detail::shape_mismatch("affine", x.shape(), w.shape());
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) detail::shape_mismatch("affine", w.shape(), b.shape());
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  std::vector<T> out(n * m);
  auto o = detail::as_mat(out, n, m);
  o.noalias() = detail::as_mat(x.values(), n, k) * detail::as_mat(w.values(), k, m);
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.values().data(), static_cast<Eigen::Index>(m));
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return detail::record<T>({n, m}, std::move(out), {&x, &w, &b}, [xn, wn, bn, n, k, m](Node<T>& self) {
    auto g = detail::as_mat(std::as_const(self.grad), n, m);
    if (xn->requires_grad) {
      detail::as_mat(xn->grad_buffer(), n, k).noalias() += g * detail::as_mat(std::as_const(wn->value), k, m).transpose();
    }
    if (wn->requires_grad) {
      detail::as_mat(wn->grad_buffer(), k, m).noalias() += detail::as_mat(std::as_const(xn->value), n, k).transpose() * g;
    }
    if (bn->requires_grad) {
      // Plain row loop: Eigen's partial redux depends on buffer alignment.
      auto& gb = bn->grad_buffer();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) gb[c] += self.grad[r * m + c];
      }
    }
  });
}

namespace detail {

// Shared body of add/sub/hadamard: same shape, or b a row vector over a's rows.
template <class T, class Fwd, class GradA, class GradB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, GradA ga, GradB gb) {
  const bool bcast = row_broadcast(op, a, b);
  const std::size_t n = a.numel();
  const std::size_t width = bcast ? b.numel() : n;
  std::vector<T> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % width]);
  auto an = a.node();
  auto bn = b.node();
  return record<T>(a.shape(), std::move(out), {&a, &b}, [an, bn, n, width, ga, gb](Node<T>& self) {
    const auto& g = self.grad;
    if (an->requires_grad) {
      auto& dst = an->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) dst[i] += ga(g[i], an->value[i], bn->value[i % width]);
    }
    if (bn->requires_grad) {
      auto& dst = bn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) dst[i % width] += gb(g[i], an->value[i], bn->value[i % width]);
    }
  });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  auto xn = x.node();
  // deriv(x, y) may use the output y.
  return record<T>(x.shape(), std::move(out), {&x}, [xn, n, deriv](Node<T>& self) {
    auto& dst = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) dst[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

/// Elementwise product; b may be a row vector repeated along the sequence axis.
template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      "hadamard", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

/// Numerically stable logistic function, evaluated branch-wise on the sign.
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// tanh-approximated GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  return detail::unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T u = c * (v + a * v * v * v);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(3) * a * v * v);
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
      });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  auto xn = x.node();
  return detail::record<T>({}, {acc}, {&x}, [xn](Node<T>& self) {
    auto& dst = xn->grad_buffer();
    for (auto& d : dst) d += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) detail::shape_mismatch("reshape", x.shape(), shape);
  auto xn = x.node();
  return detail::record<T>(std::move(shape), x.values(), {&x}, [xn](Node<T>& self) {
    auto& dst = xn->grad_buffer();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i];
  });
}

namespace detail {

// View of a shape as (outer, axis, inner) blocks around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

/// Joins two tensors along `axis`; all other dimensions must agree.
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) detail::shape_mismatch("concat", a.shape(), b.shape());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) detail::shape_mismatch("concat", a.shape(), b.shape());
  }
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  const auto sa = detail::split_at(a.shape(), axis);
  const auto sb = detail::split_at(b.shape(), axis);
  const std::size_t ra = sa.extent * sa.inner, rb = sb.extent * sb.inner;
  std::vector<T> out;
  out.reserve(numel_of(shape));
  for (std::size_t o = 0; o < sa.outer; ++o) {
    out.insert(out.end(), a.values().begin() + o * ra, a.values().begin() + (o + 1) * ra);
    out.insert(out.end(), b.values().begin() + o * rb, b.values().begin() + (o + 1) * rb);
  }
  auto an = a.node();
  auto bn = b.node();
  const std::size_t outer = sa.outer;
  return detail::record<T>(std::move(shape), std::move(out), {&a, &b}, [an, bn, outer, ra, rb](Node<T>& self) {
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = self.grad.data() + o * (ra + rb);
      if (an->requires_grad) {
        auto& d = an->grad_buffer();
        for (std::size_t i = 0; i < ra; ++i) d[o * ra + i] += src[i];
      }
      if (bn->requires_grad) {
        auto& d = bn->grad_buffer();
        for (std::size_t i = 0; i < rb; ++i) d[o * rb + i] += src[ra + i];
      }
    }
  });
}

/// Sub-range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    throw IndexError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const auto s = detail::split_at(x.shape(), axis);
  const std::size_t row = s.extent * s.inner, width = (end - begin) * s.inner, off = begin * s.inner;
  std::vector<T> out;
  out.reserve(s.outer * width);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const auto first = x.values().begin() + o * row + off;
    out.insert(out.end(), first, first + width);
  }
  auto xn = x.node();
  const std::size_t outer = s.outer;
  return detail::record<T>(std::move(shape), std::move(out), {&x}, [xn, outer, row, width, off](Node<T>& self) {
    auto& d = xn->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < width; ++i) d[o * row + off + i] += self.grad[o * width + i];
    }
  });
}

/// Repeats a [d] vector n times into [n, d].
template <class T>
Tensor<T> expand_rows(const Tensor<T>& v, std::size_t n) {
  detail::require_rank("expand_rows", v, 1);
  const std::size_t d = v.dim(0);
  std::vector<T> out;
  out.reserve(n * d);
  for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), v.values().begin(), v.values().end());
  auto vn = v.node();
  return detail::record<T>({n, d}, std::move(out), {&v}, [vn, n, d](Node<T>& self) {
    auto& g = vn->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

/// Mean over rows: [n, d] -> [d].
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require_rank("mean_rows", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n == 0) throw DimensionError("mean_rows over zero rows");
  std::vector<T> out(d, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x.values()[r * d + j];
  }
  const T inv = T(1) / static_cast<T>(n);
  for (auto& v : out) v *= inv;
  auto xn = x.node();
  return detail::record<T>({d}, std::move(out), {&x}, [xn, n, d, inv](Node<T>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[j] * inv;
    }
  });
}

/// Multiplies row i of x by s[i].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  detail::require_rank("scale_rows", x, 2);
  if (s.rank() != 1 || s.dim(0) != x.dim(0)) detail::shape_mismatch("scale_rows", x.shape(), s.shape());
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.values()[r * d + j] * s.values()[r];
  }
  auto xn = x.node();
  auto sn = s.node();
  return detail::record<T>({n, d}, std::move(out), {&x, &s}, [xn, sn, n, d](Node<T>& self) {
    for (std::size_t r = 0; r < n; ++r) {
      T acc = T(0);
      for (std::size_t j = 0; j < d; ++j) {
        const T g = self.grad[r * d + j];
        if (xn->requires_grad) xn->grad_buffer()[r * d + j] += g * sn->value[r];
        acc += g * xn->value[r * d + j];
      }
      if (sn->requires_grad) sn->grad_buffer()[r] += acc;
    }
  });
}

/// Row lookup: ids index rows of table [V, d].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  detail::require_rank("embedding", table, 2);
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out;
  out.reserve(ids.size() * d);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
    const auto first = table.values().begin() + static_cast<std::ptrdiff_t>(id) * static_cast<std::ptrdiff_t>(d);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(d));
  }
  auto tn = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return detail::record<T>({ids.size(), d}, std::move(out), {&table}, [tn, idv, d](Node<T>& self) {
    auto& g = tn->grad_buffer();
    for (std::size_t r = 0; r < idv.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idv[r]) * d + j] += self.grad[r * d + j];
    }
  });
}

/// Normalizes each row of x to zero mean, unit variance, then applies gain/bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.cols();
  if (d == 0) throw DimensionError("layer_norm over an empty axis");
  if (gain.rank() != 1 || gain.dim(0) != d) detail::shape_mismatch("layer_norm", x.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != d) detail::shape_mismatch("layer_norm", x.shape(), bias.shape());
  const std::size_t n = x.numel() / d;
  std::vector<T> out(n * d), xhat(n * d), inv_std(n);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.values()[j] + bias.values()[j];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return detail::record<T>(x.shape(), std::move(out), {&x, &gain, &bias},
                           [xn, gn, bn, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    const auto& g = self.grad;
    for (std::size_t r = 0; r < n; ++r) {
      T sum_dh = T(0), sum_dh_h = T(0);
      for (std::size_t j = 0; j < d; ++j) {
        const T gj = g[r * d + j];
        if (gn->requires_grad) gn->grad_buffer()[j] += gj * xhat[r * d + j];
        if (bn->requires_grad) bn->grad_buffer()[j] += gj;
        const T dh = gj * gn->value[j];
        sum_dh += dh;
        sum_dh_h += dh * xhat[r * d + j];
      }
      if (xn->requires_grad) {
        auto& dx = xn->grad_buffer();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = g[r * d + j] * gn->value[j];
          dx[r * d + j] += inv_std[r] * (dh - inv_d * sum_dh - xhat[r * d + j] * inv_d * sum_dh_h);
        }
      }
    }
  });
}

/// Per-element interpolation (1-g)*h + g*e computed with std::lerp, so g == 0
/// returns h exactly, g == 1 returns e exactly, and results stay between h and
/// e. e may be a row vector broadcast over the rows of h.
template <class T>
Tensor<T> interpolate(const Tensor<T>& h, const Tensor<T>& e, const Tensor<T>& g) {
  const bool bcast = detail::row_broadcast("interpolate", h, e);
  if (g.shape() != h.shape()) detail::shape_mismatch("interpolate", h.shape(), g.shape());
  const std::size_t n = h.numel();
  const std::size_t width = bcast ? e.numel() : n;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::lerp(h.values()[i], e.values()[i % width], g.values()[i]);
  auto hn = h.node();
  auto en = e.node();
  auto gn = g.node();
  return detail::record<T>(h.shape(), std::move(out), {&h, &e, &g}, [hn, en, gn, n, width](Node<T>& self) {
    const auto& g = self.grad;
    const auto& gv = gn->value;
    if (hn->requires_grad) {
      auto& dh = hn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) dh[i] += (T(1) - gv[i]) * g[i];
    }
    if (en->requires_grad) {
      auto& de = en->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) de[i % width] += gv[i] * g[i];
    }
    if (gn->requires_grad) {
      auto& dg = gn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) dg[i] += (en->value[i % width] - hn->value[i]) * g[i];
    }
  });
}

/// Multi-head scaled dot-product attention over q, k, v of shape [S, d]. With
/// `causal`, position i attends to positions <= i only.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t n_heads, bool causal) {
  detail::require_rank("attention", q, 2);
  if (k.shape() != q.shape()) detail::shape_mismatch("attention", q.shape(), k.shape());
  if (v.shape() != q.shape()) detail::shape_mismatch("attention", q.shape(), v.shape());
  const std::size_t s = q.dim(0), d = q.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto S = static_cast<Eigen::Index>(s);
  const auto DH = static_cast<Eigen::Index>(dh);
  auto Q = detail::as_mat(q.values(), s, d);
  auto K = detail::as_mat(k.values(), s, d);
  auto V = detail::as_mat(v.values(), s, d);
  std::vector<T> out(s * d);
  auto O = detail::as_mat(out, s, d);
  // Row-major probabilities per head, kept for the backward pass.
  std::vector<T> probs(n_heads * s * s);
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto P = detail::MatMap<T>(probs.data() + h * s * s, S, S);
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    P.noalias() = Q.middleCols(c0, DH) * K.middleCols(c0, DH).transpose();
    for (Eigen::Index i = 0; i < S; ++i) {
      const Eigen::Index lim = causal ? i + 1 : S;
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < lim; ++j) mx = std::max(mx, P(i, j) * inv_sqrt);
      T z = T(0);
      for (Eigen::Index j = 0; j < lim; ++j) {
        const T e = std::exp(P(i, j) * inv_sqrt - mx);
        P(i, j) = e;
        z += e;
      }
      for (Eigen::Index j = 0; j < lim; ++j) P(i, j) /= z;
      for (Eigen::Index j = lim; j < S; ++j) P(i, j) = T(0);
    }
    O.middleCols(c0, DH).noalias() = P * V.middleCols(c0, DH);
  }
  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  return detail::record<T>({s, d}, std::move(out), {&q, &k, &v},
                           [qn, kn, vn, s, d, n_heads, dh, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
    const auto S = static_cast<Eigen::Index>(s);
    const auto DH = static_cast<Eigen::Index>(dh);
    auto G = detail::as_mat(std::as_const(self.grad), s, d);
    auto Q = detail::as_mat(std::as_const(qn->value), s, d);
    auto K = detail::as_mat(std::as_const(kn->value), s, d);
    auto V = detail::as_mat(std::as_const(vn->value), s, d);
    detail::RowMat<T> dP(S, S);
    for (std::size_t h = 0; h < n_heads; ++h) {
      auto P = detail::ConstMatMap<T>(probs.data() + h * s * s, S, S);
      const auto c0 = static_cast<Eigen::Index>(h * dh);
      if (vn->requires_grad) {
        detail::as_mat(vn->grad_buffer(), s, d).middleCols(c0, DH).noalias() += P.transpose() * G.middleCols(c0, DH);
      }
      if (!qn->requires_grad && !kn->requires_grad) continue;
      dP.noalias() = G.middleCols(c0, DH) * V.middleCols(c0, DH).transpose();
      // Softmax Jacobian: dS = P ⊙ (dP - rowsum(dP ⊙ P)); masked entries have P = 0.
      for (Eigen::Index i = 0; i < S; ++i) {
        T dot = T(0);
        for (Eigen::Index j = 0; j < S; ++j) dot += dP(i, j) * P(i, j);
        for (Eigen::Index j = 0; j < S; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
      }
      if (qn->requires_grad) {
        detail::as_mat(qn->grad_buffer(), s, d).middleCols(c0, DH).noalias() += dP * K.middleCols(c0, DH);
      }
      if (kn->requires_grad) {
        detail::as_mat(kn->grad_buffer(), s, d).middleCols(c0, DH).noalias() += dP.transpose() * Q.middleCols(c0, DH);
      }
    }
  });
}

}  // namespace lead
