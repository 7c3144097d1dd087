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

#include <cmath>
#include <optional>
#include <string>

#include "lead/ops.hpp"
#include "lead/params.hpp"

namespace lead {

/// out = x·W_frozen + b + (alpha/r)·x·A·B. Only A and B are meant to train.
template <class T>
Tensor<T> lora_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& a,
                      const Tensor<T>& bmat, double alpha) {
  if (a.rank() != 2 || bmat.rank() != 2 || a.dim(0) != w.dim(0) || bmat.dim(1) != w.dim(1) ||
      a.dim(1) != bmat.dim(0)) {
    throw DimensionError("lora_linear: A " + shape_str(a.shape()) + " and B " + shape_str(bmat.shape()) +
                         " do not fit W " + shape_str(w.shape()));
  }
  const T s = static_cast<T>(alpha / static_cast<double>(a.dim(1)));
  return add(affine(x, w, b), scale(matmul(matmul(x, a), bmat), s));
}

template <class T>
struct Linear {
  Tensor<T> weight, bias;
  std::optional<Tensor<T>> lora_a, lora_b;
  double lora_alpha = 1.0;

  Linear() = default;

  /// Registers `<name>.weight` [in, out] and `<name>.bias` [out].
  Linear(Initializer<T>& init, const std::string& name, std::size_t in, std::size_t out, double std_scale = 1.0)
      : weight(init.normal(name + ".weight", {in, out}, std_scale / std::sqrt(static_cast<double>(in)))),
        bias(init.constant(name + ".bias", {out}, 0.0)) {}

  void add_lora(Initializer<T>& init, const std::string& name, std::size_t rank, double alpha) {
    const std::size_t in = weight.dim(0), out = weight.dim(1);
    lora_a = init.normal(name + ".lora_a", {in, rank}, 1.0 / std::sqrt(static_cast<double>(in)));
    lora_b = init.constant(name + ".lora_b", {rank, out}, 0.0);
    lora_alpha = alpha;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (lora_a && lora_active()) return lora_linear(x, weight, bias, *lora_a, *lora_b, lora_alpha);
    return affine(x, weight, bias);
  }

  // A frozen all-zero B contributes exactly nothing.
  bool lora_active() const {
    if (lora_b->requires_grad()) return true;
    for (T v : lora_b->values()) {
      if (v != T(0)) return true;
    }
    return false;
  }

  void set_identity(T shift = T(0)) {
    auto& w = weight.values();
    const std::size_t in = weight.dim(0), out = weight.dim(1);
    std::fill(w.begin(), w.end(), T(0));
    for (std::size_t i = 0; i < std::min(in, out); ++i) w[i * out + i] = T(1);
    std::fill(bias.values().begin(), bias.values().end(), shift);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(Initializer<T>& init, const std::string& name, std::size_t d)
      : gain(init.constant(name + ".gain", {d}, 1.0)), bias(init.constant(name + ".bias", {d}, 0.0)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

/// Two affine layers with GELU between.
template <class T>
struct Mlp2 {
  Linear<T> layer1, layer2;

  Mlp2() = default;
  Mlp2(Initializer<T>& init, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out)
      : layer1(init, name + ".layer1", in, hidden), layer2(init, name + ".layer2", hidden, out) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer2(gelu(layer1(x))); }

  /// Makes the map the identity on inputs well inside (-shift, +shift): the
  /// first layer shifts into GELU's linear regime, the second shifts back.
  void set_identity(T shift = T(20)) {
    layer1.set_identity(shift);
    layer2.set_identity(-shift);
  }
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + FFN(LN(x)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> q, k, v, o, up, down;
  std::size_t n_heads = 1;
  bool causal = true;

  TransformerBlock() = default;
  TransformerBlock(Initializer<T>& init, const std::string& name, std::size_t d, std::size_t d_ff,
                   std::size_t heads, bool is_causal, std::size_t depth)
      : ln1(init, name + ".ln1", d),
        ln2(init, name + ".ln2", d),
        q(init, name + ".attn.q", d, d),
        k(init, name + ".attn.k", d, d),
        v(init, name + ".attn.v", d, d),
        o(init, name + ".attn.o", d, d, 1.0 / std::sqrt(2.0 * static_cast<double>(depth))),
        up(init, name + ".ffn.up", d, d_ff),
        down(init, name + ".ffn.down", d_ff, d, 1.0 / std::sqrt(2.0 * static_cast<double>(depth))),
        n_heads(heads),
        causal(is_causal) {}

  void add_lora(Initializer<T>& init, const std::string& name, std::size_t rank, double alpha) {
    q.add_lora(init, name + ".attn.q", rank, alpha);
    k.add_lora(init, name + ".attn.k", rank, alpha);
    v.add_lora(init, name + ".attn.v", rank, alpha);
    o.add_lora(init, name + ".attn.o", rank, alpha);
    up.add_lora(init, name + ".ffn.up", rank, alpha);
    down.add_lora(init, name + ".ffn.down", rank, alpha);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto a = ln1(x);
    auto h = add(x, o(attention(q(a), k(a), v(a), n_heads, causal)));
    return add(h, down(gelu(up(ln2(h)))));
  }
};

}  // namespace lead
