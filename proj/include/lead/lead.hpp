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

#include <optional>
#include <string>
#include <vector>

#include "lead/config.hpp"
#include "lead/nn.hpp"

namespace lead {

template <class T>
struct FuseResult {
  Tensor<T> hidden;  // h'
  Tensor<T> gate;    // g, same shape as h
};

/// g = sigmoid(W [h ; e] + b) per position, then h' = (1-g)⊙h + g⊙e.
/// h: [T, d] (or [d]); e: [d], repeated along the sequence axis.
template <class T>
FuseResult<T> gated_fuse(const Tensor<T>& h, const Tensor<T>& e, const Linear<T>& gate) {
  if (h.rank() == 1) {
    auto r = gated_fuse(reshape(h, {1, h.dim(0)}), e, gate);
    return {reshape(r.hidden, {h.dim(0)}), reshape(r.gate, {h.dim(0)})};
  }
  if (e.rank() != 1 || h.rank() != 2 || e.dim(0) != h.dim(1)) {
    throw DimensionError("gated_fuse: hidden " + shape_str(h.shape()) + " vs expert embedding " +
                         shape_str(e.shape()));
  }
  auto g = sigmoid(gate(concat(h, expand_rows(e, h.dim(0)), 1)));
  return {interpolate(h, e, g), g};
}

/// Layer-wise projections phi^l and gates phi_gate^l. In shared_gate mode one
/// projection serves every layer while gates stay per layer.
template <class T>
struct LeadBlocks {
  InjectionMode mode = InjectionMode::kNone;
  std::vector<Mlp2<T>> projections;  // one, or one per layer
  std::vector<Linear<T>> gates;      // per layer, gate modes only
  std::size_t n_layers = 0;

  LeadBlocks() = default;
  LeadBlocks(Initializer<T>& init, const ModelConfig& c) : mode(c.injection_mode), n_layers(c.n_layers) {
    if (!injects(mode)) return;
    const std::size_t d = c.d_model;
    if (mode == InjectionMode::kSharedGate) {
      projections.emplace_back(init, "lead.proj_shared", d, d, d);
    } else {
      for (std::size_t l = 0; l < c.n_layers; ++l) {
        projections.emplace_back(init, "lead.proj" + std::to_string(l), d, d, d);
      }
    }
    if (has_gates(mode)) {
      for (std::size_t l = 0; l < c.n_layers; ++l) {
        gates.emplace_back(init, "lead.gate" + std::to_string(l), 2 * d, d);
        std::fill(gates.back().bias.values().begin(), gates.back().bias.values().end(),
                  static_cast<T>(c.gate_bias_init));
      }
    }
  }

  const Mlp2<T>& projection(std::size_t l) const {
    if (l >= n_layers) {
      throw IndexError("layer " + std::to_string(l) + " outside [0, " + std::to_string(n_layers) + ")");
    }
    if (projections.empty()) throw ConfigError(std::string("mode ") + to_string(mode) + " has no projections");
    return projections.size() == 1 ? projections[0] : projections[l];
  }

  /// e^l = phi^l(e).
  Tensor<T> project_layer(const Tensor<T>& e, std::size_t l) const {
    const auto& phi = projection(l);
    return reshape(phi(reshape(e, {1, e.numel()})), {e.numel()});
  }

  /// Applies this mode's injection to the hidden states of one layer. When
  /// `gate_out` is given and the mode gates, the gate tensor is stored there.
  Tensor<T> apply(const Tensor<T>& hidden, const Tensor<T>& e_l, std::size_t l, Tensor<T>* gate_out = nullptr) const {
    switch (mode) {
      case InjectionMode::kNone:
      case InjectionMode::kAuxOnly:
        return hidden;
      case InjectionMode::kLayerAdd:
        return add(hidden, e_l);
      case InjectionMode::kSharedGate:
      case InjectionMode::kLayerGate: {
        if (l >= gates.size()) throw IndexError("no gate for layer " + std::to_string(l));
        auto r = gated_fuse(hidden, e_l, gates[l]);
        if (gate_out) *gate_out = r.gate;
        return r.hidden;
      }
    }
    throw ConfigError("unknown injection mode");
  }
};

}  // namespace lead
