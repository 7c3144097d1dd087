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
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lead/ops.hpp"

namespace lead {

/// Mean next-token cross-entropy over the positions where mask is true.
/// logits: [T, vocab]; targets and mask: length T. An empty mask means every
/// position counts.
template <class T>
Tensor<T> generation_loss(const Tensor<T>& logits, std::span<const int> targets,
                          std::span<const bool> mask = {}) {
  detail::require_rank("generation_loss", logits, 2);
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n || (!mask.empty() && mask.size() != n)) {
    throw DimensionError("generation_loss: " + std::to_string(n) + " logit rows, " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) +
                         " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!mask.empty() && !mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw ContractError("generation_loss: target " + std::to_string(targets[t]) + " at position " +
                          std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw ContractError("generation_loss: mask selects no positions");

  std::vector<T> probs(n * vocab, T(0));
  T loss = T(0);
  const auto& lv = logits.values();
  for (std::size_t t = 0; t < n; ++t) {
    if (!mask.empty() && !mask[t]) continue;
    const T* row = lv.data() + t * vocab;
    T mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    loss += lse - row[targets[t]];
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] = std::exp(row[j] - lse);
  }
  const T inv = T(1) / static_cast<T>(count);
  auto ln = logits.node();
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<bool> mk(mask.begin(), mask.end());
  return detail::record<T>({}, {loss * inv}, {&logits},
                           [ln, n, vocab, inv, tg = std::move(tg), mk = std::move(mk), probs = std::move(probs)](Node<T>& self) {
    auto& g = ln->grad_buffer();
    const T up = self.grad[0] * inv;
    for (std::size_t t = 0; t < n; ++t) {
      if (!mk.empty() && !mk[t]) continue;
      for (std::size_t j = 0; j < vocab; ++j) g[t * vocab + j] += up * probs[t * vocab + j];
      g[t * vocab + static_cast<std::size_t>(tg[t])] -= up;
    }
  });
}

/// Multi-label binary cross-entropy from logits: summed over categories,
/// averaged over rows. logits: [C] or [B, C]; labels row-major in {0, 1}.
template <class T>
Tensor<T> classification_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (labels.size() != logits.numel()) {
    throw DimensionError("classification_loss: " + std::to_string(logits.numel()) + " logits, " +
                         std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ContractError("classification_loss: label " + std::to_string(labels[i]) + " at index " +
                          std::to_string(i) + " is not 0 or 1");
    }
  }
  const std::size_t batch = logits.rank() == 2 ? logits.dim(0) : 1;
  const auto& s = logits.values();
  T loss = T(0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    // max(s,0) - s*c + log(1 + exp(-|s|))
    loss += std::max(s[i], T(0)) - s[i] * static_cast<T>(labels[i]) + std::log1p(std::exp(-std::abs(s[i])));
  }
  const T inv = T(1) / static_cast<T>(batch);
  auto sn = logits.node();
  std::vector<int> lb(labels.begin(), labels.end());
  return detail::record<T>({}, {loss * inv}, {&logits}, [sn, inv, lb = std::move(lb)](Node<T>& self) {
    auto& g = sn->grad_buffer();
    const T up = self.grad[0] * inv;
    for (std::size_t i = 0; i < lb.size(); ++i) {
      g[i] += up * (detail::stable_sigmoid(sn->value[i]) - static_cast<T>(lb[i]));
    }
  });
}

struct LossReport {
  double l_gen = 0.0;
  double l_cls = 0.0;
  double lambda = 4.0;
  double total = 0.0;
};

inline constexpr double kDefaultLambda = 4.0;

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0)) {
    throw ConfigError("lambda must be >= 0, got " + std::to_string(lambda));
  }
}

inline LossReport total_loss(double l_gen, double l_cls, double lambda = kDefaultLambda) {
  check_lambda(lambda);
  return {l_gen, l_cls, lambda, l_gen + lambda * l_cls};
}

/// Graph form of the composite objective.
template <class T>
Tensor<T> total_loss(const Tensor<T>& l_gen, const Tensor<T>& l_cls, double lambda = kDefaultLambda) {
  check_lambda(lambda);
  return add(l_gen, scale(l_cls, static_cast<T>(lambda)));
}

}  // namespace lead
