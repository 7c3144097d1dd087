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
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lead/tensor.hpp"

namespace lead {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Compares analytic gradients of `loss_fn` with central differences over every
/// scalar of every parameter. Returns the max of
/// |analytic - numeric| / max(1, |analytic|).
template <class T>
double finite_diff_check(const std::function<Tensor<T>()>& loss_fn,
                         std::vector<NamedTensor<T>> params, double eps = 1e-5) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw ContractError("finite_diff_check: eps must be in (0, 1e-2], got " + std::to_string(eps));
  }
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<T>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi].tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + static_cast<T>(eps);
      const double up = static_cast<double>(loss_fn().item());
      values[i] = saved - static_cast<T>(eps);
      const double down = static_cast<double>(loss_fn().item());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][i]);
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        throw NumericError("finite_diff_check: non-finite gradient for " + params[pi].name + "[" +
                           std::to_string(i) + "] (analytic " + std::to_string(a) + ", numeric " +
                           std::to_string(numeric) + ")");
      }
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace lead
