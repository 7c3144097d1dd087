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

#include <string>
#include <vector>

#include "lead/backbone.hpp"

namespace lead {

/// Output of the expert branch for one image.
template <class T>
struct ExpertBundle {
  Tensor<T> logits;       // s: [C]
  Tensor<T> confidences;  // p = sigmoid(s): [C]
  Tensor<T> features;     // f: [C, d_exp]
  Tensor<T> embedding;    // e: [d_model]
};

/// Three-layer MLP binary classifier; its penultimate activation is the
/// expert feature.
template <class T>
struct Expert {
  Linear<T> layer1, layer2, layer3;

  Expert() = default;
  Expert(Initializer<T>& init, const std::string& name, std::size_t in, std::size_t hidden, std::size_t d_exp)
      : layer1(init, name + ".layer1", in, hidden),
        layer2(init, name + ".layer2", hidden, d_exp),
        layer3(init, name + ".layer3", d_exp, 1) {}

  /// Returns (logit [1,1], feature [1, d_exp]).
  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& pooled) const {
    auto f = gelu(layer2(gelu(layer1(pooled))));
    return {layer3(f), f};
  }
};

/// C per-category experts over mean-pooled visual features, plus the affine
/// projection of confidence-scaled features into the decoder width.
template <class T>
struct ExpertModule {
  std::vector<Expert<T>> experts;
  Linear<T> proj;
  std::size_t d_exp = 0;

  ExpertModule() = default;
  ExpertModule(Initializer<T>& init, const ModelConfig& c) : d_exp(c.d_exp) {
    for (std::size_t i = 0; i < c.n_categories; ++i) {
      experts.emplace_back(init, "expert." + std::to_string(i), c.d_vision, c.expert_hidden, c.d_exp);
    }
    proj = Linear<T>(init, "expert_proj", c.n_categories * c.d_exp, c.d_model);
  }

  /// s: [C] logits, f: [C, d_exp] features. Every expert sees the same pooled
  /// copy of the final-layer visual features.
  std::pair<Tensor<T>, Tensor<T>> forward(const VisualFeatures<T>& vf) const {
    if (experts.empty()) throw ConfigError("expert module has no experts");
    const auto pooled = reshape(mean_rows(vf.features), {1, vf.features.dim(1)});
    Tensor<T> s, f;
    for (const auto& ex : experts) {
      auto [si, fi] = ex(pooled);
      s = s.defined() ? concat(s, si, 1) : si;
      f = f.defined() ? concat(f, fi, 0) : fi;
    }
    return {reshape(s, {experts.size()}), f};
  }

  /// e = Proj(concat_i(sigmoid(s_i) * f_i)).
  Tensor<T> aggregate(const Tensor<T>& s, const Tensor<T>& f) const {
    if (s.rank() != 1 || f.rank() != 2 || f.dim(0) != s.dim(0) || s.dim(0) * f.dim(1) != proj.weight.dim(0)) {
      throw ConfigError("aggregate_confidence: logits " + shape_str(s.shape()) + " and features " +
                        shape_str(f.shape()) + " do not fit projection " + shape_str(proj.weight.shape()));
    }
    const auto weighted = scale_rows(f, sigmoid(s));
    const auto flat = reshape(weighted, {1, f.numel()});
    return reshape(proj(flat), {proj.weight.dim(1)});
  }
};

}  // namespace lead
