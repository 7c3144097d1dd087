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

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lead/config.hpp"
#include "lead/gradcheck.hpp"
#include "lead/rng.hpp"
#include "lead/tensor.hpp"

namespace lead {

enum class ParamGroup { kVisionEncoder, kConnector, kLlmBase, kLoraAdapters, kExpertModule, kLeadBlocks };

inline constexpr std::array<ParamGroup, 6> kAllGroups = {
    ParamGroup::kVisionEncoder, ParamGroup::kConnector,    ParamGroup::kLlmBase,
    ParamGroup::kLoraAdapters,  ParamGroup::kExpertModule, ParamGroup::kLeadBlocks};

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kVisionEncoder: return "vision_encoder";
    case ParamGroup::kConnector: return "connector";
    case ParamGroup::kLlmBase: return "llm_base";
    case ParamGroup::kLoraAdapters: return "lora_adapters";
    case ParamGroup::kExpertModule: return "expert_module";
    case ParamGroup::kLeadBlocks: return "lead_blocks";
  }
  return "?";
}

/// Group membership follows from the parameter name.
inline ParamGroup group_of(std::string_view name) {
  if (name.find(".lora_") != std::string_view::npos) return ParamGroup::kLoraAdapters;
  if (name.starts_with("vision.")) return ParamGroup::kVisionEncoder;
  if (name.starts_with("connector.")) return ParamGroup::kConnector;
  if (name.starts_with("llm.")) return ParamGroup::kLlmBase;
  if (name.starts_with("expert")) return ParamGroup::kExpertModule;
  if (name.starts_with("lead.")) return ParamGroup::kLeadBlocks;
  throw ConfigError("parameter '" + std::string(name) + "' belongs to no group");
}

/// Trainable flag per parameter group.
struct ParameterPartition {
  bool vision_encoder = true;
  bool connector = true;
  bool llm_base = false;
  bool lora_adapters = true;
  bool expert_module = true;
  bool lead_blocks = true;

  bool trainable(ParamGroup g) const {
    switch (g) {
      case ParamGroup::kVisionEncoder: return vision_encoder;
      case ParamGroup::kConnector: return connector;
      case ParamGroup::kLlmBase: return llm_base;
      case ParamGroup::kLoraAdapters: return lora_adapters;
      case ParamGroup::kExpertModule: return expert_module;
      case ParamGroup::kLeadBlocks: return lead_blocks;
    }
    return false;
  }

  void validate(InjectionMode mode) const {
    if (lora_adapters && llm_base) {
      throw ConfigError("partition: llm_base must be frozen while lora_adapters are trainable");
    }
    if (has_experts(mode) && !expert_module) {
      throw ConfigError(std::string("partition: expert_module must be trainable in mode ") + to_string(mode));
    }
    if (injects(mode) && !lead_blocks) {
      throw ConfigError(std::string("partition: lead_blocks must be trainable in mode ") + to_string(mode));
    }
  }

  /// One of the four fine-tuning settings: vision tower and LLM (via LoRA)
  /// each frozen or trainable. Connector, experts and LEAD blocks always train.
  static ParameterPartition finetune(bool vision, bool llm) {
    ParameterPartition p;
    p.vision_encoder = vision;
    p.lora_adapters = llm;
    p.llm_base = false;
    return p;
  }

  /// Text-only language-model pretraining: only the LLM base weights train.
  static ParameterPartition pretrain() {
    ParameterPartition p;
    p.vision_encoder = p.connector = p.lora_adapters = p.expert_module = p.lead_blocks = false;
    p.llm_base = true;
    return p;
  }

  /// Names the setting: "frozen", "vision", "llm" or "hybrid".
  static ParameterPartition named(const std::string& name) {
    if (name == "frozen") return finetune(false, false);
    if (name == "vision") return finetune(true, false);
    if (name == "llm") return finetune(false, true);
    if (name == "hybrid") return finetune(true, true);
    throw ConfigError("field train.freeze: unknown setting '" + name +
                      "' (expected frozen, vision, llm or hybrid)");
  }
};

/// Ordered collection of named parameters.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    group_of(name);
    index_[name] = params_.size();
    params_.push_back({name, std::move(t)});
    return params_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("no parameter named " + name);
    return params_[it->second].tensor;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  std::vector<NamedTensor<T>>& all() { return params_; }
  const std::vector<NamedTensor<T>>& all() const { return params_; }

  std::vector<NamedTensor<T>> group(ParamGroup g) const {
    std::vector<NamedTensor<T>> out;
    for (const auto& p : params_) {
      if (group_of(p.name) == g) out.push_back(p);
    }
    return out;
  }

  /// Sets requires_grad on every parameter from its group's flag.
  void apply(const ParameterPartition& partition) {
    for (auto& p : params_) p.tensor.set_requires_grad(partition.trainable(group_of(p.name)));
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  /// FNV-1a over names and raw bytes of every parameter in the group.
  std::uint64_t group_hash(ParamGroup g) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& p : params_) {
      if (group_of(p.name) != g) continue;
      mix(p.name.data(), p.name.size());
      mix(p.tensor.values().data(), p.tensor.numel() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<NamedTensor<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Deterministic initializer: each parameter draws from its own stream keyed
/// by name, so a weight's initial value does not depend on which other modules
/// exist.
template <class T>
class Initializer {
 public:
  Initializer(ParamStore<T>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  Tensor<T>& normal(const std::string& name, Shape shape, double stddev) {
    Rng rng(derive_seed(seed_, name));
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
    return store_.add(name, Tensor<T>(std::move(shape), std::move(v)));
  }

  Tensor<T>& constant(const std::string& name, Shape shape, double value) {
    return store_.add(name, Tensor<T>::full(std::move(shape), static_cast<T>(value)));
  }

  ParamStore<T>& store() { return store_; }

 private:
  ParamStore<T>& store_;
  std::uint64_t seed_;
};

}  // namespace lead
