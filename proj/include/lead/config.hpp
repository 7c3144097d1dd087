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

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lead/errors.hpp"

namespace lead {

/// Flat `key = value` configuration with dotted keys (model.*, train.*,
/// data.*, bias.*). '#' starts a comment. Later assignments win, which is how
/// command-line overrides are applied.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text) {
    FlatConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      if (trim(line).empty()) continue;
      try {
        cfg.set_assignment(line);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return cfg;
  }

  static FlatConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  /// Applies one `key=value` assignment.
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + trim(assignment) + "'");
    const std::string key = trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key in '" + trim(assignment) + "'");
    set(key, trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class Int>
  Int get_int(const std::string& key, Int fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    Int v{};
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("field " + key + ": expected an integer, got '" + s + "'");
    }
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return to_double(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("field " + key + ": expected true or false, got '" + it->second + "'");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
    return out;
  }

  /// Keys with the given prefix, consumed as a group.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0) {
        out.push_back(k);
        used_.insert(k);
      }
    }
    return out;
  }

  /// Keys never read by any consumer; usually typos.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("field " + key + ": expected a number, got '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

enum class InjectionMode { kNone, kAuxOnly, kSharedGate, kLayerAdd, kLayerGate };

inline const char* to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::kNone: return "none";
    case InjectionMode::kAuxOnly: return "aux_only";
    case InjectionMode::kSharedGate: return "shared_gate";
    case InjectionMode::kLayerAdd: return "layer_add";
    case InjectionMode::kLayerGate: return "layer_gate";
  }
  return "?";
}

inline InjectionMode parse_injection_mode(const std::string& s) {
  for (auto m : {InjectionMode::kNone, InjectionMode::kAuxOnly, InjectionMode::kSharedGate,
                 InjectionMode::kLayerAdd, InjectionMode::kLayerGate}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown injection mode '" + s +
                    "' (expected none, aux_only, shared_gate, layer_add or layer_gate)");
}

/// Modes that build the expert branch.
inline bool has_experts(InjectionMode m) { return m != InjectionMode::kNone; }
/// Modes that modify decoder hidden states.
inline bool injects(InjectionMode m) {
  return m == InjectionMode::kSharedGate || m == InjectionMode::kLayerAdd || m == InjectionMode::kLayerGate;
}
inline bool has_gates(InjectionMode m) {
  return m == InjectionMode::kSharedGate || m == InjectionMode::kLayerGate;
}

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 192;
  std::size_t patch_size = 8;
  std::size_t image_size = 64;
  std::size_t n_categories = 14;
  bool lora_enabled = true;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  InjectionMode injection_mode = InjectionMode::kLayerGate;
  // Vision tower and expert branch.
  std::size_t d_vision = 128;
  std::size_t vision_layers = 2;
  std::size_t vision_heads = 4;
  std::size_t d_exp = 32;
  std::size_t expert_hidden = 64;
  double gate_bias_init = -2.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t n_patches() const { return grid() * grid(); }
  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }

  void validate() const {
    std::vector<std::string> errs;
    auto positive = [&](const char* name, std::size_t v) {
      if (v == 0) errs.push_back(std::string("model.") + name + " must be >= 1");
    };
    positive("d_model", d_model);
    positive("n_layers", n_layers);
    positive("n_heads", n_heads);
    positive("d_ff", d_ff);
    positive("vocab_size", vocab_size);
    positive("max_seq_len", max_seq_len);
    positive("patch_size", patch_size);
    positive("image_size", image_size);
    positive("n_categories", n_categories);
    positive("d_vision", d_vision);
    positive("vision_heads", vision_heads);
    positive("d_exp", d_exp);
    positive("expert_hidden", expert_hidden);
    if (n_heads && d_model % n_heads) errs.push_back("model.d_model must be divisible by model.n_heads");
    if (vision_heads && d_vision % vision_heads) errs.push_back("model.d_vision must be divisible by model.vision_heads");
    if (patch_size && image_size % patch_size) errs.push_back("model.image_size must be divisible by model.patch_size");
    if (lora_enabled && lora_rank == 0) errs.push_back("model.lora_rank must be >= 1 when LoRA is enabled");
    if (!(lora_alpha > 0.0)) errs.push_back("model.lora_alpha must be > 0");
    if (!errs.empty()) {
      std::string msg = "invalid model configuration:";
      for (const auto& e : errs) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  void write(FlatConfig& out) const {
    out.set("model.d_model", std::to_string(d_model));
    out.set("model.n_layers", std::to_string(n_layers));
    out.set("model.n_heads", std::to_string(n_heads));
    out.set("model.d_ff", std::to_string(d_ff));
    out.set("model.vocab_size", std::to_string(vocab_size));
    out.set("model.max_seq_len", std::to_string(max_seq_len));
    out.set("model.patch_size", std::to_string(patch_size));
    out.set("model.image_size", std::to_string(image_size));
    out.set("model.n_categories", std::to_string(n_categories));
    out.set("model.lora_enabled", lora_enabled ? "true" : "false");
    out.set("model.lora_rank", std::to_string(lora_rank));
    out.set("model.lora_alpha", format_double(lora_alpha));
    out.set("model.injection_mode", to_string(injection_mode));
    out.set("model.d_vision", std::to_string(d_vision));
    out.set("model.vision_layers", std::to_string(vision_layers));
    out.set("model.vision_heads", std::to_string(vision_heads));
    out.set("model.d_exp", std::to_string(d_exp));
    out.set("model.expert_hidden", std::to_string(expert_hidden));
    out.set("model.gate_bias_init", format_double(gate_bias_init));
  }

  static ModelConfig read(const FlatConfig& in) { return read(in, ModelConfig()); }
  static ModelConfig read(const FlatConfig& in, ModelConfig base) {
    ModelConfig c = base;
    c.d_model = in.get_int("model.d_model", c.d_model);
    c.n_layers = in.get_int("model.n_layers", c.n_layers);
    c.n_heads = in.get_int("model.n_heads", c.n_heads);
    c.d_ff = in.get_int("model.d_ff", c.d_ff);
    c.vocab_size = in.get_int("model.vocab_size", c.vocab_size);
    c.max_seq_len = in.get_int("model.max_seq_len", c.max_seq_len);
    c.patch_size = in.get_int("model.patch_size", c.patch_size);
    c.image_size = in.get_int("model.image_size", c.image_size);
    c.n_categories = in.get_int("model.n_categories", c.n_categories);
    c.lora_enabled = in.get_bool("model.lora_enabled", c.lora_enabled);
    c.lora_rank = in.get_int("model.lora_rank", c.lora_rank);
    c.lora_alpha = in.get_double("model.lora_alpha", c.lora_alpha);
    c.injection_mode = parse_injection_mode(in.get_string("model.injection_mode", to_string(c.injection_mode)));
    c.d_vision = in.get_int("model.d_vision", c.d_vision);
    c.vision_layers = in.get_int("model.vision_layers", c.vision_layers);
    c.vision_heads = in.get_int("model.vision_heads", c.vision_heads);
    c.d_exp = in.get_int("model.d_exp", c.d_exp);
    c.expert_hidden = in.get_int("model.expert_hidden", c.expert_hidden);
    c.gate_bias_init = in.get_double("model.gate_bias_init", c.gate_bias_init);
    return c;
  }

  std::string serialize() const {
    FlatConfig f;
    write(f);
    return f.serialize();
  }

  bool operator==(const ModelConfig&) const = default;

  static std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }
};

}  // namespace lead
