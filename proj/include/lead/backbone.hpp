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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lead/config.hpp"
#include "lead/nn.hpp"

namespace lead {

/// Per-patch features from the last vision block: [n_patches, d_vision].
template <class T>
struct VisualFeatures {
  Tensor<T> features;
};

/// Splits a row-major square image into flattened patches [n_patches, p*p].
template <class T>
Tensor<T> patchify(std::span<const float> image, const ModelConfig& cfg) {
  if (image.size() != cfg.image_size * cfg.image_size) {
    throw DimensionError("image has " + std::to_string(image.size()) + " pixels, expected " +
                         std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const std::size_t p = cfg.patch_size, grid = cfg.grid();
  std::vector<T> out;
  out.reserve(image.size());
  for (std::size_t pr = 0; pr < grid; ++pr) {
    for (std::size_t pc = 0; pc < grid; ++pc) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          out.push_back(static_cast<T>(image[(pr * p + y) * cfg.image_size + pc * p + x]));
        }
      }
    }
  }
  return Tensor<T>({cfg.n_patches(), p * p}, std::move(out));
}

/// Patch embedding + learned positions + bidirectional transformer blocks.
template <class T>
struct VisionEncoder {
  ModelConfig cfg;
  Linear<T> patch;
  Tensor<T> pos;
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_f;

  VisionEncoder() = default;
  VisionEncoder(Initializer<T>& init, const ModelConfig& c) : cfg(c) {
    patch = Linear<T>(init, "vision.patch", c.patch_size * c.patch_size, c.d_vision);
    pos = init.normal("vision.pos", {c.n_patches(), c.d_vision}, 0.02);
    for (std::size_t i = 0; i < c.vision_layers; ++i) {
      blocks.emplace_back(init, "vision.block" + std::to_string(i), c.d_vision, 2 * c.d_vision, c.vision_heads,
                          /*is_causal=*/false, c.vision_layers);
    }
    ln_f = LayerNorm<T>(init, "vision.ln_f", c.d_vision);
  }

  VisualFeatures<T> operator()(std::span<const float> image) const {
    auto x = add(patch(patchify<T>(image, cfg)), pos);
    for (const auto& b : blocks) x = b(x);
    return {ln_f(x)};
  }
};

/// Callback applied to the text-position hidden states after each decoder
/// layer: (layer index, [T, d]) -> [T, d].
template <class T>
using LayerHook = std::function<Tensor<T>(std::size_t, const Tensor<T>&)>;

template <class T>
struct DecoderOutput {
  Tensor<T> logits;                // [T, vocab], text positions only
  std::vector<Tensor<T>> hidden;   // per layer, text positions, after any injection
};

/// Causal decoder over [prefix ; tokens] with LoRA on every attention and
/// feed-forward projection. Text positions get learned position embeddings
/// counted from the first text token; prefix rows carry their own.
template <class T>
struct Decoder {
  ModelConfig cfg;
  Tensor<T> tok_emb, pos_emb;
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_f;
  Linear<T> head;

  Decoder() = default;
  Decoder(Initializer<T>& init, const ModelConfig& c) : cfg(c) {
    tok_emb = init.normal("llm.tok_emb", {c.vocab_size, c.d_model}, 0.02);
    pos_emb = init.normal("llm.pos_emb", {c.max_seq_len, c.d_model}, 0.02);
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string name = "llm.block" + std::to_string(i);
      blocks.emplace_back(init, name, c.d_model, c.d_ff, c.n_heads, /*is_causal=*/true, c.n_layers);
      if (c.lora_enabled) blocks.back().add_lora(init, name, c.lora_rank, c.lora_alpha);
    }
    ln_f = LayerNorm<T>(init, "llm.ln_f", c.d_model);
    head = Linear<T>(init, "llm.head", c.d_model, c.vocab_size);
  }

  DecoderOutput<T> operator()(const Tensor<T>& prefix, std::span<const int> tokens,
                              const LayerHook<T>& hook = nullptr) const {
    const std::size_t p = prefix.defined() ? prefix.dim(0) : 0;
    const std::size_t t = tokens.size();
    if (t == 0) throw ContractError("decoder_forward needs at least one token");
    if (p + t > cfg.max_seq_len) {
      throw CapacityError("sequence of " + std::to_string(p) + " prefix + " + std::to_string(t) +
                          " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (p && prefix.dim(1) != cfg.d_model) {
      throw DimensionError("prefix width " + std::to_string(prefix.dim(1)) + " != d_model " +
                           std::to_string(cfg.d_model));
    }
    auto text = add(embedding(tok_emb, tokens), slice(pos_emb, 0, 0, t));
    auto x = p ? concat(prefix, text, 0) : text;
    DecoderOutput<T> out;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      x = blocks[l](x);
      if (hook) {
        auto h = hook(l, p ? slice(x, 0, p, p + t) : x);
        x = p ? concat(slice(x, 0, 0, p), h, 0) : h;
        out.hidden.push_back(h);
      } else {
        out.hidden.push_back(p ? slice(x, 0, p, p + t) : x);
      }
    }
    out.logits = head(ln_f(p ? slice(x, 0, p, p + t) : x));
    return out;
  }
};

}  // namespace lead
