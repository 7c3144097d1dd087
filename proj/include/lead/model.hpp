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
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lead/backbone.hpp"
#include "lead/experts.hpp"
#include "lead/lead.hpp"
#include "lead/synthdata.hpp"

namespace lead {

template <class T>
struct ForwardOutput {
  DecoderOutput<T> decoder;
  std::optional<ExpertBundle<T>> experts;
  std::vector<Tensor<T>> gates;  // per layer, gate modes only
};

/// Everything computed from the image alone, reused across decoding steps.
template <class T>
struct ImageContext {
  Tensor<T> prefix;
  std::optional<ExpertBundle<T>> experts;
  std::vector<Tensor<T>> layer_embeddings;  // e^l, injecting modes only
};

/// Vision encoder, connector, LoRA decoder, and (by injection mode) the
/// expert branch and layer-wise fusion blocks.
template <class T = float>
class LeadModel {
 public:
  LeadModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    if (has_experts(cfg_.injection_mode) && cfg_.n_categories == 0) throw ConfigError("model.n_categories must be >= 1");
    Initializer<T> init(params_, init_seed);
    vision_ = VisionEncoder<T>(init, cfg_);
    connector_ = Mlp2<T>(init, "connector", cfg_.d_vision, cfg_.d_model, cfg_.d_model);
    decoder_ = Decoder<T>(init, cfg_);
    if (has_experts(cfg_.injection_mode)) experts_ = ExpertModule<T>(init, cfg_);
    lead_ = LeadBlocks<T>(init, cfg_);
  }

  // Modules hold handles into params_; copying would alias weights.
  LeadModel(const LeadModel&) = delete;
  LeadModel& operator=(const LeadModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  InjectionMode mode() const { return cfg_.injection_mode; }

  VisionEncoder<T>& vision() { return vision_; }
  Mlp2<T>& connector() { return connector_; }
  Decoder<T>& decoder() { return decoder_; }
  ExpertModule<T>& experts() { return experts_; }
  LeadBlocks<T>& lead_blocks() { return lead_; }

  VisualFeatures<T> encode_image(std::span<const float> image) const { return vision_(image); }

  /// Maps each patch feature into the decoder's token space.
  Tensor<T> connect(const VisualFeatures<T>& vf) const { return connector_(vf.features); }

  std::pair<Tensor<T>, Tensor<T>> expert_forward(const VisualFeatures<T>& vf) const {
    require_experts("expert_forward");
    return experts_.forward(vf);
  }

  Tensor<T> aggregate_confidence(const Tensor<T>& s, const Tensor<T>& f) const {
    require_experts("aggregate_confidence");
    return experts_.aggregate(s, f);
  }

  Tensor<T> project_layer(const Tensor<T>& e, std::size_t l) const { return lead_.project_layer(e, l); }

  FuseResult<T> gated_fuse(const Tensor<T>& h, const Tensor<T>& e_l, std::size_t l) const {
    if (l >= lead_.gates.size()) throw IndexError("no gate for layer " + std::to_string(l));
    return lead::gated_fuse(h, e_l, lead_.gates[l]);
  }

  Tensor<T> apply_injection(const Tensor<T>& hidden, const Tensor<T>& e_l, std::size_t l,
                            Tensor<T>* gate_out = nullptr) const {
    return lead_.apply(hidden, e_l, l, gate_out);
  }

  /// Runs the decoder; with `lead_ctx` (one e^l per layer) and an injecting
  /// mode, each layer's text hidden states pass through the fusion block.
  DecoderOutput<T> decoder_forward(const Tensor<T>& prefix, std::span<const int> tokens,
                                   const std::vector<Tensor<T>>* lead_ctx = nullptr,
                                   std::vector<Tensor<T>>* gates = nullptr) const {
    if (!lead_ctx || !injects(cfg_.injection_mode)) return decoder_(prefix, tokens);
    if (lead_ctx->size() != cfg_.n_layers) {
      throw DimensionError("lead context has " + std::to_string(lead_ctx->size()) + " embeddings for " +
                           std::to_string(cfg_.n_layers) + " layers");
    }
    if (gates) gates->assign(cfg_.n_layers, Tensor<T>());
    return decoder_(prefix, tokens, [&](std::size_t l, const Tensor<T>& h) {
      return lead_.apply(h, (*lead_ctx)[l], l, gates ? &(*gates)[l] : nullptr);
    });
  }

  ImageContext<T> prepare(std::span<const float> image) const {
    ImageContext<T> ctx;
    const auto vf = encode_image(image);
    ctx.prefix = connect(vf);
    if (has_experts(cfg_.injection_mode)) {
      auto [s, f] = experts_.forward(vf);
      auto e = experts_.aggregate(s, f);
      ctx.experts = ExpertBundle<T>{s, sigmoid(s), f, e};
      if (injects(cfg_.injection_mode)) {
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) ctx.layer_embeddings.push_back(lead_.project_layer(e, l));
      }
    }
    return ctx;
  }

  ForwardOutput<T> forward(const ImageContext<T>& ctx, std::span<const int> tokens) const {
    ForwardOutput<T> out;
    out.experts = ctx.experts;
    const bool inject = injects(cfg_.injection_mode);
    out.decoder = decoder_forward(ctx.prefix, tokens, inject ? &ctx.layer_embeddings : nullptr,
                                  has_gates(cfg_.injection_mode) ? &out.gates : nullptr);
    return out;
  }

  /// Full pipeline: image -> (experts -> e -> e^l) and prefix -> decoder.
  ForwardOutput<T> forward(std::span<const float> image, std::span<const int> tokens) const {
    return forward(prepare(image), tokens);
  }

  /// Greedy decoding from `prompt`; ties go to the lowest token id. Stops at
  /// end-of-report, after max_new_tokens, or at sequence capacity. Returns the
  /// generated tokens without the end-of-report marker. Keys and values are
  /// cached, so each step runs one row through the decoder.
  TokenIds generate_greedy(const ImageContext<T>& ctx, const TokenIds& prompt, std::size_t max_new_tokens) const {
    if (max_new_tokens == 0) throw ContractError("generate_greedy: max_new_tokens must be >= 1");
    NoGradGuard no_grad;
    const std::size_t p = ctx.prefix.defined() ? ctx.prefix.dim(0) : 0;
    TokenIds generated;
    if (prompt.empty() || p + prompt.size() > cfg_.max_seq_len) return generated;
    DecodeSession session(*this, ctx);
    auto logits = session.feed(prompt);
    for (;;) {
      const int next = argmax(logits);
      if (next == kEos) break;
      generated.push_back(next);
      if (generated.size() >= max_new_tokens || p + prompt.size() + generated.size() > cfg_.max_seq_len) break;
      logits = session.feed(std::span<const int>(&generated.back(), 1));
    }
    return generated;
  }

  /// Same contract as generate_greedy, but re-runs the whole sequence through
  /// the graph forward at every step. Kept as the reference for the cache.
  TokenIds generate_greedy_uncached(const ImageContext<T>& ctx, const TokenIds& prompt,
                                    std::size_t max_new_tokens) const {
    if (max_new_tokens == 0) throw ContractError("generate_greedy: max_new_tokens must be >= 1");
    NoGradGuard no_grad;
    const std::size_t p = ctx.prefix.defined() ? ctx.prefix.dim(0) : 0;
    TokenIds seq = prompt;
    TokenIds generated;
    while (generated.size() < max_new_tokens && p + seq.size() <= cfg_.max_seq_len) {
      const int next = argmax_last_row(forward(ctx, seq).decoder.logits);
      if (next == kEos) break;
      generated.push_back(next);
      seq.push_back(next);
    }
    return generated;
  }

  /// Incremental decoder state for one image. feed() appends tokens and
  /// returns the logits of the last one.
  class DecodeSession {
   public:
    DecodeSession(const LeadModel& m, const ImageContext<T>& ctx)
        : m_(m), ctx_(ctx), k_(m.cfg_.n_layers), v_(m.cfg_.n_layers) {
      if (ctx.prefix.defined()) run(ctx.prefix, false);
    }

    std::vector<T> feed(std::span<const int> tokens) {
      NoGradGuard no_grad;
      if (tokens.empty()) throw ContractError("DecodeSession::feed needs at least one token");
      if (len_ + tokens.size() > m_.cfg_.max_seq_len) {
        throw CapacityError("decode session would exceed max_seq_len " + std::to_string(m_.cfg_.max_seq_len));
      }
      const auto& dec = m_.decoder_;
      auto x = add(embedding(dec.tok_emb, tokens), slice(dec.pos_emb, 0, text_, text_ + tokens.size()));
      x = run(x, true);
      text_ += tokens.size();
      const auto last = dec.head(dec.ln_f(slice(x, 0, x.dim(0) - 1, x.dim(0))));
      return last.values();
    }

    std::size_t length() const { return len_; }

   private:
    Tensor<T> run(Tensor<T> x, bool text) {
      const auto& dec = m_.decoder_;
      const bool inject = text && injects(m_.cfg_.injection_mode);
      for (std::size_t l = 0; l < dec.blocks.size(); ++l) {
        const auto& b = dec.blocks[l];
        const auto a = b.ln1(x);
        const auto q = b.q(a);
        const auto k = b.k(a), v = b.v(a);
        k_[l].insert(k_[l].end(), k.values().begin(), k.values().end());
        v_[l].insert(v_[l].end(), v.values().begin(), v.values().end());
        auto h = add(x, b.o(attend(q, l, b.n_heads)));
        x = add(h, b.down(gelu(b.up(b.ln2(h)))));
        if (inject) x = m_.lead_.apply(x, ctx_.layer_embeddings[l], l);
      }
      len_ += x.dim(0);
      return x;
    }

    // Causal attention of the new query rows against every cached row.
    Tensor<T> attend(const Tensor<T>& q, std::size_t l, std::size_t n_heads) const {
      const std::size_t rows = q.dim(0), d = q.dim(1), dh = d / n_heads;
      const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
      const auto& kc = k_[l];
      const auto& vc = v_[l];
      std::vector<T> out(rows * d, T(0)), p(len_ + rows);
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t lim = len_ + i + 1;
        const T* qi = q.values().data() + i * d;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t c0 = h * dh;
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < lim; ++j) {
            T dot = T(0);
            for (std::size_t c = 0; c < dh; ++c) dot += qi[c0 + c] * kc[j * d + c0 + c];
            p[j] = dot * inv_sqrt;
            mx = std::max(mx, p[j]);
          }
          T z = T(0);
          for (std::size_t j = 0; j < lim; ++j) z += (p[j] = std::exp(p[j] - mx));
          T* oi = out.data() + i * d + c0;
          for (std::size_t j = 0; j < lim; ++j) {
            const T w = p[j] / z;
            for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vc[j * d + c0 + c];
          }
        }
      }
      return Tensor<T>({rows, d}, std::move(out));
    }

    const LeadModel& m_;
    const ImageContext<T>& ctx_;
    std::vector<std::vector<T>> k_, v_;
    std::size_t len_ = 0, text_ = 0;
  };

  TokenIds generate_greedy(std::span<const float> image, const TokenIds& prompt, std::size_t max_new_tokens) const {
    NoGradGuard no_grad;
    return generate_greedy(prepare(image), prompt, max_new_tokens);
  }

  /// Sets requires_grad per group; frozen groups then receive no gradient.
  void set_trainable(const ParameterPartition& partition) {
    partition.validate(cfg_.injection_mode);
    params_.apply(partition);
  }

  static int argmax_last_row(const Tensor<T>& logits) {
    const std::size_t v = logits.dim(1);
    return argmax(std::span<const T>(logits.values().data() + (logits.dim(0) - 1) * v, v));
  }

  /// Lowest index among the maxima.
  static int argmax(std::span<const T> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    return static_cast<int>(best);
  }

 private:
  void require_experts(const char* op) const {
    if (!has_experts(cfg_.injection_mode)) {
      throw ConfigError(std::string(op) + ": injection mode none has no expert module");
    }
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  VisionEncoder<T> vision_;
  Mlp2<T> connector_;
  Decoder<T> decoder_;
  ExpertModule<T> experts_;
  LeadBlocks<T> lead_;
};

}  // namespace lead
