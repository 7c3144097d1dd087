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
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lead/checkpoint.hpp"
#include "lead/losses.hpp"
#include "lead/metrics.hpp"
#include "lead/model.hpp"
#include "lead/synthdata.hpp"

namespace lead {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t grad_accum_steps = 1;
  double peak_lr = 2e-4;
  double warmup_fraction = 0.03;
  double weight_decay = 0.01;
  double lambda = kDefaultLambda;
  std::uint64_t seed = 0;
  std::string freeze = "hybrid";
  // Model selection on the validation split; 0 means the whole split.
  bool select_best = true;
  std::size_t val_limit = 0;
  // Greedy decoding budget; 0 means up to sequence capacity.
  std::size_t max_new_tokens = 0;

  ParameterPartition partition() const { return ParameterPartition::named(freeze); }

  void validate() const {
    std::vector<std::string> errs;
    if (epochs == 0) errs.push_back("epochs must be >= 1");
    if (batch_size == 0) errs.push_back("batch_size must be >= 1");
    if (grad_accum_steps == 0) errs.push_back("grad_accum_steps must be >= 1");
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) errs.push_back("peak_lr must be > 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) errs.push_back("warmup_fraction must be in [0,1)");
    if (!(weight_decay >= 0.0)) errs.push_back("weight_decay must be >= 0");
    if (!(lambda >= 0.0)) errs.push_back("lambda must be >= 0");
    if (freeze != "frozen" && freeze != "vision" && freeze != "llm" && freeze != "hybrid") {
      errs.push_back("freeze must be frozen, vision, llm or hybrid");
    }
    if (!errs.empty()) {
      std::string msg = "invalid training configuration:";
      for (const auto& e : errs) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  /// Reads `<prefix>.*` keys, e.g. train.* for fine-tuning and pretrain.* for
  /// the language-model phase.
  static TrainConfig read(const FlatConfig& in, const std::string& prefix = "train") {
    return read(in, prefix, TrainConfig());
  }
  static TrainConfig read(const FlatConfig& in, const std::string& prefix, TrainConfig base) {
    TrainConfig c = base;
    const auto k = [&](const char* name) { return prefix + "." + name; };
    c.epochs = in.get_int(k("epochs"), c.epochs);
    c.batch_size = in.get_int(k("batch_size"), c.batch_size);
    c.grad_accum_steps = in.get_int(k("grad_accum_steps"), c.grad_accum_steps);
    c.peak_lr = in.get_double(k("peak_lr"), c.peak_lr);
    c.warmup_fraction = in.get_double(k("warmup_fraction"), c.warmup_fraction);
    c.weight_decay = in.get_double(k("weight_decay"), c.weight_decay);
    c.lambda = in.get_double(k("lambda"), c.lambda);
    c.seed = in.get_int(k("seed"), c.seed);
    c.freeze = in.get_string(k("freeze"), c.freeze);
    c.select_best = in.get_bool(k("select_best"), c.select_best);
    c.val_limit = in.get_int(k("val_limit"), c.val_limit);
    c.max_new_tokens = in.get_int(k("max_new_tokens"), c.max_new_tokens);
    return c;
  }

  void write(FlatConfig& out, const std::string& prefix = "train") const {
    const auto k = [&](const char* name) { return prefix + "." + name; };
    out.set(k("epochs"), std::to_string(epochs));
    out.set(k("batch_size"), std::to_string(batch_size));
    out.set(k("grad_accum_steps"), std::to_string(grad_accum_steps));
    out.set(k("peak_lr"), ModelConfig::format_double(peak_lr));
    out.set(k("warmup_fraction"), ModelConfig::format_double(warmup_fraction));
    out.set(k("weight_decay"), ModelConfig::format_double(weight_decay));
    out.set(k("lambda"), ModelConfig::format_double(lambda));
    out.set(k("seed"), std::to_string(seed));
    out.set(k("freeze"), freeze);
    out.set(k("select_best"), select_best ? "true" : "false");
    out.set(k("val_limit"), std::to_string(val_limit));
    out.set(k("max_new_tokens"), std::to_string(max_new_tokens));
  }
};

/// Linear warmup to peak_lr, then cosine decay to zero at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
  }
  const double warm = cfg.warmup_fraction * static_cast<double>(total_steps);
  const auto s = static_cast<double>(step);
  if (s < warm) return cfg.peak_lr * s / warm;
  const double span = static_cast<double>(total_steps) - warm;
  const double progress = span > 0.0 ? (s - warm) / span : 1.0;
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
};

/// One AdamW update of a single tensor at step t (1-based): decoupled decay,
/// then the bias-corrected Adam step.
template <class T>
void adamw_update(std::span<T> param, std::span<const T> grad, AdamState& st, std::size_t t, double lr,
                  double weight_decay, const AdamHyper& h = {}) {
  if (grad.size() != param.size()) {
    throw DimensionError("adamw_update: " + std::to_string(param.size()) + " parameters, " +
                         std::to_string(grad.size()) + " gradients");
  }
  if (t == 0) throw ContractError("adamw_update: step count is 1-based");
  if (st.m.empty()) {
    st.m.assign(param.size(), 0.0);
    st.v.assign(param.size(), 0.0);
  }
  if (st.m.size() != param.size() || st.v.size() != param.size()) {
    throw DimensionError("adamw_update: optimizer state does not match parameter size");
  }
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g;
    st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g * g;
    const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) * decay - lr * mhat / (std::sqrt(vhat) + h.eps));
  }
}

class AdamW {
 public:
  explicit AdamW(double weight_decay, AdamHyper h = {}) : weight_decay_(weight_decay), h_(h) {}

  /// Updates every parameter that requires a gradient. A non-finite gradient
  /// aborts before anything is modified.
  template <class T>
  void step(ParamStore<T>& params, double lr) {
    for (const auto& p : params.all()) {
      if (!p.tensor.requires_grad()) continue;
      for (T g : p.tensor.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NumericError("non-finite gradient in parameter " + p.name);
        }
      }
    }
    ++t_;
    for (auto& p : params.all()) {
      if (!p.tensor.requires_grad()) continue;
      adamw_update<T>(p.tensor.data(), p.tensor.grad(), state_[p.name], t_, lr, weight_decay_, h_);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double weight_decay_;
  AdamHyper h_;
  std::size_t t_ = 0;
  std::map<std::string, AdamState> state_;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  double lr = 0.0;
  double l_gen = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
};

using StepLogger = std::function<void(const StepRecord&)>;

inline void write_step_jsonl(std::ostream& os, const StepRecord& r) {
  const auto old = os.precision(17);
  os << "{\"step\":" << r.step << ",\"epoch\":" << r.epoch << ",\"lr\":" << r.lr << ",\"l_gen\":" << r.l_gen
     << ",\"l_cls\":" << r.l_cls << ",\"total\":" << r.total << "}\n";
  os.precision(old);
}

/// Teacher-forcing pair for one report: input starts with <bos>, target ends
/// with <eos>.
inline std::pair<TokenIds, TokenIds> lm_pair(const TokenIds& report) {
  TokenIds in{kBos}, out = report;
  in.insert(in.end(), report.begin(), report.end());
  out.push_back(kEos);
  return {in, out};
}

template <class T>
struct SampleLoss {
  Tensor<T> total;
  double l_gen = 0.0;
  double l_cls = 0.0;
};

/// Composite loss of one image-report pair. Without experts l_cls is zero.
template <class T>
SampleLoss<T> sample_loss(const LeadModel<T>& m, std::span<const float> image, const Sample& s, double lambda) {
  const auto [in, target] = lm_pair(s.report);
  const auto out = m.forward(image, in);
  auto l_gen = generation_loss(out.decoder.logits, target);
  SampleLoss<T> r;
  r.l_gen = static_cast<double>(l_gen.item());
  if (out.experts) {
    auto l_cls = classification_loss(out.experts->logits, s.labels);
    r.l_cls = static_cast<double>(l_cls.item());
    r.total = total_loss(l_gen, l_cls, lambda);
  } else {
    r.total = l_gen;
  }
  return r;
}

inline std::vector<std::vector<float>> render_images(const std::vector<Sample>& samples, const ModelConfig& cfg) {
  std::vector<std::vector<float>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(render_image(s.labels, s.image_seed, cfg.image_size, cfg.patch_size));
  return out;
}

struct Generation {
  std::uint64_t id = 0;
  TokenIds tokens;
  Labels predicted;
  Labels truth;
};

struct EvalOutput {
  EvalReport report;
  std::vector<Generation> generations;
};

/// Greedy-generates a report per sample and scores it against the reference.
template <class T>
EvalOutput evaluate(const LeadModel<T>& m, const Vocabulary& vocab, const std::vector<Sample>& samples,
                    std::size_t max_new_tokens = 0, std::size_t limit = 0) {
  const std::size_t n = limit ? std::min(limit, samples.size()) : samples.size();
  if (n == 0) throw ContractError("evaluate: no samples");
  const std::size_t budget = max_new_tokens ? max_new_tokens : m.config().max_seq_len;
  EvalOutput out;
  std::vector<TokenIds> gen, ref;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = samples[k];
    const auto img = render_image(s.labels, s.image_seed, m.config().image_size, m.config().patch_size);
    auto tokens = m.generate_greedy(std::span<const float>(img), TokenIds{kBos}, budget);
    out.generations.push_back({s.id, tokens, extract_labels(vocab, tokens).labels, s.labels});
    gen.push_back(std::move(tokens));
    ref.push_back(s.report);
  }
  out.report = score_reports(vocab, gen, ref);
  return out;
}

struct FinetuneResult {
  std::size_t steps = 0;
  std::vector<double> val_f1;  // per epoch, when validating
  std::size_t best_epoch = 0;  // 1-based; 0 when no selection happened
  StepRecord last;
};

namespace detail {

[[noreturn]] inline void non_finite_loss(std::size_t step, double l_gen, double l_cls, const StepRecord& last) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << " (l_gen=" << l_gen << ", l_cls=" << l_cls << ")";
  if (last.step) {
    os << "; last finite losses at step " << last.step << ": l_gen=" << last.l_gen << " l_cls=" << last.l_cls
       << " total=" << last.total;
  }
  throw NumericError(os.str());
}

inline std::size_t steps_per_epoch(std::size_t n, const TrainConfig& cfg) {
  const std::size_t group = cfg.batch_size * cfg.grad_accum_steps;
  return (n + group - 1) / group;
}

}  // namespace detail

/// Fine-tunes in place. Each optimizer step consumes batch_size x
/// grad_accum_steps samples (fewer at the end of an epoch); every per-sample
/// loss is scaled by the inverse group size before its backward pass.
template <class T>
FinetuneResult finetune(LeadModel<T>& m, const Vocabulary& vocab, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, const TrainConfig& cfg, const StepLogger& log = nullptr) {
  cfg.validate();
  if (train.empty()) throw ContractError("finetune: empty training split");
  m.set_trainable(cfg.partition());
  const auto images = render_images(train, m.config());
  const std::size_t group = cfg.batch_size * cfg.grad_accum_steps;
  const std::size_t total = cfg.epochs * detail::steps_per_epoch(train.size(), cfg);
  AdamW opt(cfg.weight_decay);
  FinetuneResult res;
  std::vector<std::size_t> order(train.size());
  Rng shuffle(cfg.seed, "shuffle");
  double best_f1 = -1.0;
  std::optional<Checkpoint> best;
  m.params().zero_grad();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    for (std::size_t begin = 0; begin < order.size(); begin += group) {
      const std::size_t end = std::min(order.size(), begin + group);
      const T inv = T(1) / static_cast<T>(end - begin);
      const std::size_t step = res.steps + 1;
      double sum_gen = 0.0, sum_cls = 0.0, sum_total = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = train[order[k]];
        auto sl = sample_loss(m, images[order[k]], s, cfg.lambda);
        if (!std::isfinite(sl.l_gen) || !std::isfinite(sl.l_cls)) detail::non_finite_loss(step, sl.l_gen, sl.l_cls, res.last);
        backward(scale(sl.total, inv));
        sum_gen += sl.l_gen;
        sum_cls += sl.l_cls;
        sum_total += sl.l_gen + cfg.lambda * sl.l_cls;
      }
      const double lr = lr_at(step, total, cfg);
      opt.step(m.params(), lr);
      m.params().zero_grad();
      const auto n = static_cast<double>(end - begin);
      res.last = {step, epoch, lr, sum_gen / n, sum_cls / n, sum_total / n};
      res.steps = step;
      if (log) log(res.last);
    }
    if (cfg.select_best && !val.empty()) {
      const double f1 = evaluate(m, vocab, val, cfg.max_new_tokens, cfg.val_limit).report.ce_f1;
      res.val_f1.push_back(f1);
      if (f1 > best_f1) {
        best_f1 = f1;
        res.best_epoch = epoch;
        best = snapshot(m.config(), m.params());
      }
    }
  }
  if (best && res.best_epoch != cfg.epochs) restore(m.params(), *best);
  return res;
}

struct PretrainResult {
  std::size_t steps = 0;
  std::vector<double> heldout_ppl;  // before training, then after each epoch
  StepRecord last;
};

/// Perplexity of the decoder on text alone (no image prefix).
template <class T>
double text_perplexity(const LeadModel<T>& m, const std::vector<TokenIds>& texts) {
  if (texts.empty()) throw ContractError("text_perplexity: no texts");
  NoGradGuard no_grad;
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& r : texts) {
    const auto [in, target] = lm_pair(r);
    const auto logits = m.decoder_forward(Tensor<T>(), in).logits;
    nll += static_cast<double>(generation_loss(logits, target).item()) * static_cast<double>(target.size());
    count += target.size();
  }
  return std::exp(nll / static_cast<double>(count));
}

/// Text-only language-model training of the decoder base weights.
template <class T>
PretrainResult pretrain_lm(LeadModel<T>& m, const std::vector<TokenIds>& corpus, const std::vector<TokenIds>& heldout,
                           const TrainConfig& cfg, const StepLogger& log = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("pretrain_lm: empty corpus");
  m.params().apply(ParameterPartition::pretrain());
  const std::size_t group = cfg.batch_size * cfg.grad_accum_steps;
  const std::size_t total = cfg.epochs * detail::steps_per_epoch(corpus.size(), cfg);
  AdamW opt(cfg.weight_decay);
  PretrainResult res;
  if (!heldout.empty()) res.heldout_ppl.push_back(text_perplexity(m, heldout));
  std::vector<std::size_t> order(corpus.size());
  Rng shuffle(cfg.seed, "pretrain-shuffle");
  m.params().zero_grad();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    for (std::size_t begin = 0; begin < order.size(); begin += group) {
      const std::size_t end = std::min(order.size(), begin + group);
      const T inv = T(1) / static_cast<T>(end - begin);
      const std::size_t step = res.steps + 1;
      double sum = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto [in, target] = lm_pair(corpus[order[k]]);
        auto loss = generation_loss(m.decoder_forward(Tensor<T>(), in).logits, target);
        const double l = static_cast<double>(loss.item());
        if (!std::isfinite(l)) detail::non_finite_loss(step, l, 0.0, res.last);
        backward(scale(loss, inv));
        sum += l;
      }
      const double lr = lr_at(step, total, cfg);
      opt.step(m.params(), lr);
      m.params().zero_grad();
      const double mean_loss = sum / static_cast<double>(end - begin);
      res.last = {step, epoch, lr, mean_loss, 0.0, mean_loss};
      res.steps = step;
      if (log) log(res.last);
    }
    if (!heldout.empty()) res.heldout_ppl.push_back(text_perplexity(m, heldout));
  }
  return res;
}

struct BiasProbe {
  std::size_t source = 0, target = 0;
  double q = 0.0;
  // Target prompts that follow a positive source sentence.
  std::size_t prompts = 0;
  std::size_t present = 0;
  double mean_p_present = 0.0;
  // Target prompts that follow a negative source sentence.
  std::size_t control_prompts = 0;
  std::size_t control_present = 0;

  double present_rate() const { return prompts ? static_cast<double>(present) / static_cast<double>(prompts) : 0.0; }
  double control_rate() const {
    return control_prompts ? static_cast<double>(control_present) / static_cast<double>(control_prompts) : 0.0;
  }
};

/// Measures how often greedy continuation realizes each co-mention rule. The
/// prompts are fresh biased reports cut right after "<target> is", at a point
/// where the source was already mentioned; the continuation is "present" or
/// "absent". Collects `n_prompts` prompts with a positive source in total.
template <class T>
std::vector<BiasProbe> probe_bias(const LeadModel<T>& m, const Vocabulary& vocab, const BiasSpec& bias,
                                  std::size_t n_prompts, std::uint64_t seed) {
  NoGradGuard no_grad;
  std::vector<BiasProbe> out;
  for (const auto& e : bias.entries) out.push_back({e.source, e.target, e.q});
  if (out.empty()) return out;
  const int present_id = vocab.id("present");
  std::size_t collected = 0;
  const std::size_t chunk = 1000;
  for (std::uint64_t round = 0; collected < n_prompts; ++round) {
    const auto reports = build_biased_pretrain_corpus(vocab, bias, chunk, derive_seed(seed, round));
    for (const auto& r : reports) {
      for (auto& pr : out) {
        if (collected >= n_prompts) break;
        // "X is present ." and "X is absent ." are template 0 and 1.
        const TokenIds& pos = vocab.sentence(pr.target, true, 0);
        const TokenIds& neg = vocab.sentence(pr.target, false, 1);
        const std::size_t stem = pos.size() - 2;  // name words plus "is"
        std::size_t at = r.size();
        for (std::size_t k = 0, e; k < r.size(); k = e) {
          e = k;
          while (e < r.size() && r[e] != vocab.period()) ++e;
          ++e;
          const TokenIds sent(r.begin() + static_cast<std::ptrdiff_t>(k), r.begin() + static_cast<std::ptrdiff_t>(e));
          if (sent == pos || sent == neg) {
            at = k;
            break;
          }
        }
        if (at == r.size()) continue;
        const TokenIds before(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(at));
        bool src_pos = false, src_neg = false;
        TokenIds sent;
        for (int t : before) {
          sent.push_back(t);
          if (t != vocab.period()) continue;
          if (const auto* mention = vocab.match(sent); mention && mention->category == pr.source) {
            (mention->positive ? src_pos : src_neg) = true;
          }
          sent.clear();
        }
        if (!src_pos && !src_neg) continue;
        TokenIds prompt{kBos};
        prompt.insert(prompt.end(), before.begin(), before.end());
        prompt.insert(prompt.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(stem));
        const auto logits = m.decoder_forward(Tensor<T>(), prompt).logits;
        const std::size_t v = logits.dim(1);
        std::span<const T> row(logits.values().data() + (logits.dim(0) - 1) * v, v);
        const bool says_present = LeadModel<T>::argmax(row) == present_id;
        if (src_pos) {
          T mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (T x : row) z += std::exp(static_cast<double>(x - mx));
          pr.mean_p_present += std::exp(static_cast<double>(row[static_cast<std::size_t>(present_id)] - mx)) / z;
          ++pr.prompts;
          pr.present += says_present;
          ++collected;
        } else {
          ++pr.control_prompts;
          pr.control_present += says_present;
        }
      }
      if (collected >= n_prompts) break;
    }
  }
  for (auto& pr : out) {
    if (pr.prompts) pr.mean_p_present /= static_cast<double>(pr.prompts);
  }
  return out;
}

struct AblationRow {
  InjectionMode mode = InjectionMode::kNone;
  std::uint64_t seed = 0;
  EvalReport report;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::vector<AblationRow> for_mode(InjectionMode m) const {
    std::vector<AblationRow> out;
    for (const auto& r : rows) {
      if (r.mode == m) out.push_back(r);
    }
    return out;
  }

  /// Mean of one metric over the seeds of a mode.
  double mean(InjectionMode m, double EvalReport::*field) const {
    const auto rs = for_mode(m);
    if (rs.empty()) throw ContractError(std::string("ablation table has no rows for mode ") + to_string(m));
    double s = 0.0;
    for (const auto& r : rs) s += r.report.*field;
    return s / static_cast<double>(rs.size());
  }
};

struct SignTest {
  std::size_t wins = 0;
  std::size_t pairs = 0;
  double p_value = 1.0;  // one-sided, ties count as losses
};

/// Counts seeds where `a` has the higher macro-F1 than `b`.
inline SignTest sign_test(const AblationTable& t, InjectionMode a, InjectionMode b) {
  SignTest st;
  for (const auto& ra : t.for_mode(a)) {
    for (const auto& rb : t.for_mode(b)) {
      if (ra.seed != rb.seed) continue;
      ++st.pairs;
      st.wins += ra.report.ce_f1 > rb.report.ce_f1;
    }
  }
  double p = 0.0;
  for (std::size_t k = st.wins; k <= st.pairs; ++k) {
    p += std::exp(std::lgamma(st.pairs + 1.0) - std::lgamma(k + 1.0) - std::lgamma(st.pairs - k + 1.0) -
                  static_cast<double>(st.pairs) * std::log(2.0));
  }
  st.p_value = std::min(1.0, p);
  return st;
}

inline void write_ablation_csv(std::ostream& os, const AblationTable& t) {
  const auto old = os.precision(10);
  os << "mode,seed,R-L,CIDEr,P,R,F1,hallucination_rate\n";
  for (const auto& r : t.rows) {
    os << to_string(r.mode) << ',' << r.seed << ',' << r.report.rouge_l << ',' << r.report.cider << ','
       << r.report.ce_precision << ',' << r.report.ce_recall << ',' << r.report.ce_f1 << ','
       << r.report.hallucination_rate << '\n';
  }
  os.precision(old);
}

/// Per-mode means followed by the layer_gate-vs-none sign test, when both ran.
inline void write_ablation_summary(std::ostream& os, const AblationTable& t, const std::vector<InjectionMode>& modes) {
  const auto old = os.precision(10);
  os << "mode,runs,R-L,CIDEr,P,R,F1,hallucination_rate\n";
  for (auto m : modes) {
    os << to_string(m) << ',' << t.for_mode(m).size() << ',' << t.mean(m, &EvalReport::rouge_l) << ','
       << t.mean(m, &EvalReport::cider) << ',' << t.mean(m, &EvalReport::ce_precision) << ','
       << t.mean(m, &EvalReport::ce_recall) << ',' << t.mean(m, &EvalReport::ce_f1) << ','
       << t.mean(m, &EvalReport::hallucination_rate) << '\n';
  }
  const auto st = sign_test(t, InjectionMode::kLayerGate, InjectionMode::kNone);
  if (st.pairs) os << "sign_test,layer_gate>none,wins," << st.wins << ",of," << st.pairs << ",p," << st.p_value << '\n';
  os.precision(old);
}

/// Builds a model for one fine-tuning run: backbone language weights from the
/// pretrained checkpoint, everything else initialized from the run seed.
template <class T>
std::unique_ptr<LeadModel<T>> model_from_pretrained(const Checkpoint& pretrained, ModelConfig cfg,
                                                    std::uint64_t seed) {
  auto m = std::make_unique<LeadModel<T>>(cfg, derive_seed(seed, "init"));
  restore(m->params(), pretrained, [](ParamGroup g) { return g == ParamGroup::kLlmBase; }, false);
  return m;
}

struct AblationProgress {
  InjectionMode mode;
  std::uint64_t seed;
  const FinetuneResult* finetune;
  const EvalReport* report;
};

/// Fine-tunes and tests every (mode, seed) from one pretrained checkpoint.
template <class T>
AblationTable run_ablation(const Checkpoint& pretrained, const ModelConfig& model_cfg, const Vocabulary& vocab,
                           const DatasetSplits& data, const std::vector<InjectionMode>& modes,
                           const std::vector<std::uint64_t>& seeds, const TrainConfig& train_cfg,
                           const std::function<void(const AblationProgress&)>& progress = nullptr) {
  AblationTable table;
  for (auto mode : modes) {
    for (auto seed : seeds) {
      ModelConfig mc = model_cfg;
      mc.injection_mode = mode;
      TrainConfig tc = train_cfg;
      tc.seed = seed;
      auto m = model_from_pretrained<T>(pretrained, mc, seed);
      const auto fr = finetune(*m, vocab, data.train, data.val, tc);
      auto ev = evaluate(*m, vocab, data.test, tc.max_new_tokens);
      table.rows.push_back({mode, seed, ev.report});
      if (progress) progress({mode, seed, &fr, &table.rows.back().report});
    }
  }
  return table;
}

}  // namespace lead
