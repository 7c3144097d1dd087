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
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lead/config.hpp"
#include "lead/errors.hpp"
#include "lead/rng.hpp"

namespace lead {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

using Labels = std::vector<int>;
using TokenIds = std::vector<int>;

/// Category names; beyond the fourteen named ones, synthetic single-token names.
inline std::vector<std::string> category_names(std::size_t n) {
  static const std::vector<std::string> kNamed = {
      "cardiomegaly",  "pleural effusion", "edema",           "consolidation",
      "pneumonia",     "atelectasis",      "pneumothorax",    "lung opacity",
      "lung lesion",   "fracture",         "support devices", "enlarged cardiomediastinum",
      "pleural thickening", "hernia"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(i < kNamed.size() ? kNamed[i] : "anomaly" + std::to_string(i));
  }
  return out;
}

/// Three positive and three negative sentence templates; "X" is the slot.
inline const std::vector<std::string>& positive_templates() {
  static const std::vector<std::string> t = {"X is present .", "there is X .", "findings consistent with X ."};
  return t;
}
inline const std::vector<std::string>& negative_templates() {
  static const std::vector<std::string> t = {"no evidence of X .", "X is absent .", "there is no X ."};
  return t;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

/// Closed word-level vocabulary of the template language for C categories.
class Vocabulary {
 public:
  explicit Vocabulary(std::size_t n_categories) : n_categories_(n_categories) {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
    for (const auto* group : {&positive_templates(), &negative_templates()}) {
      for (const auto& t : *group) {
        for (const auto& w : split_words(t)) {
          if (w != "X") add(w);
        }
      }
    }
    for (const auto& name : category_names(n_categories)) {
      for (const auto& w : split_words(name)) add(w);
    }
    build_sentences();
  }

  std::size_t size() const { return words_.size(); }
  std::size_t n_categories() const { return n_categories_; }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
  }

  TokenIds encode(const std::string& text) const {
    TokenIds out;
    for (const auto& w : split_words(text)) out.push_back(id(w));
    return out;
  }

  std::string decode(const TokenIds& ids) const {
    std::string out;
    for (int t : ids) {
      if (t == kPad || t == kBos || t == kEos) continue;
      if (!out.empty()) out += ' ';
      out += (t >= 0 && static_cast<std::size_t>(t) < words_.size()) ? words_[static_cast<std::size_t>(t)] : "<unk>";
    }
    return out;
  }

  /// Token ids of sentence `variant` of the given polarity for category c.
  const TokenIds& sentence(std::size_t category, bool positive, std::size_t variant) const {
    return sentences_.at((category * 2 + (positive ? 0 : 1)) * 3 + variant);
  }

  struct Mention {
    std::size_t category;
    bool positive;
  };

  /// Looks up a complete sentence (including the final ".").
  const Mention* match(const TokenIds& sentence) const {
    auto it = mentions_.find(sentence);
    return it == mentions_.end() ? nullptr : &it->second;
  }

  /// True when the id is a category-name word.
  bool is_category_word(int id) const {
    return id >= category_word_begin_ && static_cast<std::size_t>(id) < words_.size();
  }

  int period() const { return period_; }

 private:
  void add(const std::string& w) {
    if (ids_.count(w)) return;
    ids_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }

  void build_sentences() {
    period_ = id(".");
    category_word_begin_ = 0;
    // Category words come after all template words.
    std::size_t first = words_.size();
    for (const auto& name : category_names(n_categories_)) {
      for (const auto& w : split_words(name)) first = std::min(first, static_cast<std::size_t>(id(w)));
    }
    category_word_begin_ = static_cast<int>(first);
    const auto names = category_names(n_categories_);
    for (std::size_t c = 0; c < n_categories_; ++c) {
      for (bool positive : {true, false}) {
        const auto& templates = positive ? positive_templates() : negative_templates();
        for (const auto& t : templates) {
          std::string text;
          for (const auto& w : split_words(t)) text += (w == "X" ? names[c] : w) + " ";
          TokenIds ids = encode(text);
          mentions_[ids] = Mention{c, positive};
          sentences_.push_back(std::move(ids));
        }
      }
    }
  }

  std::size_t n_categories_;
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
  std::vector<TokenIds> sentences_;
  std::map<TokenIds, Mention> mentions_;
  int period_ = 0;
  int category_word_begin_ = 0;
};

/// One sentence per category, template variant and order drawn from the style seed.
inline TokenIds render_report(const Vocabulary& vocab, const Labels& labels, std::uint64_t style_seed) {
  if (labels.size() != vocab.n_categories()) {
    throw DimensionError("render_report: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(vocab.n_categories()) + " categories");
  }
  Rng rng(style_seed);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  TokenIds out;
  for (std::size_t c : order) {
    const auto& s = vocab.sentence(c, labels[c] != 0, rng.below(3));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

struct LabelExtraction {
  Labels labels;
  std::vector<bool> contradiction;
  bool any_contradiction() const {
    return std::any_of(contradiction.begin(), contradiction.end(), [](bool b) { return b; });
  }
};

/// Exact labeler for the template language. Category i is 1 iff some complete
/// sentence is a positive template for i and none is a negative one; both
/// polarities resolve to 0 and set the contradiction flag. Special tokens are
/// skipped and a trailing unterminated sentence is ignored.
inline LabelExtraction extract_labels(const Vocabulary& vocab, const TokenIds& report) {
  const std::size_t c = vocab.n_categories();
  std::vector<bool> pos(c, false), neg(c, false);
  TokenIds sentence;
  for (int t : report) {
    if (t == kPad || t == kBos || t == kEos) continue;
    sentence.push_back(t);
    if (t == vocab.period()) {
      if (const auto* m = vocab.match(sentence)) (m->positive ? pos : neg)[m->category] = true;
      sentence.clear();
    }
  }
  LabelExtraction out{Labels(c, 0), std::vector<bool>(c, false)};
  for (std::size_t i = 0; i < c; ++i) {
    out.contradiction[i] = pos[i] && neg[i];
    out.labels[i] = (pos[i] && !neg[i]) ? 1 : 0;
  }
  return out;
}

/// Deterministic patch_size x patch_size binary glyph per category. Glyphs are
/// drawn from per-category hashed streams and rejected until roughly half the
/// pixels are lit and every earlier glyph differs in at least a quarter of them.
inline std::vector<std::vector<float>> glyph_bank(std::size_t n_categories, std::size_t patch_size) {
  const std::size_t px = patch_size * patch_size;
  std::vector<std::vector<float>> bank;
  for (std::size_t c = 0; c < n_categories; ++c) {
    Rng rng(derive_seed(0x6C79706853ULL, c));
    for (int attempt = 0;; ++attempt) {
      std::vector<float> g(px);
      std::size_t lit = 0;
      for (auto& v : g) {
        v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        lit += v > 0.5f;
      }
      if (lit < px * 2 / 5 || lit > px * 3 / 5) continue;
      bool distinct = true;
      for (const auto& other : bank) {
        std::size_t diff = 0;
        for (std::size_t i = 0; i < px; ++i) diff += (g[i] != other[i]);
        if (diff < px / 4 && attempt < 10000) distinct = false;
      }
      if (!distinct) continue;
      bank.push_back(std::move(g));
      break;
    }
  }
  return bank;
}

/// Patch index of each present category's glyph (-1 if absent). Placement is by
/// rejection so no two glyphs share a patch.
inline std::vector<int> glyph_placement(const Labels& labels, std::uint64_t seed, std::size_t n_patches) {
  const auto present = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (present > n_patches) {
    throw ConfigError("render_image: " + std::to_string(present) + " glyphs do not fit in " +
                      std::to_string(n_patches) + " patches");
  }
  Rng rng(derive_seed(seed, "placement"));
  std::vector<bool> used(n_patches, false);
  std::vector<int> where(labels.size(), -1);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!labels[c]) continue;
    std::size_t p;
    do {
      p = rng.below(n_patches);
    } while (used[p]);
    used[p] = true;
    where[c] = static_cast<int>(p);
  }
  return where;
}

/// Grayscale image in [0,1], row-major image_size x image_size: one glyph per
/// present category on a gaussian-noise background (sigma 0.05, clipped).
inline std::vector<float> render_image(const Labels& labels, std::uint64_t seed, std::size_t image_size,
                                       std::size_t patch_size) {
  const std::size_t grid = image_size / patch_size;
  const auto where = glyph_placement(labels, seed, grid * grid);
  static thread_local std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<float>>> cache;
  auto key = std::make_pair(labels.size(), patch_size);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, glyph_bank(labels.size(), patch_size)).first;
  const auto& bank = it->second;

  std::vector<float> img(image_size * image_size, 0.0f);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (where[c] < 0) continue;
    const std::size_t pr = static_cast<std::size_t>(where[c]) / grid, pc = static_cast<std::size_t>(where[c]) % grid;
    for (std::size_t y = 0; y < patch_size; ++y) {
      for (std::size_t x = 0; x < patch_size; ++x) {
        img[(pr * patch_size + y) * image_size + pc * patch_size + x] = bank[c][y * patch_size + x];
      }
    }
  }
  Rng noise(derive_seed(seed, "noise"));
  for (auto& v : img) v = std::clamp(v + static_cast<float>(noise.normal(0.0, 0.05)), 0.0f, 1.0f);
  return img;
}

struct Sample {
  std::uint64_t id = 0;
  Labels labels;
  TokenIds report;
  std::uint64_t image_seed = 0;
};

struct DataConfig {
  std::size_t n_samples = 7143;
  std::vector<double> ratios = {0.7, 0.1, 0.2};
  double presence_rate = 0.3;
  std::size_t pretrain_size = 20000;

  void validate() const {
    if (ratios.size() != 3) throw ConfigError("field data.ratios: expected three comma-separated values");
    double total = 0.0;
    for (double r : ratios) {
      if (!(r >= 0.0)) throw ConfigError("field data.ratios: negative ratio");
      total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("field data.ratios: ratios must sum to 1, got " + std::to_string(total));
    }
    if (n_samples == 0) throw ConfigError("field data.n_samples must be >= 1");
    if (!(presence_rate >= 0.0 && presence_rate <= 1.0)) {
      throw ConfigError("field data.presence_rate must be in [0,1]");
    }
    if (pretrain_size == 0) throw ConfigError("field data.pretrain_size must be >= 1");
  }

  static DataConfig read(const FlatConfig& in) {
    DataConfig d;
    d.n_samples = in.get_int("data.n_samples", d.n_samples);
    d.ratios = in.get_doubles("data.ratios", d.ratios);
    d.presence_rate = in.get_double("data.presence_rate", d.presence_rate);
    d.pretrain_size = in.get_int("data.pretrain_size", d.pretrain_size);
    return d;
  }

  void write(FlatConfig& out) const {
    out.set("data.n_samples", std::to_string(n_samples));
    std::string r;
    for (std::size_t i = 0; i < ratios.size(); ++i) r += (i ? "," : "") + ModelConfig::format_double(ratios[i]);
    out.set("data.ratios", r);
    out.set("data.presence_rate", ModelConfig::format_double(presence_rate));
    out.set("data.pretrain_size", std::to_string(pretrain_size));
  }
};

struct DatasetSplits {
  std::vector<Sample> train, val, test;
};

/// Independent Bernoulli labels per category, templated reports, and image
/// seeds, all derived from the master seed by sample index.
inline DatasetSplits generate_dataset(const Vocabulary& vocab, const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::uint64_t data_seed = derive_seed(seed, "data");
  std::vector<Sample> all(cfg.n_samples);
  for (std::size_t k = 0; k < cfg.n_samples; ++k) {
    const std::uint64_t s = derive_seed(data_seed, k);
    Sample& smp = all[k];
    smp.id = k;
    Rng labels_rng(derive_seed(s, "labels"));
    smp.labels.resize(vocab.n_categories());
    for (auto& l : smp.labels) l = labels_rng.bernoulli(cfg.presence_rate) ? 1 : 0;
    smp.report = render_report(vocab, smp.labels, derive_seed(s, "style"));
    smp.image_seed = derive_seed(s, "image");
  }
  std::vector<std::size_t> order(cfg.n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  const auto n = static_cast<double>(cfg.n_samples);
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.ratios[0] * n));
  const auto n_val = std::min(cfg.n_samples - n_train, static_cast<std::size_t>(std::llround(cfg.ratios[1] * n)));
  DatasetSplits out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.push_back(all[order[i]]);
  }
  return out;
}

/// Co-mention confound of the text-only pretraining corpus: base presence
/// rates per category plus entries "if i is present, j is present with
/// probability q".
struct BiasSpec {
  struct Entry {
    std::size_t source, target;
    double q;
  };
  std::vector<double> marginals;
  std::vector<Entry> entries;

  static BiasSpec unbiased(std::size_t n_categories, double marginal = 0.3) {
    return {std::vector<double>(n_categories, marginal), {}};
  }

  /// Four strong co-mention pairs among the first fourteen categories.
  static BiasSpec default_for(std::size_t n_categories, double marginal = 0.3) {
    BiasSpec b = unbiased(n_categories, marginal);
    const Entry pairs[] = {{0, 1, 0.95}, {2, 3, 0.95}, {4, 7, 0.95}, {9, 10, 0.95}};
    for (const auto& e : pairs) {
      if (e.source < n_categories && e.target < n_categories) b.entries.push_back(e);
    }
    return b;
  }

  double q(std::size_t i, std::size_t j) const {
    for (const auto& e : entries) {
      if (e.source == i && e.target == j) return e.q;
    }
    return marginals.at(j);
  }

  /// Throws ConfigError when the spec cannot be sampled exactly or, if it has
  /// entries, when no entry departs from `truth_rate` by at least 0.4. An empty
  /// entry list is the unbiased control.
  void validate(double truth_rate = 0.3) const {
    std::vector<std::string> errs;
    for (std::size_t i = 0; i < marginals.size(); ++i) {
      if (!(marginals[i] >= 0.0 && marginals[i] <= 1.0)) {
        errs.push_back("bias.marginal." + std::to_string(i) + " outside [0,1]");
      }
    }
    std::vector<int> driven(marginals.size(), 0);
    for (const auto& e : entries) {
      const std::string key = "bias.q." + std::to_string(e.source) + "." + std::to_string(e.target);
      if (e.source >= marginals.size() || e.target >= marginals.size() || e.source == e.target) {
        errs.push_back(key + " names an invalid category pair");
        continue;
      }
      if (!(e.q >= 0.0 && e.q <= 1.0)) errs.push_back(key + " outside [0,1]");
      if (++driven[e.target] > 1) errs.push_back(key + ": category " + std::to_string(e.target) + " has two sources");
    }
    for (const auto& e : entries) {
      if (e.source < driven.size() && driven[e.source]) {
        errs.push_back("bias.q." + std::to_string(e.source) + "." + std::to_string(e.target) +
                       ": source category is itself driven (chains are not supported)");
      }
    }
    if (!entries.empty()) {
      double worst = 0.0;
      for (const auto& e : entries) worst = std::max(worst, std::abs(e.q - truth_rate));
      if (worst < 0.4) errs.push_back("bias.q: no entry differs from the image-conditioned rate by >= 0.4");
    }
    if (!errs.empty()) {
      std::string msg = "degenerate bias spec:";
      for (const auto& e : errs) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  /// Reads `bias.marginal` (all categories), `bias.marginal.<i>` and
  /// `bias.q.<i>.<j>` keys. Without any bias.q keys, the default pairs apply
  /// unless `bias.unbiased = true`.
  static BiasSpec read(const FlatConfig& in, std::size_t n_categories) {
    const double m = in.get_double("bias.marginal", 0.3);
    const bool unbiased_only = in.get_bool("bias.unbiased", false);
    BiasSpec b = unbiased(n_categories, m);
    for (const auto& key : in.keys_with_prefix("bias.marginal.")) {
      const auto idx = parse_index(key, key.substr(14));
      if (idx >= n_categories) throw ConfigError("field " + key + ": category out of range");
      b.marginals[idx] = in.get_double(key, m);
    }
    const auto qkeys = in.keys_with_prefix("bias.q.");
    for (const auto& key : qkeys) {
      const std::string rest = key.substr(7);
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw ConfigError("field " + key + ": expected bias.q.<i>.<j>");
      b.entries.push_back({parse_index(key, rest.substr(0, dot)), parse_index(key, rest.substr(dot + 1)),
                           in.get_double(key, 0.0)});
    }
    if (qkeys.empty() && !unbiased_only) b.entries = default_for(n_categories, m).entries;
    return b;
  }

  std::string serialize() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < marginals.size(); ++i) os << "bias.marginal." << i << " = " << marginals[i] << "\n";
    for (const auto& e : entries) os << "bias.q." << e.source << "." << e.target << " = " << e.q << "\n";
    if (entries.empty()) os << "bias.unbiased = true\n";
    return os.str();
  }

 private:
  static std::size_t parse_index(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoul(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("field " + key + ": '" + s + "' is not a category index");
    }
  }
};

/// Labels of one pretraining report: base Bernoulli draws, then each entry
/// overrides its target when the source is present.
inline Labels sample_biased_labels(const BiasSpec& bias, Rng& rng) {
  Labels l(bias.marginals.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = rng.bernoulli(bias.marginals[i]) ? 1 : 0;
  for (const auto& e : bias.entries) {
    if (l[e.source]) l[e.target] = rng.bernoulli(e.q) ? 1 : 0;
  }
  return l;
}

/// n image-free reports whose co-mentions follow the bias spec.
inline std::vector<TokenIds> build_biased_pretrain_corpus(const Vocabulary& vocab, const BiasSpec& bias, std::size_t n,
                                                          std::uint64_t seed, double truth_rate = 0.3) {
  if (n == 0) throw ConfigError("pretraining corpus size must be >= 1");
  if (bias.marginals.size() != vocab.n_categories()) {
    throw ConfigError("bias spec has " + std::to_string(bias.marginals.size()) + " marginals for " +
                      std::to_string(vocab.n_categories()) + " categories");
  }
  bias.validate(truth_rate);
  const std::uint64_t corpus_seed = derive_seed(seed, "corpus");
  std::vector<TokenIds> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t s = derive_seed(corpus_seed, k);
    Rng rng(derive_seed(s, "labels"));
    out.push_back(render_report(vocab, sample_biased_labels(bias, rng), derive_seed(s, "style")));
  }
  return out;
}

}  // namespace lead
