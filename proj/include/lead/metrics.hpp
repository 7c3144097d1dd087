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
#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lead/errors.hpp"
#include "lead/synthdata.hpp"

namespace lead {

inline constexpr double kRougeBeta = 1.2;

/// LCS-based ROUGE-L F-measure with beta = 1.2; 0 if either side is empty.
inline double rouge_l(const TokenIds& cand, const TokenIds& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (std::size_t i = 1; i <= cand.size(); ++i) {
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[ref.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

/// Corpus CIDEr (no length penalty, no clipping): per-n TF-IDF vectors with
/// document frequencies over the references, cosine similarity averaged over
/// n = 1..n_max, times 10, averaged over pairs.
inline double cider(const std::vector<TokenIds>& cands, const std::vector<TokenIds>& refs, std::size_t n_max = 4) {
  if (cands.size() != refs.size()) {
    throw ContractError("cider: " + std::to_string(cands.size()) + " candidates for " +
                        std::to_string(refs.size()) + " references");
  }
  if (cands.empty()) throw ContractError("cider: empty corpus");
  using Counts = std::map<TokenIds, double>;
  auto ngrams = [n_max](const TokenIds& s) {
    std::vector<Counts> out(n_max);
    for (std::size_t n = 1; n <= n_max; ++n) {
      for (std::size_t i = 0; i + n <= s.size(); ++i) out[n - 1][TokenIds(s.begin() + i, s.begin() + i + n)] += 1.0;
    }
    return out;
  };
  std::vector<std::vector<Counts>> ref_grams, cand_grams;
  std::map<TokenIds, double> df;
  for (const auto& r : refs) {
    ref_grams.push_back(ngrams(r));
    for (const auto& level : ref_grams.back()) {
      for (const auto& [g, c] : level) df[g] += 1.0;
    }
  }
  for (const auto& c : cands) cand_grams.push_back(ngrams(c));
  const double log_n = std::log(static_cast<double>(refs.size()));
  auto weight = [&](const TokenIds& g, double tf) {
    auto it = df.find(g);
    return tf * (log_n - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second)));
  };
  double total = 0.0;
  for (std::size_t k = 0; k < cands.size(); ++k) {
    double score = 0.0;
    for (std::size_t n = 0; n < n_max; ++n) {
      const auto& cg = cand_grams[k][n];
      const auto& rg = ref_grams[k][n];
      double dot = 0.0, nc = 0.0, nr = 0.0;
      for (const auto& [g, tf] : cg) {
        const double w = weight(g, tf);
        nc += w * w;
        auto it = rg.find(g);
        if (it != rg.end()) dot += w * weight(g, it->second);
      }
      for (const auto& [g, tf] : rg) {
        const double w = weight(g, tf);
        nr += w * w;
      }
      if (nc > 0.0 && nr > 0.0) score += dot / (std::sqrt(nc) * std::sqrt(nr));
    }
    total += score / static_cast<double>(n_max) * 10.0;
  }
  return total / static_cast<double>(cands.size());
}

struct CategoryScore {
  std::string category;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct ClinicalEfficacy {
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // unweighted means over categories
  std::vector<CategoryScore> per_category;
};

inline void check_label_lists(const char* op, const std::vector<Labels>& pred, const std::vector<Labels>& truth) {
  if (pred.size() != truth.size()) {
    throw ContractError(std::string(op) + ": " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(truth.size()) + " references");
  }
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].size() != truth[k].size() || pred[k].size() != truth.front().size()) {
      throw ContractError(std::string(op) + ": label width mismatch at item " + std::to_string(k));
    }
  }
}

/// Per-category precision/recall/F1 from label vectors; empty denominators
/// score 0. Macro values are plain means over categories.
inline ClinicalEfficacy clinical_efficacy(const std::vector<Labels>& pred, const std::vector<Labels>& truth,
                                          const std::vector<std::string>& names = {}) {
  check_label_lists("clinical_efficacy", pred, truth);
  ClinicalEfficacy out;
  const std::size_t c = truth.empty() ? names.size() : truth.front().size();
  out.per_category.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    auto& s = out.per_category[i];
    s.category = i < names.size() ? names[i] : "category" + std::to_string(i);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const bool p = pred[k][i] != 0, t = truth[k][i] != 0;
      s.tp += p && t;
      s.fp += p && !t;
      s.fn += !p && t;
    }
    s.precision = s.tp + s.fp ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
    s.recall = s.tp + s.fn ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    out.precision += s.precision;
    out.recall += s.recall;
    out.f1 += s.f1;
  }
  if (c) {
    out.precision /= static_cast<double>(c);
    out.recall /= static_cast<double>(c);
    out.f1 /= static_cast<double>(c);
  }
  return out;
}

struct HallucinationRates {
  double hallucination = 0.0;  // false positives / predicted positives
  double omission = 0.0;       // false negatives / true positives
};

inline HallucinationRates hallucination_rate(const std::vector<Labels>& pred, const std::vector<Labels>& truth) {
  check_label_lists("hallucination_rate", pred, truth);
  std::size_t fp = 0, predicted = 0, fn = 0, actual = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    for (std::size_t i = 0; i < pred[k].size(); ++i) {
      const bool p = pred[k][i] != 0, t = truth[k][i] != 0;
      predicted += p;
      actual += t;
      fp += p && !t;
      fn += !p && t;
    }
  }
  return {static_cast<double>(fp) / static_cast<double>(std::max<std::size_t>(1, predicted)),
          static_cast<double>(fn) / static_cast<double>(std::max<std::size_t>(1, actual))};
}

struct EvalReport {
  double rouge_l = 0.0;
  double cider = 0.0;
  double ce_precision = 0.0, ce_recall = 0.0, ce_f1 = 0.0;
  double hallucination_rate = 0.0, omission_rate = 0.0;
  std::vector<CategoryScore> per_category;
};

/// Scores generated reports against references; labels come from the exact
/// template labeler on both sides.
inline EvalReport score_reports(const Vocabulary& vocab, const std::vector<TokenIds>& generated,
                                const std::vector<TokenIds>& references) {
  if (generated.size() != references.size() || generated.empty()) {
    throw ContractError("score_reports: need equal, non-empty report lists");
  }
  EvalReport r;
  std::vector<Labels> pred, truth;
  for (std::size_t k = 0; k < generated.size(); ++k) {
    r.rouge_l += rouge_l(generated[k], references[k]);
    pred.push_back(extract_labels(vocab, generated[k]).labels);
    truth.push_back(extract_labels(vocab, references[k]).labels);
  }
  r.rouge_l /= static_cast<double>(generated.size());
  r.cider = cider(generated, references);
  const auto ce = clinical_efficacy(pred, truth, category_names(vocab.n_categories()));
  r.ce_precision = ce.precision;
  r.ce_recall = ce.recall;
  r.ce_f1 = ce.f1;
  r.per_category = ce.per_category;
  const auto h = hallucination_rate(pred, truth);
  r.hallucination_rate = h.hallucination;
  r.omission_rate = h.omission;
  return r;
}

/// Metric table: one row per category, then a macro row.
inline void write_metric_table(std::ostream& os, const EvalReport& r) {
  os.precision(10);
  os << "category,P,R,F1,TP,FP,FN\n";
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : r.per_category) {
    os << s.category << ',' << s.precision << ',' << s.recall << ',' << s.f1 << ',' << s.tp << ',' << s.fp << ','
       << s.fn << '\n';
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
  }
  os << "macro," << r.ce_precision << ',' << r.ce_recall << ',' << r.ce_f1 << ',' << tp << ',' << fp << ',' << fn
     << '\n';
}

}  // namespace lead
