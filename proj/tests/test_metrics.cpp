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


#include <cmath>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <gtest/gtest.h>

#include "lead/metrics.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

namespace lead {
namespace {

using oracle::brute_force_lcs;
using oracle::cider_oracle;
using oracle::confusion_oracle;

TokenIds words(const std::string& s) {
  static std::unordered_map<std::string, int> ids;
  TokenIds out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
  return out;
}

TEST(RougeL, IdenticalAndDisjoint) {
  EXPECT_EQ(rouge_l(words("a b c d"), words("a b c d")), 1.0);
  EXPECT_EQ(rouge_l(words("a b c"), words("x y z")), 0.0);
  EXPECT_EQ(rouge_l({}, words("a")), 0.0);
  EXPECT_EQ(rouge_l(words("a"), {}), 0.0);
}

TEST(RougeL, WorkedExample) {
  const auto cand = words("the cat on mat");
  const auto ref = words("the cat sat on the mat");
  EXPECT_EQ(brute_force_lcs(cand, ref), 4u);
  const double p = 1.0, r = 4.0 / 6.0, b2 = 1.2 * 1.2;
  EXPECT_DOUBLE_EQ(rouge_l(cand, ref), (1 + b2) * p * r / (r + b2 * p));
  EXPECT_NE(rouge_l(cand, ref), rouge_l(ref, cand));
}

TEST(RougeL, MatchesBruteForceLcs) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    TokenIds a(1 + rng.below(10)), b(1 + rng.below(10));
    for (auto& t : a) t = static_cast<int>(rng.below(4));
    for (auto& t : b) t = static_cast<int>(rng.below(4));
    const double l = static_cast<double>(brute_force_lcs(a, b));
    double expected = 0.0;
    if (l > 0) {
      const double p = l / a.size(), r = l / b.size();
      expected = (1 + 1.44) * p * r / (r + 1.44 * p);
    }
    EXPECT_EQ(rouge_l(a, b), expected) << "trial " << trial;
  }
}

TEST(RougeL, OneOnlyForIdenticalReports) {
  Vocabulary v(14);
  Rng rng(2);
  std::vector<TokenIds> reports;
  for (int k = 0; k < 40; ++k) {
    Labels l(14);
    for (auto& x : l) x = rng.bernoulli(0.3);
    reports.push_back(render_report(v, l, k));
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (std::size_t j = 0; j < reports.size(); ++j) {
      EXPECT_EQ(rouge_l(reports[i], reports[j]) == 1.0, reports[i] == reports[j]);
    }
  }
}

TEST(Cider, IdenticalCorpusScoresTen) {
  const std::vector<TokenIds> refs{words("a b c d"), words("e f g h"), words("a f c x")};
  EXPECT_NEAR(cider(refs, refs), 10.0, 1e-12);
}

TEST(Cider, NoSharedNgramsIsZero) {
  const std::vector<TokenIds> refs{words("a b c"), words("d e f")};
  const std::vector<TokenIds> cands{words("x y z"), words("u v w")};
  EXPECT_EQ(cider(cands, refs), 0.0);
}

TEST(Cider, ToyCorpusMatchesOracle) {
  const std::vector<TokenIds> refs{words("the heart is enlarged ."), words("no effusion is seen ."),
                                   words("the lungs are clear .")};
  const std::vector<TokenIds> cands{words("the heart is large ."), words("effusion is seen ."),
                                    words("lungs are clear . the")};
  const double got = cider(cands, refs);
  EXPECT_NEAR(got, cider_oracle(cands, refs), 1e-6);
  EXPECT_GT(got, 0.0);
}

TEST(Cider, RandomCorporaMatchOracleAndAreNonNegative) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<TokenIds> c(n), r(n);
    for (std::size_t k = 0; k < n; ++k) {
      c[k].resize(rng.below(9));
      r[k].resize(1 + rng.below(9));
      for (auto& t : c[k]) t = static_cast<int>(rng.below(6));
      for (auto& t : r[k]) t = static_cast<int>(rng.below(6));
    }
    const double got = cider(c, r);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, cider_oracle(c, r), 1e-6) << "trial " << trial;
  }
}

TEST(Cider, SizeMismatchIsContractError) {
  EXPECT_THROW(cider({words("a")}, {}), ContractError);
  EXPECT_THROW(cider({}, {}), ContractError);
}

TEST(ClinicalEfficacy, PerfectPredictions) {
  const std::vector<Labels> t{{1, 0}, {0, 1}, {1, 1}};
  const auto ce = clinical_efficacy(t, t);
  EXPECT_EQ(ce.precision, 1.0);
  EXPECT_EQ(ce.recall, 1.0);
  EXPECT_EQ(ce.f1, 1.0);
}

TEST(ClinicalEfficacy, AllNegativePredictions) {
  const std::vector<Labels> t{{1, 0}, {0, 1}, {1, 1}};
  const auto ce = clinical_efficacy(std::vector<Labels>(3, Labels{0, 0}), t);
  EXPECT_EQ(ce.precision, 0.0);
  EXPECT_EQ(ce.recall, 0.0);
  EXPECT_EQ(ce.f1, 0.0);
}

// cat0: TP=1 FP=1 FN=0; cat1: TP=1 FP=0 FN=1.
const std::vector<Labels> kHandPred{{1, 1}, {1, 0}};
const std::vector<Labels> kHandTruth{{1, 1}, {0, 1}};

TEST(ClinicalEfficacy, HandCase) {
  const auto ce = clinical_efficacy(kHandPred, kHandTruth);
  const auto o = confusion_oracle(kHandPred, kHandTruth);
  EXPECT_EQ(ce.per_category[0].tp, 1u);
  EXPECT_EQ(ce.per_category[0].fp, 1u);
  EXPECT_EQ(ce.per_category[1].fn, 1u);
  EXPECT_DOUBLE_EQ(ce.precision, 0.75);
  EXPECT_DOUBLE_EQ(ce.recall, 0.75);
  // Each category has F1 = 2/3, so the macro mean is 2/3.
  EXPECT_DOUBLE_EQ(ce.f1, o.f1);
  EXPECT_NEAR(ce.f1, 2.0 / 3.0, 1e-15);
}

TEST(ClinicalEfficacy, ExhaustiveSmallListsMatchOracle) {
  // Every assignment of 4 items x 2 categories on both sides.
  for (unsigned bits = 0; bits < (1u << 16); ++bits) {
    std::vector<Labels> p(4, Labels(2)), t(4, Labels(2));
    for (unsigned k = 0; k < 4; ++k) {
      for (unsigned c = 0; c < 2; ++c) {
        p[k][c] = (bits >> (k * 2 + c)) & 1;
        t[k][c] = (bits >> (8 + k * 2 + c)) & 1;
      }
    }
    const auto ce = clinical_efficacy(p, t);
    const auto o = confusion_oracle(p, t);
    ASSERT_DOUBLE_EQ(ce.precision, o.precision) << bits;
    ASSERT_DOUBLE_EQ(ce.recall, o.recall) << bits;
    ASSERT_DOUBLE_EQ(ce.f1, o.f1) << bits;
  }
}

TEST(ClinicalEfficacy, RandomTwentyItemListsMatchOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Labels> p(20, Labels(2)), t(20, Labels(2));
    for (std::size_t k = 0; k < 20; ++k) {
      for (std::size_t c = 0; c < 2; ++c) {
        p[k][c] = rng.bernoulli(0.4);
        t[k][c] = rng.bernoulli(0.3);
      }
    }
    const auto ce = clinical_efficacy(p, t);
    const auto o = confusion_oracle(p, t);
    ASSERT_DOUBLE_EQ(ce.f1, o.f1);
    ASSERT_DOUBLE_EQ(ce.precision, o.precision);
    ASSERT_DOUBLE_EQ(ce.recall, o.recall);
  }
}

TEST(ClinicalEfficacy, DuplicationInvariance) {
  Rng rng(5);
  std::vector<Labels> p(15, Labels(4)), t(15, Labels(4));
  for (std::size_t k = 0; k < 15; ++k) {
    for (std::size_t c = 0; c < 4; ++c) {
      p[k][c] = rng.bernoulli(0.5);
      t[k][c] = rng.bernoulli(0.3);
    }
  }
  auto p2 = p, t2 = t;
  p2.insert(p2.end(), p.begin(), p.end());
  t2.insert(t2.end(), t.begin(), t.end());
  const auto a = clinical_efficacy(p, t), b = clinical_efficacy(p2, t2);
  EXPECT_DOUBLE_EQ(a.precision, b.precision);
  EXPECT_DOUBLE_EQ(a.recall, b.recall);
  EXPECT_DOUBLE_EQ(a.f1, b.f1);
  for (std::size_t c = 0; c < 4; ++c) {
    const auto& s = a.per_category[c];
    const double h = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    EXPECT_DOUBLE_EQ(s.f1, h);
  }
}

TEST(ClinicalEfficacy, LengthMismatchIsContractError) {
  EXPECT_THROW(clinical_efficacy({{1, 0}}, {{1, 0}, {0, 0}}), ContractError);
  EXPECT_THROW(clinical_efficacy({{1, 0}}, {{1, 0, 1}}), ContractError);
}

TEST(HallucinationRate, Examples) {
  const std::vector<Labels> t{{0, 1}, {1, 0}};
  auto h = hallucination_rate(t, t);
  EXPECT_EQ(h.hallucination, 0.0);
  EXPECT_EQ(h.omission, 0.0);
  h = hallucination_rate({{1, 1, 1}}, {{0, 0, 0}});
  EXPECT_EQ(h.hallucination, 1.0);
  EXPECT_EQ(h.omission, 0.0);
  // Hand case: FP=1 of 3 predicted positives; FN=1 of 3 true positives.
  h = hallucination_rate(kHandPred, kHandTruth);
  const auto o = confusion_oracle(kHandPred, kHandTruth);
  EXPECT_DOUBLE_EQ(h.hallucination, o.hallucination);
  EXPECT_DOUBLE_EQ(h.omission, o.omission);
  EXPECT_DOUBLE_EQ(h.hallucination, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(h.omission, 1.0 / 3.0);
}

TEST(ScoreReports, GroundTruthAgainstItself) {
  Vocabulary v(14);
  DataConfig cfg;
  cfg.n_samples = 300;
  const auto d = generate_dataset(v, cfg, 6);
  std::vector<TokenIds> refs;
  for (const auto& s : d.test) refs.push_back(s.report);
  const auto r = score_reports(v, refs, refs);
  EXPECT_EQ(r.ce_precision, 1.0);
  EXPECT_EQ(r.ce_recall, 1.0);
  EXPECT_EQ(r.ce_f1, 1.0);
  EXPECT_EQ(r.rouge_l, 1.0);
  EXPECT_EQ(r.hallucination_rate, 0.0);
  EXPECT_EQ(r.per_category.size(), 14u);
}

TEST(MetricTable, MacroRowIsMeanOfCategoryRows) {
  EvalReport r;
  const auto ce = clinical_efficacy(kHandPred, kHandTruth, {"alpha", "beta"});
  r.ce_precision = ce.precision;
  r.ce_recall = ce.recall;
  r.ce_f1 = ce.f1;
  r.per_category = ce.per_category;
  std::ostringstream os;
  write_metric_table(os, r);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "category,P,R,F1,TP,FP,FN");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2][0], "macro");
  for (int col = 1; col <= 3; ++col) {
    EXPECT_NEAR(std::stod(rows[2][col]), (std::stod(rows[0][col]) + std::stod(rows[1][col])) / 2, 1e-9);
  }
}

}  // namespace
}  // namespace lead
