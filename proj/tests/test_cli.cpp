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


// End-to-end runs of the lead_cli binary on a tiny three-category task.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lead/checkpoint.hpp"
#include "lead/io.hpp"
#include "test_util.hpp"

namespace lead {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

const char* const kTinyConfig = R"(# three categories, one layer
seed = 11
model.d_model = 16
model.n_layers = 1
model.n_heads = 2
model.d_ff = 32
model.max_seq_len = 28
model.patch_size = 4
model.image_size = 8
model.n_categories = 3
model.lora_rank = 2
model.lora_alpha = 4
model.d_vision = 16
model.vision_layers = 1
model.vision_heads = 2
model.d_exp = 4
model.expert_hidden = 8
model.injection_mode = layer_gate
data.n_samples = 50
data.pretrain_size = 40
data.heldout_size = 10
train.epochs = 1
train.batch_size = 8
pretrain.epochs = 1
pretrain.batch_size = 8
)";

struct Outcome {
  int code = -1;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  TempDir dir{"cli"};

  void SetUp() override { std::ofstream(dir.str("tiny.cfg")) << kTinyConfig; }

  std::string cfg() const { return dir.str("tiny.cfg"); }

  Outcome run(const std::string& args) const {
    const std::string err = dir.str("stderr.txt");
    const std::string cmd = std::string(LEAD_CLI_PATH) + " " + args + " > " + dir.str("stdout.txt") + " 2> " + err;
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  // gen-data into <name>/.
  fs::path gen(const std::string& name, const std::string& extra = "") const {
    const fs::path out = dir.path() / name;
    fs::create_directories(out);
    const auto r = run("gen-data --config " + cfg() + " --out " + out.string() + " " + extra);
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  fs::path pretrain(const fs::path& data, const std::string& name = "pre") const {
    const fs::path out = dir.path() / name;
    const auto r = run("train --phase pretrain --config " + cfg() + " --data " + (data / "corpus.txt").string() +
                       " --heldout " + (data / "heldout.txt").string() + " --out " + out.string());
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  fs::path finetune(const fs::path& data, const fs::path& pre, const std::string& name,
                    const std::string& extra = "") const {
    const fs::path out = dir.path() / name;
    const auto r = run("train --phase finetune --config " + cfg() + " --data " + data.string() + " --init " +
                       (pre / "model.ckpt").string() + " --out " + out.string() + " " + extra);
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }
};

// ---- gen-data ----

TEST_F(Cli, GenDataWritesSevenOneTwoSplits) {
  const auto out = gen("data");
  EXPECT_EQ(lines(slurp(out / "train.jsonl")).size(), 35u);
  EXPECT_EQ(lines(slurp(out / "val.jsonl")).size(), 5u);
  EXPECT_EQ(lines(slurp(out / "test.jsonl")).size(), 10u);
  EXPECT_EQ(lines(slurp(out / "corpus.txt")).size(), 40u);
  EXPECT_EQ(lines(slurp(out / "heldout.txt")).size(), 10u);
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "gen-data");
  EXPECT_EQ(manifest.at("seed"), 11);
  EXPECT_EQ(manifest.at("outputs").at(0), "train.jsonl (35 samples)");
}

TEST_F(Cli, GenDataRerunIsByteIdentical) {
  const auto a = gen("a");
  const auto b = gen("b");
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "corpus.txt", "heldout.txt"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto c = gen("c", "--seed 12");
  EXPECT_NE(slurp(a / "train.jsonl"), slurp(c / "train.jsonl"));
}

TEST_F(Cli, RatioSumAboveOneIsConfigError) {
  const auto r = run("gen-data --config " + cfg() + " --out " + dir.str("x") + " --override data.ratios=0.7,0.2,0.2");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data.ratios"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownKeyIsConfigError) {
  const auto r = run("gen-data --config " + cfg() + " --out " + dir.str("x") + " --override model.d_modle=8");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.d_modle"), std::string::npos) << r.err;
}

TEST_F(Cli, InvalidFieldIsNamed) {
  const auto r = run("gen-data --config " + cfg() + " --out " + dir.str("x") + " --override model.n_heads=3");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.n_heads"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingConfigFileExitsThree) {
  EXPECT_EQ(run("gen-data --config " + dir.str("nope.cfg") + " --out " + dir.str("x")).code, 3);
}

TEST_F(Cli, BadFlagsExitTwo) {
  EXPECT_EQ(run("gen-data --bogus").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --config " + cfg()).code, 2);  // --phase and --data required
}

// ---- train ----

TEST_F(Cli, PretrainRejectsImageDataset) {
  const auto data = gen("data");
  const auto r = run("train --phase pretrain --config " + cfg() + " --data " + (data / "train.jsonl").string() +
                     " --out " + dir.str("pre"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("text corpus"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownPhaseIsConfigError) {
  const auto data = gen("data");
  EXPECT_EQ(run("train --phase warmup --config " + cfg() + " --data " + data.string() + " --out " + dir.str("o")).code,
            2);
}

TEST_F(Cli, MissingInputsExitThree) {
  const auto data = gen("data");
  EXPECT_EQ(run("train --phase pretrain --config " + cfg() + " --data " + dir.str("none.txt") + " --out " +
                dir.str("o"))
                .code,
            3);
  EXPECT_EQ(run("train --phase finetune --config " + cfg() + " --data " + data.string() + " --init " +
                dir.str("none.ckpt") + " --out " + dir.str("o"))
                .code,
            3);
}

TEST_F(Cli, PretrainWritesCheckpointLogAndPerplexity) {
  const auto data = gen("data");
  const auto pre = pretrain(data);
  const auto ck = load_checkpoint((pre / "model.ckpt").string());
  EXPECT_EQ(ck.config.injection_mode, InjectionMode::kNone);
  EXPECT_EQ(lines(slurp(pre / "train_log.jsonl")).size(), 5u);  // 40 reports, batch 8
  const auto ppl = lines(slurp(pre / "perplexity.csv"));
  ASSERT_EQ(ppl.size(), 3u);
  EXPECT_EQ(ppl[0], "epoch,heldout_perplexity");
  EXPECT_EQ(nlohmann::json::parse(slurp(pre / "manifest.json")).at("command"), "train pretrain");
}

TEST_F(Cli, FinetuneLogsComposedLossAndRepeatsExactly) {
  const auto data = gen("data");
  const auto pre = pretrain(data);
  const auto a = finetune(data, pre, "ft_a");
  const auto b = finetune(data, pre, "ft_b");
  const auto log = lines(slurp(a / "train_log.jsonl"));
  ASSERT_EQ(log.size(), 5u);  // 35 samples, batch 8
  for (const auto& l : log) {
    const auto j = nlohmann::json::parse(l);
    for (const char* k : {"step", "lr", "l_gen", "l_cls", "total"}) EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(slurp(a / "train_log.jsonl"), slurp(b / "train_log.jsonl"));
  EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));
}

TEST_F(Cli, DivergentFinetuneExitsFourWithStep) {
  const auto data = gen("data");
  const auto pre = pretrain(data);
  const auto r = run("train --phase finetune --config " + cfg() + " --data " + data.string() + " --init " +
                     (pre / "model.ckpt").string() + " --out " + dir.str("ft") +
                     " --override train.peak_lr=1e30 train.warmup_fraction=0");
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

// ---- eval ----

TEST_F(Cli, EvalIsRepeatableAndSelfConsistent) {
  const auto data = gen("data");
  const auto ft = finetune(data, pretrain(data), "ft");
  const std::string ck = (ft / "model.ckpt").string();
  ASSERT_EQ(run("eval --config " + cfg() + " --checkpoint " + ck + " --data " + data.string() + " --out " +
                dir.str("e1"))
                .code,
            0);
  ASSERT_EQ(run("eval --config " + cfg() + " --checkpoint " + ck + " --data " + data.string() + " --out " +
                dir.str("e2"))
                .code,
            0);
  for (const char* f : {"metrics.csv", "summary.csv", "generations.jsonl"}) {
    EXPECT_EQ(slurp(dir.path() / "e1" / f), slurp(dir.path() / "e2" / f)) << f;
  }

  // Label columns follow from the generated text.
  const Vocabulary vocab(3);
  const auto gens = lines(slurp(dir.path() / "e1" / "generations.jsonl"));
  ASSERT_EQ(gens.size(), 10u);
  for (const auto& l : gens) {
    const auto j = nlohmann::json::parse(l);
    const auto labels = extract_labels(vocab, vocab.encode(j.at("generated").get<std::string>())).labels;
    EXPECT_EQ(j.at("extracted_labels").get<Labels>(), labels);
  }

  // Macro row is the mean of the category rows.
  const auto table = lines(slurp(dir.path() / "e1" / "metrics.csv"));
  ASSERT_EQ(table.size(), 5u);
  EXPECT_EQ(table[0], "category,P,R,F1,TP,FP,FN");
  const auto macro = fields(table[4]);
  ASSERT_EQ(macro[0], "macro");
  for (std::size_t col = 1; col <= 3; ++col) {
    double mean = 0.0;
    for (std::size_t row = 1; row <= 3; ++row) mean += std::stod(fields(table[row])[col]) / 3.0;
    EXPECT_NEAR(std::stod(macro[col]), mean, 1e-9) << table[0];
  }
}

TEST_F(Cli, IncompatibleCheckpointExitsFiveListingMismatches) {
  const auto data = gen("data");
  const auto pre = pretrain(data);
  const auto r = run("eval --config " + cfg() + " --checkpoint " + (pre / "model.ckpt").string() + " --data " +
                     data.string() + " --out " + dir.str("e") + " --override model.d_ff=24");
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("shape"), std::string::npos) << r.err;

  std::ofstream(dir.str("junk.ckpt")) << "not a checkpoint";
  EXPECT_EQ(run("eval --config " + cfg() + " --checkpoint " + dir.str("junk.ckpt") + " --data " + data.string() +
                " --out " + dir.str("e"))
                .code,
            5);
}

// ---- ablate ----

TEST_F(Cli, AblateEmitsRowsAndOneSignTestLine) {
  const auto data = gen("data");
  const auto pre = pretrain(data);
  const auto r = run("ablate --config " + cfg() + " --checkpoint " + (pre / "model.ckpt").string() + " --data " +
                     data.string() + " --modes none,layer_gate --seeds 1,2 --out " + dir.str("ab"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir.path() / "ab" / "ablation.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "mode,seed,R-L,CIDEr,P,R,F1,hallucination_rate");
  const auto summary = lines(slurp(dir.path() / "ab" / "summary.csv"));
  std::size_t sign_lines = 0;
  for (const auto& l : summary) {
    const auto f = fields(l);
    if (f[0] != "sign_test") continue;
    ++sign_lines;
    ASSERT_GE(f.size(), 6u);
    const int wins = std::stoi(f[3]);
    EXPECT_GE(wins, 0);
    EXPECT_LE(wins, 2);
    EXPECT_EQ(f[5], "2");
  }
  EXPECT_EQ(sign_lines, 1u);
}

TEST_F(Cli, AblateNeedsTwoSeeds) {
  const auto data = gen("data");
  const auto pre = pretrain(data);
  const auto r = run("ablate --config " + cfg() + " --checkpoint " + (pre / "model.ckpt").string() + " --data " +
                     data.string() + " --seeds 1 --out " + dir.str("ab"));
  EXPECT_EQ(r.code, 2);
}

// ---- inspect-gates ----

TEST_F(Cli, InspectGatesCoversEveryLayerAndPosition) {
  const auto data = gen("data");
  const auto ft = finetune(data, pretrain(data), "ft");
  const Vocabulary vocab(3);
  const auto test = load_dataset(vocab, (data / "test.jsonl").string());
  const auto r = run("inspect-gates --config " + cfg() + " --checkpoint " + (ft / "model.ckpt").string() +
                     " --data " + data.string() + " --sample " + std::to_string(test[0].id) + " --out " +
                     dir.str("g"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir.path() / "g" / "gates.csv"));
  EXPECT_EQ(rows[0], "layer,position,mean_gate,max_gate,min_gate,input,target");
  EXPECT_EQ(rows.size() - 1, 1 * (test[0].report.size() + 1));  // n_layers x (BOS + report)
}

TEST_F(Cli, ClosedGatesReportNearZero) {
  const auto data = gen("data");
  auto c = ModelConfig::read(FlatConfig::parse(kTinyConfig));
  c.vocab_size = Vocabulary(3).size();
  c.n_layers = 2;
  c.gate_bias_init = -20.0;
  LeadModel<float> m(c, 1);
  save_checkpoint(dir.str("closed.ckpt"), snapshot(c, m.params()));
  const Vocabulary vocab(3);
  const auto test = load_dataset(vocab, (data / "test.jsonl").string());
  const auto r = run("inspect-gates --config " + cfg() + " --checkpoint " + dir.str("closed.ckpt") + " --data " +
                     data.string() + " --sample " + std::to_string(test[1].id) + " --out " + dir.str("g") +
                     " --override model.n_layers=2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir.path() / "g" / "gates.csv"));
  ASSERT_EQ(rows.size() - 1, 2 * (test[1].report.size() + 1));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(std::stod(fields(rows[i])[2]), 1e-6) << rows[i];
}

TEST_F(Cli, InspectGatesUnknownSampleExitsTwo) {
  const auto data = gen("data");
  const auto ft = finetune(data, pretrain(data), "ft");
  const auto r = run("inspect-gates --config " + cfg() + " --checkpoint " + (ft / "model.ckpt").string() +
                     " --data " + data.string() + " --sample 999999 --out " + dir.str("g"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("999999"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace lead
