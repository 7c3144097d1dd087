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


// Command-line driver: data generation, training, evaluation, ablation and
// gate inspection. Exit codes: 0 ok, 2 configuration, 3 missing input,
// 4 numeric failure, 5 checkpoint mismatch.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lead/checkpoint.hpp"
#include "lead/io.hpp"
#include "lead/trainer.hpp"

namespace fs = std::filesystem;
using namespace lead;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Flat key=value configuration file");
  cmd->add_option("--seed", c.seed, "Master seed (overrides the seed key)");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--override", c.overrides, "key=value, applied after the config file")->take_all();
}

// Everything a command may read, resolved once so typos surface as errors.
struct Resolved {
  FlatConfig flat;
  std::uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  BiasSpec bias;
  TrainConfig train, pretrain;
  std::size_t heldout_size = 500;
  std::size_t probe_prompts = 10000;
  std::string snapshot;
};

TrainConfig pretrain_defaults() {
  TrainConfig t;
  t.epochs = 3;
  t.peak_lr = 1e-3;
  t.select_best = false;
  return t;
}

Resolved resolve(const Common& c, const std::optional<ModelConfig>& base_model = std::nullopt) {
  Resolved r;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw MissingFileError("config file not found: " + c.config_path);
    r.flat = FlatConfig::load(c.config_path);
  }
  for (const auto& o : c.overrides) r.flat.set_assignment(o);
  if (c.seed) r.flat.set("seed", std::to_string(*c.seed));
  r.seed = r.flat.get_int<std::uint64_t>("seed", 0);
  r.model = ModelConfig::read(r.flat, base_model.value_or(ModelConfig()));
  if (r.model.vocab_size == 0) r.model.vocab_size = Vocabulary(r.model.n_categories).size();
  r.data = DataConfig::read(r.flat);
  r.bias = BiasSpec::read(r.flat, r.model.n_categories);
  r.train = TrainConfig::read(r.flat, "train");
  r.pretrain = TrainConfig::read(r.flat, "pretrain", pretrain_defaults());
  r.heldout_size = r.flat.get_int("data.heldout_size", r.heldout_size);
  r.probe_prompts = r.flat.get_int("eval.probe_prompts", r.probe_prompts);
  if (const auto bad = r.flat.unused(); !bad.empty()) {
    std::string msg = "unknown configuration keys:";
    for (const auto& k : bad) msg += "\n  " + k;
    throw ConfigError(msg);
  }
  if (!r.train.seed) r.train.seed = r.seed;
  if (!r.pretrain.seed) r.pretrain.seed = r.seed;
  r.model.validate();
  r.data.validate();
  r.train.validate();
  r.pretrain.validate();

  FlatConfig snap;
  snap.set("seed", std::to_string(r.seed));
  r.model.write(snap);
  r.data.write(snap);
  snap.set("data.heldout_size", std::to_string(r.heldout_size));
  snap.set("eval.probe_prompts", std::to_string(r.probe_prompts));
  r.train.write(snap, "train");
  r.pretrain.write(snap, "pretrain");
  r.snapshot = snap.serialize() + r.bias.serialize();
  return r;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing --") + what);
  if (!fs::exists(path)) throw MissingFileError(std::string(what) + " not found: " + path);
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void write_manifest(const std::string& out, RunManifest m, const Timer& t) {
  m.duration_s = t.seconds();
  write_text_atomic((fs::path(out) / "manifest.json").string(), m.json());
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

int cmd_gen_data(const Common& c) {
  Timer timer;
  const auto r = resolve(c);
  const Vocabulary vocab(r.model.n_categories);
  r.bias.validate(r.data.presence_rate);
  const auto splits = generate_dataset(vocab, r.data, r.seed);
  const auto corpus = build_biased_pretrain_corpus(vocab, r.bias, r.data.pretrain_size, r.seed, r.data.presence_rate);
  const auto heldout = build_biased_pretrain_corpus(vocab, r.bias, r.heldout_size, derive_seed(r.seed, "heldout"),
                                                    r.data.presence_rate);
  RunManifest m{"gen-data", r.snapshot, {}, {}, r.seed};
  const std::pair<const char*, const std::vector<Sample>*> files[] = {
      {"train.jsonl", &splits.train}, {"val.jsonl", &splits.val}, {"test.jsonl", &splits.test}};
  for (const auto& [name, samples] : files) {
    write_text_atomic(path_in(c.out, name), dataset_jsonl(vocab, *samples));
    m.outputs.push_back(std::string(name) + " (" + std::to_string(samples->size()) + " samples)");
  }
  write_text_atomic(path_in(c.out, "corpus.txt"), corpus_text(vocab, corpus));
  write_text_atomic(path_in(c.out, "heldout.txt"), corpus_text(vocab, heldout));
  m.outputs.push_back("corpus.txt (" + std::to_string(corpus.size()) + " reports)");
  m.outputs.push_back("heldout.txt (" + std::to_string(heldout.size()) + " reports)");
  write_manifest(c.out, m, timer);
  std::cout << "train " << splits.train.size() << " val " << splits.val.size() << " test " << splits.test.size()
            << " corpus " << corpus.size() << "\n";
  return 0;
}

std::string data_file(const std::string& data, const char* name) {
  return fs::is_directory(data) ? path_in(data, name) : data;
}

int cmd_train(const Common& c, const std::string& phase, const std::string& data, const std::string& init,
              const std::string& heldout) {
  Timer timer;
  const auto r = resolve(c);
  const Vocabulary vocab(r.model.n_categories);
  fs::create_directories(c.out);
  std::ofstream log(path_in(c.out, "train_log.jsonl"), std::ios::trunc);
  const StepLogger logger = [&log](const StepRecord& s) { write_step_jsonl(log, s); };
  RunManifest m{"train " + phase, r.snapshot, {}, {}, r.seed};
  if (phase == "pretrain") {
    const std::string path = data_file(data, "corpus.txt");
    require_file(path, "data");
    const auto corpus = load_corpus(vocab, path);
    std::vector<TokenIds> held;
    if (!heldout.empty()) {
      require_file(heldout, "heldout");
      held = load_corpus(vocab, heldout);
    }
    ModelConfig mc = r.model;
    mc.injection_mode = InjectionMode::kNone;
    LeadModel<float> model(mc, derive_seed(r.seed, "init"));
    const auto res = pretrain_lm(model, corpus, held, r.pretrain, logger);
    save_checkpoint(path_in(c.out, "model.ckpt"), snapshot(mc, model.params()));
    std::ostringstream ppl;
    ppl << "epoch,heldout_perplexity\n";
    for (std::size_t e = 0; e < res.heldout_ppl.size(); ++e) ppl << e << ',' << res.heldout_ppl[e] << '\n';
    write_text_atomic(path_in(c.out, "perplexity.csv"), ppl.str());
    m.inputs = {path};
    if (!heldout.empty()) m.inputs.push_back(heldout);
    m.outputs = {"model.ckpt", "train_log.jsonl", "perplexity.csv"};
    std::cout << "pretrained " << res.steps << " steps, final loss " << res.last.total << "\n";
  } else if (phase == "finetune") {
    const std::string train_path = data_file(data, "train.jsonl");
    require_file(train_path, "data");
    require_file(init, "init");
    const auto train = load_dataset(vocab, train_path);
    std::vector<Sample> val;
    const std::string val_path = data_file(data, "val.jsonl");
    if (fs::is_directory(data) && fs::exists(val_path)) val = load_dataset(vocab, val_path);
    const auto pre = load_checkpoint(init);
    auto model = model_from_pretrained<float>(pre, r.model, r.train.seed);
    const auto res = finetune(*model, vocab, train, val, r.train, logger);
    save_checkpoint(path_in(c.out, "model.ckpt"), snapshot(r.model, model->params()));
    m.inputs = {train_path, init};
    if (!val.empty()) m.inputs.push_back(val_path);
    m.outputs = {"model.ckpt", "train_log.jsonl"};
    std::cout << "finetuned " << res.steps << " steps, final total " << res.last.total;
    if (res.best_epoch) std::cout << ", best epoch " << res.best_epoch;
    std::cout << "\n";
  } else {
    throw ConfigError("--phase must be pretrain or finetune, got '" + phase + "'");
  }
  log.close();
  write_manifest(c.out, m, timer);
  return 0;
}

// Model configuration: the checkpoint's, with explicit model.* keys on top.
// A checkpoint that then fails to fit is a mismatch (exit 5).
std::unique_ptr<LeadModel<float>> load_model(const Common& c, const std::string& ckpt_path, Resolved& r) {
  require_file(ckpt_path, "checkpoint");
  const auto ck = load_checkpoint(ckpt_path);
  r = resolve(c, ck.config);
  auto model = std::make_unique<LeadModel<float>>(r.model, 0);
  restore(model->params(), ck);
  return model;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& data) {
  Timer timer;
  Resolved r;
  auto model = load_model(c, ckpt, r);
  const Vocabulary vocab(r.model.n_categories);
  const std::string path = data_file(data, "test.jsonl");
  require_file(path, "data");
  const auto samples = load_dataset(vocab, path);
  const auto ev = evaluate(*model, vocab, samples, r.train.max_new_tokens);
  std::ostringstream table;
  write_metric_table(table, ev.report);
  std::ostringstream summary;
  summary.precision(10);
  summary << "metric,value\nrouge_l," << ev.report.rouge_l << "\ncider," << ev.report.cider << "\nce_precision,"
          << ev.report.ce_precision << "\nce_recall," << ev.report.ce_recall << "\nce_f1," << ev.report.ce_f1
          << "\nhallucination_rate," << ev.report.hallucination_rate << "\nomission_rate," << ev.report.omission_rate
          << "\n";
  write_text_atomic(path_in(c.out, "metrics.csv"), table.str());
  write_text_atomic(path_in(c.out, "summary.csv"), summary.str());
  write_text_atomic(path_in(c.out, "generations.jsonl"), generations_jsonl(vocab, ev.generations));
  write_manifest(c.out, {"eval", r.snapshot, {ckpt, path}, {"metrics.csv", "summary.csv", "generations.jsonl"}, r.seed},
                 timer);
  std::cout << summary.str();
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = FlatConfig::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_ablate(const Common& c, const std::string& ckpt, const std::string& data, const std::string& modes_s,
               const std::string& seeds_s) {
  Timer timer;
  const auto r = resolve(c);
  const Vocabulary vocab(r.model.n_categories);
  std::vector<InjectionMode> modes;
  for (const auto& s : split_list(modes_s)) modes.push_back(parse_injection_mode(s));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_s)) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + s + "' is not a seed");
    }
  }
  if (modes.empty()) throw ConfigError("--modes is empty");
  if (seeds.size() < 2) throw ConfigError("--seeds needs at least two seeds for the sign test");
  require_file(ckpt, "checkpoint");
  if (!fs::is_directory(data)) throw MissingFileError("data directory not found: " + data);
  DatasetSplits splits;
  for (auto [name, dst] : {std::pair{"train.jsonl", &splits.train}, std::pair{"val.jsonl", &splits.val},
                           std::pair{"test.jsonl", &splits.test}}) {
    require_file(path_in(data, name), "data");
    *dst = load_dataset(vocab, path_in(data, name));
  }
  const auto pre = load_checkpoint(ckpt);
  const auto table = run_ablation<float>(pre, r.model, vocab, splits, modes, seeds, r.train, [](const AblationProgress& p) {
    std::cerr << to_string(p.mode) << " seed " << p.seed << ": F1 " << p.report->ce_f1 << "\n";
  });
  std::ostringstream rows, summary;
  write_ablation_csv(rows, table);
  write_ablation_summary(summary, table, modes);
  write_text_atomic(path_in(c.out, "ablation.csv"), rows.str());
  write_text_atomic(path_in(c.out, "summary.csv"), summary.str());
  write_manifest(c.out, {"ablate", r.snapshot, {ckpt, data}, {"ablation.csv", "summary.csv"}, r.seed}, timer);
  std::cout << summary.str();
  return 0;
}

int cmd_inspect_gates(const Common& c, const std::string& ckpt, const std::string& data, std::uint64_t sample_id) {
  Timer timer;
  Resolved r;
  auto model = load_model(c, ckpt, r);
  const Vocabulary vocab(r.model.n_categories);
  const std::string path = data_file(data, "test.jsonl");
  require_file(path, "data");
  const auto samples = load_dataset(vocab, path);
  const auto it = std::find_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.id == sample_id; });
  if (it == samples.end()) throw ConfigError("sample id " + std::to_string(sample_id) + " not in " + path);
  write_text_atomic(path_in(c.out, "gates.csv"), gate_csv(vocab, gate_stats(*model, *it)));
  write_manifest(c.out, {"inspect-gates", r.snapshot, {ckpt, path}, {"gates.csv"}, r.seed}, timer);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise expert-aligned decoding on synthetic report data"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Generate dataset splits and the biased text corpus");
  add_common(gen, common);

  std::string phase, data, init, heldout, ckpt, modes = "none,aux_only,shared_gate,layer_add,layer_gate",
                                                   seeds = "1,2,3,4,5";
  std::uint64_t sample_id = 0;
  auto* train = app.add_subcommand("train", "Pretrain the language model or fine-tune the full model");
  add_common(train, common);
  train->add_option("--phase", phase, "pretrain or finetune")->required();
  train->add_option("--data", data, "Corpus file (pretrain) or data directory (finetune)")->required();
  train->add_option("--init", init, "Pretrained checkpoint (finetune)");
  train->add_option("--heldout", heldout, "Held-out corpus for perplexity (pretrain)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  add_common(eval, common);
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--data", data, "Split file or data directory (test split)")->required();

  auto* ablate = app.add_subcommand("ablate", "Fine-tune and test every mode and seed");
  add_common(ablate, common);
  ablate->add_option("--checkpoint", ckpt, "Pretrained checkpoint")->required();
  ablate->add_option("--data", data, "Data directory")->required();
  ablate->add_option("--modes", modes, "Comma-separated injection modes");
  ablate->add_option("--seeds", seeds, "Comma-separated seeds");

  auto* gates = app.add_subcommand("inspect-gates", "Dump per-layer, per-position gate statistics");
  add_common(gates, common);
  gates->add_option("--checkpoint", ckpt)->required();
  gates->add_option("--data", data, "Split file or data directory (test split)")->required();
  gates->add_option("--sample", sample_id, "Sample id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common, phase, data, init, heldout);
    if (*eval) return cmd_eval(common, ckpt, data);
    if (*ablate) return cmd_ablate(common, ckpt, data, modes, seeds);
    if (*gates) return cmd_inspect_gates(common, ckpt, data, sample_id);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingFileError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
