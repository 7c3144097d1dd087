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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lead/errors.hpp"
#include "lead/model.hpp"
#include "lead/synthdata.hpp"
#include "lead/trainer.hpp"

namespace lead {

/// Missing or unreadable input file.
class MissingFileError : public Error {
 public:
  using Error::Error;
};

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Writes through a sibling temporary file and a rename, so readers never see
/// a partial file.
inline void write_text_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    f << content;
    if (!f) throw Error("failed writing " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string dataset_jsonl(const Vocabulary& vocab, const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["labels"] = s.labels;
    j["report"] = vocab.decode(s.report);
    j["image_seed"] = s.image_seed;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<Sample> load_dataset(const Vocabulary& vocab, const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::uint64_t>();
      s.labels = j.at("labels").get<Labels>();
      s.report = vocab.encode(j.at("report").get<std::string>());
      s.image_seed = j.at("image_seed").get<std::uint64_t>();
      if (s.labels.size() != vocab.n_categories()) throw ConfigError("wrong number of labels");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": not an image dataset record (" + e.what() + ")");
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError(path + ": dataset is empty");
  return out;
}

/// Text corpus: one report per line.
inline std::string corpus_text(const Vocabulary& vocab, const std::vector<TokenIds>& corpus) {
  std::string out;
  for (const auto& r : corpus) out += vocab.decode(r) + "\n";
  return out;
}

/// Reads a text corpus; a JSON record on the first line means the file is an
/// image dataset instead, which is a configuration error.
inline std::vector<TokenIds> load_corpus(const Vocabulary& vocab, const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<TokenIds> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '{') throw ConfigError(path + " holds image records; pretraining needs a text corpus");
    auto ids = vocab.encode(line);
    if (std::find(ids.begin(), ids.end(), kUnk) != ids.end()) {
      throw ConfigError(path + ": unknown word in line '" + line + "'");
    }
    out.push_back(std::move(ids));
  }
  if (out.empty()) throw ConfigError(path + ": corpus is empty");
  return out;
}

inline std::string generations_jsonl(const Vocabulary& vocab, const std::vector<Generation>& gens) {
  std::string out;
  for (const auto& g : gens) {
    nlohmann::ordered_json j;
    j["id"] = g.id;
    j["generated"] = vocab.decode(g.tokens);
    j["extracted_labels"] = g.predicted;
    j["truth_labels"] = g.truth;
    out += j.dump() + "\n";
  }
  return out;
}

struct GateRow {
  std::size_t layer = 0, position = 0;
  double mean = 0.0, max = 0.0, min = 0.0;
  int input = 0, target = 0;
};

/// Gate statistics over the model width for every (layer, position) of the
/// teacher-forced reference report.
template <class T>
std::vector<GateRow> gate_stats(const LeadModel<T>& m, const Sample& s) {
  if (!has_gates(m.mode())) throw ConfigError(std::string("mode ") + to_string(m.mode()) + " has no gates");
  NoGradGuard no_grad;
  const auto [in, target] = lm_pair(s.report);
  const auto img = render_image(s.labels, s.image_seed, m.config().image_size, m.config().patch_size);
  const auto out = m.forward(std::span<const float>(img), in);
  std::vector<GateRow> rows;
  for (std::size_t l = 0; l < out.gates.size(); ++l) {
    const auto& g = out.gates[l];
    const std::size_t d = g.dim(1);
    for (std::size_t t = 0; t < g.dim(0); ++t) {
      GateRow r{l, t, 0.0, -1.0, 2.0, in[t], target[t]};
      for (std::size_t j = 0; j < d; ++j) {
        const double v = g.at(t, j);
        r.mean += v;
        r.max = std::max(r.max, v);
        r.min = std::min(r.min, v);
      }
      r.mean /= static_cast<double>(d);
      rows.push_back(r);
    }
  }
  return rows;
}

inline std::string gate_csv(const Vocabulary& vocab, const std::vector<GateRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "layer,position,mean_gate,max_gate,min_gate,input,target\n";
  for (const auto& r : rows) {
    os << r.layer << ',' << r.position << ',' << r.mean << ',' << r.max << ',' << r.min << ',' << vocab.word(r.input)
       << ',' << vocab.word(r.target) << '\n';
  }
  return os.str();
}

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::string config;  // resolved flat config
  std::vector<std::string> inputs, outputs;
  std::uint64_t seed = 0;
  double duration_s = 0.0;

  std::string json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["tool_version"] = kToolVersion;
    j["duration_s"] = duration_s;
    return j.dump(2) + "\n";
  }
};

}  // namespace lead
