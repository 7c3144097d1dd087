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
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lead/config.hpp"
#include "lead/errors.hpp"
#include "lead/params.hpp"

namespace lead {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'L', 'E', 'A', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

template <class T>
Checkpoint snapshot(const ModelConfig& cfg, const ParamStore<T>& params) {
  Checkpoint ck{cfg, {}};
  for (const auto& p : params.all()) {
    StoredTensor t{p.name, p.tensor.shape(), {}};
    t.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  void bytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw CheckpointError("truncated checkpoint " + path_, {});
    }
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::size_t limit = 1 << 20) {
    const auto n = u32();
    if (n > limit) throw CheckpointError("corrupt string length in " + path_, {});
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace detail

/// Writes to a temporary file, then renames over `path`.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + path, {});
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_str(os, ck.config.serialize());
    detail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
      detail::put_str(os, t.name);
      detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) detail::put_u64(os, d);
      os.write(reinterpret_cast<const char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!os) throw CheckpointError("failed writing checkpoint " + path, {});
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint " + path, {});
  detail::Reader r(is, path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError(path + " is not a checkpoint", {});
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(v), {});
  }
  Checkpoint ck;
  ck.config = ModelConfig::read(FlatConfig::parse(r.str()));
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    StoredTensor t;
    t.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError(path + ": corrupt rank for " + t.name, {});
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u64());
    const auto count = numel_of(t.shape);
    if (count > (std::size_t{1} << 32)) throw CheckpointError(path + ": corrupt shape for " + t.name, {});
    t.values.resize(count);
    r.bytes(t.values.data(), count * sizeof(float));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Copies checkpoint tensors into `params`. Only parameters whose group passes
/// `select` are touched; each of those must exist in the checkpoint with the
/// same shape. With `strict`, the checkpoint may not hold selected tensors the
/// model lacks. All problems are collected before throwing.
template <class T>
void restore(ParamStore<T>& params, const Checkpoint& ck, const std::function<bool(ParamGroup)>& select = nullptr,
             bool strict = true) {
  std::vector<std::string> errs;
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  auto selected = [&](const std::string& name) {
    try {
      return !select || select(group_of(name));
    } catch (const ConfigError&) {
      return false;
    }
  };
  for (const auto& p : params.all()) {
    if (!selected(p.name)) continue;
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      errs.push_back(p.name + ": missing from checkpoint");
    } else if (it->second->shape != p.tensor.shape()) {
      errs.push_back(p.name + ": checkpoint shape " + shape_str(it->second->shape) + " vs model " +
                     shape_str(p.tensor.shape()));
    }
  }
  if (strict) {
    for (const auto& t : ck.tensors) {
      if (selected(t.name) && !params.contains(t.name)) errs.push_back(t.name + ": not a model parameter");
    }
  }
  if (!errs.empty()) throw CheckpointError("checkpoint does not fit the model:", errs);
  for (auto& p : params.all()) {
    if (!selected(p.name)) continue;
    const auto& src = by_name.at(p.name)->values;
    std::transform(src.begin(), src.end(), p.tensor.values().begin(), [](float v) { return static_cast<T>(v); });
  }
}

}  // namespace lead
