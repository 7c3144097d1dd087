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

#include <stdexcept>
#include <string>
#include <vector>

namespace lead {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object in the wrong state (e.g. a consumed graph).
class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in a loss, gradient or numerical check.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not fit the model it is loaded into. Carries every
/// mismatch found, not just the first.
class CheckpointError : public Error {
 public:
  CheckpointError(const std::string& what, std::vector<std::string> mismatches)
      : Error(Join(what, mismatches)), mismatches_(std::move(mismatches)) {}

  const std::vector<std::string>& mismatches() const { return mismatches_; }

 private:
  static std::string Join(const std::string& what,
                          const std::vector<std::string>& items) {
    std::string out = what;
    for (const auto& m : items) out += "\n  " + m;
    return out;
  }

  std::vector<std::string> mismatches_;
};

}  // namespace lead
