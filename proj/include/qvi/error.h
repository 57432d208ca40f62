// Copyright 2026 The QVI Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QVI_ERROR_H_
#define QVI_ERROR_H_

#include <stdexcept>
#include <string>

namespace qvi {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined by the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A softmax row with every position masked out.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

// Caller violated an API precondition (e.g. non-scalar loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Object used in the wrong lifecycle state (e.g. double backward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be processed (out-of-vocab id, empty text, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Invalid run configuration. `key()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Training produced a NaN/Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace qvi

#endif  // QVI_ERROR_H_
