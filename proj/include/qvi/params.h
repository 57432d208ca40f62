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

#ifndef QVI_PARAMS_H_
#define QVI_PARAMS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "qvi/tensor.h"

namespace qvi {

enum class InitKind {
  kZeros,
  kOnes,
  kNormal,             // N(0, scale^2)
  kXavierUniform,      // U(-a, a), a = sqrt(6 / (fan_in + fan_out))
  kIdentityPlusNoise,  // I + N(0, scale^2); square matrices only
};

struct Init {
  InitKind kind = InitKind::kZeros;
  double scale = 0.0;

  static Init Zeros() { return {InitKind::kZeros, 0.0}; }
  static Init Ones() { return {InitKind::kOnes, 0.0}; }
  static Init Normal(double stddev) { return {InitKind::kNormal, stddev}; }
  static Init Xavier() { return {InitKind::kXavierUniform, 0.0}; }
  static Init IdentityPlusNoise(double stddev) {
    return {InitKind::kIdentityPlusNoise, stddev};
  }
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Owns every learnable tensor of a model under a unique name.
//
// Each parameter is drawn from its own random stream keyed by
// (seed, name), so a parameter's initial value does not depend on which
// other parameters exist. Two models that share a parameter name and shape
// start from identical values for it.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  // Throws ContractError if `name` is already registered.
  Tensor Create(const std::string& name, Shape shape, Init init);

  const std::vector<NamedParam>& params() const { return params_; }
  // Throws ContractError if absent.
  Tensor Find(const std::string& name) const;
  bool Contains(const std::string& name) const;
  std::size_t NumScalars() const;
  void ZeroGrad();
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<NamedParam> params_;
};

}  // namespace qvi

#endif  // QVI_PARAMS_H_
