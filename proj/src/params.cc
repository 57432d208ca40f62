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

#include "qvi/params.h"

#include <algorithm>
#include <cmath>

#include "qvi/error.h"
#include "qvi/rng.h"

namespace qvi {

Tensor ParamStore::Create(const std::string& name, Shape shape, Init init) {
  if (Contains(name)) {
    throw ContractError("parameter '" + name + "' registered twice");
  }
  Tensor t = Tensor::Zeros(shape, /*requires_grad=*/true);
  Rng rng = Rng::Derive(seed_, name);
  auto data = t.data();
  switch (init.kind) {
    case InitKind::kZeros:
      break;
    case InitKind::kOnes:
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case InitKind::kNormal:
      for (double& v : data) v = rng.Normal(0.0, init.scale);
      break;
    case InitKind::kXavierUniform: {
      const double fan_in = static_cast<double>(shape.front());
      const double fan_out = static_cast<double>(shape.back());
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : data) v = rng.Uniform(-a, a);
      break;
    }
    case InitKind::kIdentityPlusNoise: {
      if (shape.size() != 2 || shape[0] != shape[1]) {
        throw DimensionError("identity init needs a square matrix, got " +
                             ShapeString(shape));
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        const bool diag = i / shape[1] == i % shape[1];
        data[i] = (diag ? 1.0 : 0.0) + rng.Normal(0.0, init.scale);
      }
      break;
    }
  }
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::Find(const std::string& name) const {
  for (const NamedParam& p : params_)
    if (p.name == name) return p.tensor;
  throw ContractError("no parameter named '" + name + "'");
}

bool ParamStore::Contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const NamedParam& p) { return p.name == name; });
}

std::size_t ParamStore::NumScalars() const {
  std::size_t n = 0;
  for (const NamedParam& p : params_) n += p.tensor.size();
  return n;
}

void ParamStore::ZeroGrad() {
  for (NamedParam& p : params_) p.tensor.ZeroGrad();
}

}  // namespace qvi
