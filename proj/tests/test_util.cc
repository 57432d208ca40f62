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

#include "test_util.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "qvi/error.h"

namespace qvi::testing {

Tensor RandomTensor(const Shape& shape, Rng& rng, double lo, double hi,
                    bool requires_grad) {
  Tensor t = Tensor::Zeros(shape, requires_grad);
  for (double& v : t.data()) v = rng.Uniform(lo, hi);
  return t;
}

double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("MaxAbsDiff shape mismatch " +
                         ShapeString(a.shape()) + " vs " +
                         ShapeString(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor WeightedSum(Graph& g, const Tensor& x, const Tensor& weights) {
  return g.SumAll(g.Mul(x, weights));
}

std::filesystem::path ScratchDir(std::string_view tag) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "qvi-tests" /
                 (std::string(tag) + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace qvi::testing
