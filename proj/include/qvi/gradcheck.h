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

#ifndef QVI_GRADCHECK_H_
#define QVI_GRADCHECK_H_

#include <functional>
#include <span>
#include <string>

#include "qvi/graph.h"
#include "qvi/tensor.h"

namespace qvi {

// Builds a scalar loss on the given graph from tensors captured by the
// caller. Must be a pure function of those tensors' current values.
using LossFn = std::function<Tensor(Graph&)>;

struct GradcheckOptions {
  double eps = 1e-5;
  // Magnitudes below this are compared absolutely rather than relatively.
  double floor = 1e-6;
  // Added to the first analytic gradient entry; a negative control that
  // must make the check fail.
  double analytic_bias = 0.0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t num_checked = 0;
  // Location of the worst entry.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

// Compares the gradients from Graph::Backward against central differences
// (f(x+eps) - f(x-eps)) / 2eps for every element of every input.
//
// Relative error per element is |a - n| / max(|a|, |n|, floor).
// Inputs are restored to their original values on return; their grad
// buffers hold the analytic gradient.
GradcheckReport Gradcheck(const LossFn& f, std::span<Tensor> inputs,
                          const GradcheckOptions& options = {});

}  // namespace qvi

#endif  // QVI_GRADCHECK_H_
