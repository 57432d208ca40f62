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

#include "qvi/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "qvi/error.h"

namespace qvi {

GradcheckReport Gradcheck(const LossFn& f, std::span<Tensor> inputs,
                          const GradcheckOptions& options) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.ClearGrad();
  }
  {
    Graph graph;
    Tensor loss = f(graph);
    graph.Backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs) {
    auto g = t.mutable_grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  if (!analytic.empty() && !analytic[0].empty()) {
    analytic[0][0] += options.analytic_bias;
  }

  auto evaluate = [&f]() {
    Graph graph(/*record=*/false);
    return f(graph).item();
  };

  GradcheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto x = inputs[t].data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + options.eps;
      const double plus = evaluate();
      x[i] = saved - options.eps;
      const double minus = evaluate();
      x[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = abs_err / denom;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_input = t;
        report.worst_index = i;
      }
      ++report.num_checked;
    }
  }
  return report;
}

}  // namespace qvi
