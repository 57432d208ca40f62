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

// Fixed battery of gradient checks over ops, attention variants and models.
// Inputs are drawn from [-1, 1] with every dimension at most 8.

#ifndef QVI_GRADCHECK_SUITE_H_
#define QVI_GRADCHECK_SUITE_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qvi/gradcheck.h"

namespace qvi {

enum class GradcheckScope { kOps, kAttention, kModels, kAll };
std::string_view ToString(GradcheckScope v);
GradcheckScope ParseGradcheckScope(std::string_view s);

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckCase {
  std::string name;  // e.g. "attention/dot/qvi/scalar"
  GradcheckReport report;
  bool passed = false;
};

struct GradcheckSuiteResult {
  std::vector<GradcheckCase> cases;
  bool passed() const;
  double max_rel_error() const;
};

// Same scope, seed and options give bit-identical reports.
GradcheckSuiteResult RunGradcheckSuite(GradcheckScope scope, std::uint64_t seed,
                                       const GradcheckOptions& options = {},
                                       double tolerance = kGradcheckTolerance);

}  // namespace qvi

#endif  // QVI_GRADCHECK_SUITE_H_
