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

// The `qvi` command line:
//
//   qvi <train|eval|gradcheck|ablate|synth> [--config PATH] [--seed N]
//       [--set section.key=value]...
//
// Exit codes: 0 success, 1 runtime failure (including a failed gradient
// check), 2 invalid configuration or usage, 3 training hit a non-finite
// value. QVI_OUT_DIR, when set, replaces output.dir as the root of run
// directories.

#ifndef QVI_CLI_H_
#define QVI_CLI_H_

#include <ostream>

namespace qvi {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitNonFinite = 3,
};

int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err);

}  // namespace qvi

#endif  // QVI_CLI_H_
